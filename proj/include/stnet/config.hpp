#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "stnet/harness.hpp"
#include "stnet/stnet_model.hpp"
#include "stnet/synthdata.hpp"
#include "stnet/tensor.hpp"

namespace stnet {

// Full experiment description. Every field has a default; to_json echoes the
// resolved value of every field.
struct RunConfig {
  std::uint64_t seed = 0;
  DType dtype = DType::F32;
  std::int64_t n_frames = 5;
  std::int64_t t_train = 7;
  std::int64_t t_eval = 25;
  int workers = 1;
  int eval_batch = 32;

  // Model for train/eval/describe/gradcheck: stnet | tsn | itxn | txn:<modality>
  std::string model = "stnet";

  BackboneSpec backbone;
  std::vector<int> temporal_after{3, 4};
  bool residual_temporal_block = false;
  TxnBlockCfg txn;
  InitOptions init;
  FrameNormalization normalization;

  TemporalOrderCfg temporal_order;
  MultimodalXorCfg multimodal_xor;

  OptimCfg video_optim{0.01, 0.9, 1e-4, 12, 16, {9}, 0.1, 0};
  OptimCfg sequence_optim{0.01, 0.9, 1e-4, 30, 32, {20}, 0.1, 0};

  // Ensemble weights for single-modality models, by modality; missing = 1.
  std::map<std::string, double> ensemble_weights;

  StNetCfg stnet_cfg(int num_classes) const;
  bool video_model() const { return model == "stnet" || model == "tsn"; }
  void validate() const;
};

// Class count of the dataset the configured model trains on.
int config_num_classes(const RunConfig& cfg);
// Graph of cfg.model (or `model` when given).
ModelGraph build_model(const RunConfig& cfg, const std::string& model = "");

nlohmann::json config_to_json(const RunConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

}  // namespace stnet
