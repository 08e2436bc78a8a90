#pragma once

// Declarative network description: a DAG of typed layers in topological
// order. Architectures (StNet, TSN baseline, TXN, iTXN) are built as
// ModelGraphs; executor.hpp runs them, describe_* reports them.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "stnet/kernels.hpp"
#include "stnet/tensor.hpp"

namespace stnet {

enum class LayerKind {
  Input,
  Conv,
  BatchNorm,
  Relu,
  Add,
  Concat,
  GlobalPool,
  Pool,
  Linear,
  MergeTime,     // [B, T, C, H, W] -> [B*T, C, H, W]
  SplitTime,     // [B*T, C, H, W] -> [B, C, T, H, W]
  FoldTime,      // [B, C, T, H, W] -> [B*T, C, H, W]
  ToSequence,    // [B*T, C] -> [B, C, T]
  MeanOverTime,  // [B*T, K] -> [B, K]
  ResampleTime,  // [B, C, T_m] -> [B, C, T_common]
};

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Input;
  std::vector<std::string> inputs;
  std::string role;   // init/reporting category: stem, backbone, temporal, txn, classifier, ...
  std::string block;  // logical block the layer belongs to (e.g. "temporal3")

  // Conv / Pool / Input
  int rank = 0;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  int groups = 1;
  std::vector<int> kernel;  // also the pool window
  std::vector<int> stride;
  std::vector<int> padding;
  bool bias = false;
  kernels::PoolKind pool = kernels::PoolKind::Avg;

  // BatchNorm
  double eps = 1e-5;
  double momentum = 0.9;

  // Input: expected rank and which axis carries `in_channels`.
  int channel_axis = 1;

  // Concat
  int axis = 1;
};

struct ParamSpec {
  std::string name;
  Shape shape;
  bool trainable = true;
  std::int64_t numel() const { return shape_numel(shape); }
};

// Parameters owned by one layer, named "<layer>.<suffix>".
std::vector<ParamSpec> layer_params(const LayerSpec& layer);

class ModelGraph {
 public:
  ModelGraph() = default;
  explicit ModelGraph(std::string name) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }

  // Appends a layer; inputs must already exist.
  const LayerSpec& add(LayerSpec layer);
  void set_output(const std::string& name);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::string& output() const { return output_; }
  std::vector<std::string> input_names() const;

  std::vector<ParamSpec> param_specs() const;
  std::int64_t param_count() const;  // trainable scalars

  // Free-form build metadata (N, classes, temporal insertion points, ...).
  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  nlohmann::json to_json() const;
  static ModelGraph from_json(const nlohmann::json& j);

 private:
  std::string name_;
  std::vector<LayerSpec> layers_;
  std::string output_;
  nlohmann::json meta_ = nlohmann::json::object();
};

// Per-layer and per-block parameter report.
nlohmann::json describe_json(const ModelGraph& graph);
std::string describe_text(const ModelGraph& graph);

}  // namespace stnet
