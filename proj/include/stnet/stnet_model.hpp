#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "stnet/executor.hpp"
#include "stnet/fusion.hpp"
#include "stnet/graph.hpp"
#include "stnet/param_set.hpp"
#include "stnet/rng.hpp"
#include "stnet/sampling.hpp"

namespace stnet {

struct StageSpec {
  int blocks = 1;
  std::int64_t channels = 16;
  int stride = 1;
};

struct StemSpec {
  std::int64_t channels = 16;
  int kernel = 3;
  int stride = 2;
};

// Toy residual backbone. Stages are numbered from 1.
struct BackboneSpec {
  StemSpec stem;
  std::vector<StageSpec> stages{{1, 16, 1}, {1, 32, 2}, {1, 64, 2}, {1, 128, 2}};

  void validate() const;
};

// Conv3d(C_i -> C_i, (3,1,1), groups 1) -> BN3d -> ReLU after a stage.
struct TemporalBlockSpec {
  int insert_after_stage = 3;
  std::int64_t out_channels = 0;  // filled from the stage
};

struct StNetCfg {
  BackboneSpec backbone;
  std::int64_t n = 5;
  int num_classes = 4;
  std::vector<int> temporal_after{3, 4};
  // Adds the block input back after the ReLU.
  bool residual_temporal_block = false;
  TxnBlockCfg txn;
};

// Input "clips" [B, T, 3N, H, W] -> logits [B, K]. Any T >= 1.
ModelGraph build_stnet(const StNetCfg& cfg);

// Same backbone without temporal blocks and TXN head: per-segment linear
// classifier averaged over T.
ModelGraph build_tsn(const StNetCfg& cfg);

std::vector<TemporalBlockSpec> temporal_blocks(const ModelGraph& graph);

struct InitOptions {
  // Temporal (1-D/3-D, time kernel > 1) convs get every weight = 1/(3 C_in)
  // and zero bias; when false they get He-uniform like the 2-D layers.
  // Pointwise 1-D convs are always He-uniform.
  bool paper_temporal_init = true;
};

// Initializes every parameter of `graph`:
//   stem conv: a 3-channel 2-D kernel (from base2d "conv1.weight" or He-uniform)
//              inflated to 3N channels;
//   temporal 1-D/3-D convs: weights 1/(3 C_in), bias 0;
//   batch norms: gamma 1, beta 0, running mean 0, running var 1;
//   other 2-D convs: He-uniform (or the base2d value of the same name);
//   linear: U(-1/sqrt(D), 1/sqrt(D)), bias 0.
// Each parameter draws from its own stream keyed by name.
template <typename T>
ParamSet<T> init_params(const ModelGraph& graph, std::uint64_t seed, const ParamSet<T>* base2d = nullptr,
                        const InitOptions& opt = {});

template <typename T>
Tensor<T> forward_stnet(const ModelGraph& graph, ParamSet<T>& params, const SuperImageBatch<T>& batch, Mode mode);

template <typename T>
Tensor<T> tsn_baseline_forward(const ModelGraph& graph, ParamSet<T>& params, const SuperImageBatch<T>& batch,
                               Mode mode);

}  // namespace stnet
