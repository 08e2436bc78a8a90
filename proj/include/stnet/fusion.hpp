#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stnet/executor.hpp"
#include "stnet/graph.hpp"
#include "stnet/tensor.hpp"

namespace stnet {

enum class GroupsMode { Depthwise, Full };

struct TxnUnitCfg {
  std::int64_t out_channels = 32;
  int kernel_size = 3;
  GroupsMode groups_mode = GroupsMode::Depthwise;
};

// Temporal Xception encoder: [B, C_in, T] -> [B, C_out].
//   optional bottleneck: pointwise conv -> BN -> ReLU
//   each unit: ReLU(BN(pointwise(temporal(x)))) + projection(x)
//   head: global temporal max (or mean) pool
struct TxnBlockCfg {
  std::int64_t bottleneck_channels = 32;  // 0 disables the bottleneck
  std::vector<TxnUnitCfg> units{{32, 3, GroupsMode::Depthwise}, {32, 3, GroupsMode::Depthwise}};
  kernels::PoolKind head = kernels::PoolKind::Max;

  void validate() const;
  std::int64_t out_channels(std::int64_t in_channels) const;
};

// Appends a TXN encoder reading `input` ([B, in_channels, T]); layer names
// are prefixed with `prefix`. Returns the name of the pooled output layer.
std::string add_txn(ModelGraph& graph, const std::string& prefix, const std::string& input, std::int64_t in_channels,
                    const TxnBlockCfg& cfg, const std::string& role = "txn");

// Canonical modality roles, in the order branches are built.
const std::vector<std::string>& modality_roles();

// Modality name -> feature dimension d_m. Iteration is in name order.
using ModalityDims = std::map<std::string, std::int64_t>;

// Per-modality feature sequences, each [T_m, d_m].
struct ModalityBundle {
  std::map<std::string, Tensor<float>> sequences;

  ModalityDims dims() const;
  bool has(const std::string& m) const { return sequences.contains(m); }
};

// Bundle directory: manifest.json {modality: {T, d, file}} plus one f32
// little-endian [T, d] blob per modality.
void save_bundle(const ModalityBundle& bundle, const std::filesystem::path& dir);
ModalityBundle load_bundle(const std::filesystem::path& dir);

// Early branch: every modality resampled to the longest length, concatenated
// on channels, one TXN. Late branch: one TXN per modality. Classifier over the
// concatenation of all branch outputs. Inputs are named by modality, [B, d_m, T_m].
ModelGraph build_itxn(const ModalityDims& dims, const TxnBlockCfg& cfg, int num_classes);

// One modality -> TXN -> linear.
ModelGraph build_single_txn(const std::string& modality, std::int64_t dim, const TxnBlockCfg& cfg, int num_classes);

// Nearest-index resampling along time: out[t] = seq[floor(t * T_m / target)].
template <typename T>
Tensor<T> resample_sequence(const Tensor<T>& seq, std::int64_t target);

// Stacks the bundles' sequences into graph inputs [B, d_m, T_m]. Modalities
// whose lengths differ within the batch are resampled to the longest one.
// Throws ValidationError listing modalities the graph needs but a bundle lacks.
template <typename T>
InputMap<T> bundle_inputs(const std::vector<std::string>& modalities, const std::vector<const ModalityBundle*>& bundles);
template <typename T>
InputMap<T> bundle_inputs(const ModelGraph& graph, const std::vector<const ModalityBundle*>& bundles);

template <typename T>
Tensor<T> itxn_forward(const ModelGraph& graph, ParamSet<T>& params, const ModalityBundle& bundle, Mode mode);

std::string_view to_string(GroupsMode m);
GroupsMode parse_groups_mode(std::string_view s);

}  // namespace stnet
