#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stnet/fusion.hpp"
#include "stnet/sampling.hpp"

namespace stnet {

// K classes, each a fixed permutation of `blocks` contiguous chunks of the
// same base frame sequence. A vertical bar moves left to right over the base
// sequence; its red/green tint encodes the chunk, its blue level the step
// inside the chunk.
struct TemporalOrderCfg {
  int classes = 4;
  std::int64_t frames = 35;
  std::int64_t height = 32;
  std::int64_t width = 32;
  double noise = 0.05;
  int train = 400;
  int test = 200;
  std::int64_t blocks = 7;
};

struct VideoSample {
  FrameSequence seq;
  int label = 0;
};

struct TemporalOrderData {
  TemporalOrderCfg cfg;
  std::vector<std::vector<std::int64_t>> permutations;  // class -> block order
  std::vector<VideoSample> train, test;
};

// Noise-free base sequence.
FrameSequence temporal_order_base(const TemporalOrderCfg& cfg);
// Frame indices of the base sequence in the order class `perm` shows them.
std::vector<std::int64_t> temporal_order_frames(const TemporalOrderCfg& cfg, const std::vector<std::int64_t>& perm);

TemporalOrderData gen_temporal_order(const TemporalOrderCfg& cfg, std::uint64_t seed, int workers = 1);

// Every modality carries one latent bit as the direction of a ramp on its
// first 4 channels. Modalities (in name order) are paired; the label is the
// binary number formed by the pairs' XORs (an odd leftover joins the last
// pair), so K = 2^(M/2). Each modality also carries a weak class cue: K
// channels holding cue * onehot(label) plus a per-sequence N(0, 1) offset.
// Remaining channels are noise. Each modality's length T_m is drawn once per
// dataset from [t_min, t_max].
struct MultimodalXorCfg {
  ModalityDims dims{{"rgb", 32}, {"flow_a", 32}, {"flow_b", 32}, {"audio", 16}};
  std::int64_t t_min = 8;
  std::int64_t t_max = 16;
  int train = 2000;
  int test = 2000;
  double amplitude = 1.0;
  double noise = 0.3;
  double cue = 0.7;
  double probe_limit = 0.60;
  int max_attempts = 5;

  int num_classes() const;
};

struct BundleSample {
  ModalityBundle bundle;
  int label = 0;
};

struct MultimodalXorData {
  MultimodalXorCfg cfg;
  int num_classes = 0;
  int attempt = 0;  // regeneration attempts used (0 = first draw passed)
  std::map<std::string, std::int64_t> lengths;
  std::map<std::string, double> probe_accuracy;  // single-modality linear probe, test split
  std::vector<BundleSample> train, test;
};

MultimodalXorData gen_multimodal_xor(const MultimodalXorCfg& cfg, std::uint64_t seed, int workers = 1);

// Multinomial logistic regression on per-channel (time mean, time slope)
// features of one modality; fit on `train`, accuracy on `test`.
double linear_probe_accuracy(const std::vector<BundleSample>& train, const std::vector<BundleSample>& test,
                             const std::string& modality, int num_classes);

// <dir>/<split>/<index>.clip and <dir>/<split>/labels.json
void save_temporal_order(const TemporalOrderData& data, const std::filesystem::path& dir);
// <dir>/<split>/<index>/ bundle directories and <dir>/<split>/labels.json
void save_multimodal_xor(const MultimodalXorData& data, const std::filesystem::path& dir);

std::vector<VideoSample> load_video_split(const std::filesystem::path& split_dir);
std::vector<BundleSample> load_bundle_split(const std::filesystem::path& split_dir);

}  // namespace stnet
