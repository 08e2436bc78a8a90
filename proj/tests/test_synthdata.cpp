#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "stnet/error.hpp"
#include "stnet/synthdata.hpp"

using namespace stnet;

namespace {

TemporalOrderCfg small_order() {
  TemporalOrderCfg cfg;
  cfg.height = 8;
  cfg.width = 8;
  cfg.train = 8;
  cfg.test = 4;
  return cfg;
}

MultimodalXorCfg small_xor() {
  MultimodalXorCfg cfg;
  cfg.dims = {{"a", 10}, {"b", 10}, {"c", 10}, {"d", 8}};
  cfg.train = 400;
  cfg.test = 400;
  return cfg;
}

std::vector<std::vector<float>> sorted_frames(const FrameSequence& seq) {
  std::vector<std::vector<float>> out;
  for (std::int64_t f = 0; f < seq.count(); ++f) {
    const auto fr = seq.frame(f);
    out.emplace_back(fr.begin(), fr.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

int ramp_bit(const Tensor<float>& seq) {
  const std::int64_t d = seq.dim(1), T = seq.dim(0);
  double s = 0.0;
  for (std::int64_t c = 0; c < 4; ++c) s += seq[(T - 1) * d + c] - seq[c];
  return s > 0 ? 1 : 0;
}

}  // namespace

TEST(TemporalOrder, ClassesShareTheFrameMultiset) {
  auto cfg = small_order();
  cfg.noise = 0.0;
  const auto data = gen_temporal_order(cfg, 3);
  ASSERT_EQ(data.permutations.size(), 4u);
  const auto ref = sorted_frames(data.train[0].seq);
  for (const auto& s : data.train) EXPECT_EQ(sorted_frames(s.seq), ref);
  for (std::size_t i = 0; i < data.train.size(); ++i) EXPECT_EQ(data.train[i].label, static_cast<int>(i % 4));
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b) EXPECT_NE(data.permutations[a], data.permutations[b]);
}

TEST(TemporalOrder, FrameOrderFollowsThePermutation) {
  auto cfg = small_order();
  cfg.noise = 0.0;
  const auto data = gen_temporal_order(cfg, 4);
  const auto base = temporal_order_base(cfg);
  for (const auto& s : data.test) {
    const auto order = temporal_order_frames(cfg, data.permutations[static_cast<std::size_t>(s.label)]);
    for (std::int64_t f = 0; f < cfg.frames; ++f) {
      const auto a = s.seq.frame(f), b = base.frame(order[static_cast<std::size_t>(f)]);
      ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
    }
  }
  EXPECT_EQ(temporal_order_frames(cfg, {1, 0, 2, 3, 4, 5, 6})[0], 5);
}

TEST(TemporalOrder, BaseFramesAreDistinct) {
  const auto cfg = small_order();
  const auto base = temporal_order_base(cfg);
  const auto frames = sorted_frames(base);
  EXPECT_EQ(std::adjacent_find(frames.begin(), frames.end()), frames.end());
}

TEST(TemporalOrder, Deterministic) {
  const auto cfg = small_order();
  const auto a = gen_temporal_order(cfg, 5), b = gen_temporal_order(cfg, 5, 3);
  EXPECT_EQ(a.permutations, b.permutations);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_TRUE(bitwise_equal(a.train[i].seq.frames, b.train[i].seq.frames));
  const auto c = gen_temporal_order(cfg, 6);
  EXPECT_FALSE(bitwise_equal(a.train[0].seq.frames, c.train[0].seq.frames));
}

TEST(TemporalOrder, TwoClassesWithoutNoise) {
  auto cfg = small_order();
  cfg.classes = 2;
  cfg.noise = 0.0;
  const auto a = gen_temporal_order(cfg, 7);
  EXPECT_EQ(a.permutations.size(), 2u);
  EXPECT_TRUE(bitwise_equal(a.train[0].seq.frames, a.train[2].seq.frames));
}

TEST(TemporalOrder, TooFewOrderingsIsRejected) {
  auto cfg = small_order();
  cfg.blocks = 2;
  cfg.classes = 3;
  EXPECT_THROW(gen_temporal_order(cfg, 0), ValidationError);
  cfg.blocks = 3;
  EXPECT_NO_THROW(gen_temporal_order(cfg, 0));
}

TEST(TemporalOrder, SaveLoad) {
  const auto data = gen_temporal_order(small_order(), 8);
  const auto dir = std::filesystem::temp_directory_path() / "stnet_test_order";
  std::filesystem::remove_all(dir);
  save_temporal_order(data, dir);
  const auto back = load_video_split(dir / "train");
  ASSERT_EQ(back.size(), data.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].label, data.train[i].label);
    EXPECT_TRUE(bitwise_equal(back[i].seq.frames, data.train[i].seq.frames));
  }
  std::filesystem::remove_all(dir);
}

TEST(MultimodalXor, ShapesAndLengths) {
  const auto cfg = small_xor();
  const auto data = gen_multimodal_xor(cfg, 1);
  EXPECT_EQ(data.num_classes, 4);
  for (const auto& s : data.train) {
    for (const auto& [m, d] : cfg.dims) {
      const auto& seq = s.bundle.sequences.at(m);
      EXPECT_EQ(seq.dim(0), data.lengths.at(m));
      EXPECT_EQ(seq.dim(1), d);
      EXPECT_GE(seq.dim(0), cfg.t_min);
      EXPECT_LE(seq.dim(0), cfg.t_max);
    }
  }
}

TEST(MultimodalXor, SingleModalityProbeStaysNearChance) {
  const auto data = gen_multimodal_xor(small_xor(), 2);
  for (const auto& [m, acc] : data.probe_accuracy) EXPECT_LE(acc, 0.60) << m;
}

TEST(MultimodalXor, LabelIsThePairwiseXorOfTheBits) {
  auto cfg = small_xor();
  cfg.noise = 0.0;
  cfg.cue = 0.0;
  const auto data = gen_multimodal_xor(cfg, 3);
  for (const auto& s : data.test) {
    std::vector<int> b;
    for (const auto& [m, seq] : s.bundle.sequences) b.push_back(ramp_bit(seq));
    EXPECT_EQ(s.label, 2 * (b[0] ^ b[1]) + (b[2] ^ b[3]));
  }
}

TEST(MultimodalXor, EachBitIsIndependentOfTheLabel) {
  auto cfg = small_xor();
  cfg.noise = 0.0;
  cfg.cue = 0.0;
  cfg.train = 2000;
  cfg.test = 10;
  const auto data = gen_multimodal_xor(cfg, 4);
  for (const auto& [m, d] : cfg.dims) {
    std::vector<double> ones(4, 0.0), count(4, 0.0);
    for (const auto& s : data.train) {
      ones[static_cast<std::size_t>(s.label)] += ramp_bit(s.bundle.sequences.at(m));
      count[static_cast<std::size_t>(s.label)] += 1.0;
    }
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(ones[k] / count[k], 0.5, 0.08) << m << " class " << k;
  }
}

TEST(MultimodalXor, Deterministic) {
  const auto cfg = small_xor();
  const auto a = gen_multimodal_xor(cfg, 5), b = gen_multimodal_xor(cfg, 5, 4);
  EXPECT_EQ(a.lengths, b.lengths);
  for (std::size_t i = 0; i < a.train.size(); i += 37)
    for (const auto& [m, s] : a.train[i].bundle.sequences) EXPECT_TRUE(bitwise_equal(s, b.train[i].bundle.sequences.at(m)));
}

TEST(MultimodalXor, Validation) {
  auto cfg = small_xor();
  cfg.dims = {{"a", 10}};
  EXPECT_THROW(gen_multimodal_xor(cfg, 0), ValidationError);
  cfg = small_xor();
  cfg.dims["a"] = 6;
  EXPECT_THROW(gen_multimodal_xor(cfg, 0), ValidationError);
  cfg = small_xor();
  cfg.cue = 5.0;
  cfg.max_attempts = 2;
  EXPECT_THROW(gen_multimodal_xor(cfg, 0), Error);
}

TEST(MultimodalXor, SaveLoad) {
  auto cfg = small_xor();
  cfg.train = 6;
  cfg.test = 4;
  cfg.probe_limit = 1.0;
  const auto data = gen_multimodal_xor(cfg, 6);
  const auto dir = std::filesystem::temp_directory_path() / "stnet_test_xor";
  std::filesystem::remove_all(dir);
  save_multimodal_xor(data, dir);
  const auto back = load_bundle_split(dir / "test");
  ASSERT_EQ(back.size(), data.test.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].label, data.test[i].label);
    for (const auto& [m, s] : data.test[i].bundle.sequences) EXPECT_TRUE(bitwise_equal(back[i].bundle.sequences.at(m), s));
  }
  std::filesystem::remove_all(dir);
}
