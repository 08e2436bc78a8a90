#include <gtest/gtest.h>

#include <filesystem>

#include "oracle.hpp"
#include "stnet/error.hpp"
#include "stnet/kernels.hpp"
#include "stnet/sampling.hpp"

using namespace stnet;
using kernels::Mode;

namespace {

FrameSequence random_seq(std::int64_t f, std::int64_t h, std::int64_t w, RngStream& rng) {
  FrameSequence seq(f, h, w);
  for (auto& v : seq.frames.data()) v = static_cast<float>(rng.uniform());
  return seq;
}

}  // namespace

TEST(SampleSegments, Examples) {
  RngStream rng(0);
  EXPECT_EQ(sample_segments(10, 2, 3, Mode::Eval, rng), (std::vector<std::int64_t>{1, 6}));
  EXPECT_EQ(sample_segments(20, 4, 5, Mode::Eval, rng), (std::vector<std::int64_t>{0, 5, 10, 15}));
  EXPECT_EQ(sample_segments(20, 4, 5, Mode::Train, rng), (std::vector<std::int64_t>{0, 5, 10, 15}));
  EXPECT_EQ(sample_segments(2, 1, 5, Mode::Train, rng), (std::vector<std::int64_t>{0}));
  EXPECT_THROW(sample_segments(0, 1, 1, Mode::Eval, rng), ValidationError);
  EXPECT_THROW(sample_segments(5, 0, 1, Mode::Eval, rng), ValidationError);
  EXPECT_THROW(sample_segments(5, 1, 0, Mode::Eval, rng), ValidationError);
}

TEST(SampleSegments, OffsetsStayInsideTheirSegment) {
  RngStream pick(1);
  for (int c = 0; c < 300; ++c) {
    const auto f = pick.uniform_int(1, 80), t = pick.uniform_int(1, 12), n = pick.uniform_int(1, 6);
    RngStream rng(2, static_cast<std::uint64_t>(c));
    for (Mode mode : {Mode::Eval, Mode::Train}) {
      const auto off = sample_segments(f, t, n, mode, rng);
      ASSERT_EQ(static_cast<std::int64_t>(off.size()), t);
      const std::int64_t len = f / t;
      for (std::int64_t i = 0; i < t; ++i) {
        const auto o = off[static_cast<std::size_t>(i)];
        EXPECT_GE(o, 0);
        EXPECT_LE(o, f - 1);
        if (i > 0) {
          EXPECT_LE(off[static_cast<std::size_t>(i - 1)], o);
        }
        if (len >= n) {
          EXPECT_GE(o, i * len);
          EXPECT_LE(o + n, (i + 1) * len);
        }
      }
      if (mode == Mode::Eval) {
        RngStream other(99);
        EXPECT_EQ(sample_segments(f, t, n, Mode::Eval, other), off);
      }
    }
  }
}

TEST(SuperImage, ShapeAndLayout) {
  RngStream rng(3);
  const auto seq = random_seq(40, 8, 8, rng);
  const auto off = sample_segments(40, 7, 5, Mode::Eval, rng);
  const auto s = build_super_image<float>(seq, off, 5);
  EXPECT_EQ(s.shape(), (Shape{7, 15, 8, 8}));
  const std::int64_t plane = 3 * 8 * 8;
  for (std::int64_t i = 0; i < 7; ++i)
    for (std::int64_t j = 0; j < 5; ++j) {
      const auto fr = seq.frame(off[static_cast<std::size_t>(i)] + j);
      for (std::int64_t p = 0; p < plane; ++p) ASSERT_EQ(s[(i * 15 + 3 * j) * 64 + p], fr[static_cast<std::size_t>(p)]);
    }
}

TEST(SuperImage, PaperSizedExample) {
  FrameSequence seq(35, 112, 112);
  const std::vector<std::int64_t> off{0, 5, 10, 15, 20, 25, 30};
  EXPECT_EQ(build_super_image<float>(seq, off, 5).shape(), (Shape{7, 15, 112, 112}));
}

TEST(SuperImage, RepeatsTheLastFrame) {
  FrameSequence seq(2, 1, 1);
  for (int c = 0; c < 3; ++c) {
    seq.frame(0)[static_cast<std::size_t>(c)] = 0.f;
    seq.frame(1)[static_cast<std::size_t>(c)] = 1.f;
  }
  const std::vector<std::int64_t> off{0};
  const auto s = build_super_image<float>(seq, off, 5);
  const std::vector<float> want{0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  EXPECT_EQ(s.storage(), want);
}

TEST(SuperImage, ConstantFramesGiveConstantGroups) {
  FrameSequence seq(12, 3, 3);
  seq.frames.fill(0.4f);
  const auto off = std::vector<std::int64_t>{0, 4, 8};
  const auto s = build_super_image<float>(seq, off, 3);
  for (auto v : s.data()) EXPECT_EQ(v, 0.4f);
}

TEST(SuperImage, InjectiveInFrameOrder) {
  RngStream rng(4);
  for (int c = 0; c < 20; ++c) {
    auto seq = random_seq(6, 2, 2, rng);
    const std::vector<std::int64_t> off{0};
    const auto a = build_super_image<double>(seq, off, 3);
    auto swapped = seq;
    auto f0 = swapped.frame(0), f1 = swapped.frame(1);
    std::swap_ranges(f0.begin(), f0.end(), f1.begin());
    EXPECT_FALSE(bitwise_equal(a, build_super_image<double>(swapped, off, 3)));
  }
}

TEST(SuperImage, Normalization) {
  FrameSequence seq(1, 1, 1);
  seq.frame(0)[0] = 0.5f;
  seq.frame(0)[1] = 0.25f;
  seq.frame(0)[2] = 1.0f;
  FrameNormalization norm{true, {0.5f, 0.f, 0.5f}, {1.f, 0.5f, 0.25f}};
  const std::vector<std::int64_t> off{0};
  EXPECT_EQ(build_super_image<float>(seq, off, 1, norm).storage(), (std::vector<float>{0.f, 0.5f, 2.f}));
}

TEST(Inflation, Examples) {
  RngStream rng(5);
  Tensor<double> w({4, 3, 3, 3});
  for (auto& v : w.data()) v = rng.normal();
  EXPECT_TRUE(bitwise_equal(inflate_conv1_weights(w, 1), w));
  Tensor<double> ones({2, 3, 1, 1}, 1.0);
  const auto fifth = inflate_conv1_weights(ones, 5);
  for (auto v : fifth.data()) EXPECT_EQ(v, 0.2);
  const auto inf = inflate_conv1_weights(w, 4);
  EXPECT_EQ(inf.shape(), (Shape{4, 12, 3, 3}));
  for (std::int64_t o = 0; o < 4; ++o)
    for (std::int64_t j = 0; j < 4; ++j)
      for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t p = 0; p < 9; ++p) EXPECT_EQ(inf[((o * 12 + 3 * j + c) * 9) + p], w[(o * 3 + c) * 9 + p] / 4.0);
}

TEST(Inflation, IdentityOnRepeatedFrames) {
  RngStream rng(6);
  for (std::int64_t n : {1, 2, 5}) {
    for (int c = 0; c < 5; ++c) {
      Tensor<double> w({4, 3, 3, 3}), frame({1, 3, 7, 7});
      for (auto& v : w.data()) v = rng.normal();
      for (auto& v : frame.data()) v = rng.uniform();
      Tensor<double> stacked({1, 3 * n, 7, 7});
      for (std::int64_t j = 0; j < n; ++j) std::copy(frame.ptr(), frame.ptr() + frame.numel(), stacked.ptr() + j * frame.numel());
      const auto y2d = oracle::conv(frame, w, nullptr, 1, {1, 1}, {1, 1});
      const auto y3n = oracle::conv(stacked, inflate_conv1_weights(w, n), nullptr, 1, {1, 1}, {1, 1});
      EXPECT_LE(oracle::max_rel(y3n, y2d), 1e-12);
    }
  }
}

TEST(ClipFile, RoundTrip) {
  RngStream rng(7);
  const auto seq = random_seq(4, 5, 6, rng);
  const auto path = std::filesystem::temp_directory_path() / "stnet_test.clip";
  write_clip(path, seq);
  const auto back = read_clip(path);
  EXPECT_TRUE(bitwise_equal(back.frames, seq.frames));
  EXPECT_EQ(std::filesystem::file_size(path), 12u + 4u * 3u * 5u * 6u * 4u);
  std::filesystem::remove(path);
}
