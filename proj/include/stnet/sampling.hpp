#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "stnet/kernels.hpp"
#include "stnet/rng.hpp"
#include "stnet/tensor.hpp"

namespace stnet {

// F RGB frames, stored [F, 3, H, W], values in [0, 1].
struct FrameSequence {
  Tensor<float> frames;

  FrameSequence() = default;
  explicit FrameSequence(Tensor<float> f);
  FrameSequence(std::int64_t count, std::int64_t height, std::int64_t width);

  std::int64_t count() const { return frames.dim(0); }
  std::int64_t height() const { return frames.dim(2); }
  std::int64_t width() const { return frames.dim(3); }
  std::span<float> frame(std::int64_t i);
  std::span<const float> frame(std::int64_t i) const;
};

// Clips [B, T, 3N, H, W] with labels.
template <typename T>
struct SuperImageBatch {
  Tensor<T> clips;
  std::vector<int> labels;
  std::int64_t segments = 0;         // T
  std::int64_t frames_per_segment = 0;  // N
};

// Optional per-channel normalization applied while stacking (off by default).
struct FrameNormalization {
  bool enabled = false;
  std::array<float, 3> mean{0.f, 0.f, 0.f};
  std::array<float, 3> stddev{1.f, 1.f, 1.f};
};

// Segment start offsets. With L = floor(F / T) >= N, offset_i = i*L + u_i
// where u_i ~ U{0..L-N} in train mode and floor((L-N)/2) in eval mode.
// Otherwise offset_i = i*L clamped into [0, F-1]; the reader pads.
std::vector<std::int64_t> sample_segments(std::int64_t frames, std::int64_t segments, std::int64_t n, kernels::Mode mode,
                                          RngStream& rng);

// [T, 3N, H, W]: segment i stacks frames offset_i .. offset_i+N-1 along the
// channel axis (frame j -> channels 3j..3j+2); indices past F-1 repeat the
// last frame.
template <typename T>
Tensor<T> build_super_image(const FrameSequence& seq, std::span<const std::int64_t> offsets, std::int64_t n,
                            const FrameNormalization& norm = {});

// [C_out, 3, k, k] -> [C_out, 3N, k, k], each copy scaled by 1/N.
template <typename T>
Tensor<T> inflate_conv1_weights(const Tensor<T>& w2d, std::int64_t n);

// Raw clip file: uint32 {F, H, W} little-endian header followed by the f32
// frames [F, 3, H, W], little-endian.
void write_clip(const std::filesystem::path& path, const FrameSequence& seq);
FrameSequence read_clip(const std::filesystem::path& path);

}  // namespace stnet
