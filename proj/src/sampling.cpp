#include "stnet/sampling.hpp"

#include <algorithm>
#include <fstream>

#include "stnet/io.hpp"

namespace stnet {

FrameSequence::FrameSequence(Tensor<float> f) : frames(std::move(f)) {
  if (frames.rank() != 4 || frames.dim(1) != 3) {
    throw ShapeError("frame sequence must be [F, 3, H, W], got " + shape_str(frames.shape()));
  }
}

FrameSequence::FrameSequence(std::int64_t count, std::int64_t height, std::int64_t width)
    : frames({count, 3, height, width}) {}

std::span<float> FrameSequence::frame(std::int64_t i) {
  const std::int64_t sz = 3 * height() * width();
  return frames.data().subspan(static_cast<std::size_t>(i * sz), static_cast<std::size_t>(sz));
}

std::span<const float> FrameSequence::frame(std::int64_t i) const {
  const std::int64_t sz = 3 * height() * width();
  return frames.data().subspan(static_cast<std::size_t>(i * sz), static_cast<std::size_t>(sz));
}

std::vector<std::int64_t> sample_segments(std::int64_t frames, std::int64_t segments, std::int64_t n, kernels::Mode mode,
                                          RngStream& rng) {
  if (frames < 1 || segments < 1 || n < 1) {
    throw ValidationError("sample_segments: F, T and N must be positive (got F=" + std::to_string(frames) +
                          ", T=" + std::to_string(segments) + ", N=" + std::to_string(n) + ")");
  }
  const std::int64_t len = frames / segments;
  std::vector<std::int64_t> offsets(static_cast<std::size_t>(segments));
  for (std::int64_t i = 0; i < segments; ++i) {
    std::int64_t off = i * len;
    if (len >= n) {
      const std::int64_t slack = len - n;
      off += mode == kernels::Mode::Train ? rng.uniform_int(0, slack) : slack / 2;
    }
    offsets[static_cast<std::size_t>(i)] = std::clamp<std::int64_t>(off, 0, frames - 1);
  }
  return offsets;
}

template <typename T>
Tensor<T> build_super_image(const FrameSequence& seq, std::span<const std::int64_t> offsets, std::int64_t n,
                            const FrameNormalization& norm) {
  if (n < 1) throw ValidationError("build_super_image: N must be positive");
  const std::int64_t F = seq.count(), H = seq.height(), W = seq.width();
  const auto segs = static_cast<std::int64_t>(offsets.size());
  const std::int64_t plane = H * W;
  Tensor<T> out({segs, 3 * n, H, W});
  T* dst = out.ptr();
  for (std::int64_t i = 0; i < segs; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      const std::int64_t f = std::min(offsets[static_cast<std::size_t>(i)] + j, F - 1);
      const auto src = seq.frame(f);
      for (std::int64_t c = 0; c < 3; ++c) {
        const float* s = src.data() + c * plane;
        if (norm.enabled) {
          const float m = norm.mean[static_cast<std::size_t>(c)];
          const float inv = 1.0f / norm.stddev[static_cast<std::size_t>(c)];
          for (std::int64_t p = 0; p < plane; ++p) dst[p] = static_cast<T>((s[p] - m) * inv);
        } else {
          for (std::int64_t p = 0; p < plane; ++p) dst[p] = static_cast<T>(s[p]);
        }
        dst += plane;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> inflate_conv1_weights(const Tensor<T>& w2d, std::int64_t n) {
  if (n < 1) throw ValidationError("inflate_conv1_weights: N must be positive");
  if (w2d.rank() != 4 || w2d.dim(1) != 3) {
    throw ShapeError("inflate_conv1_weights: expected [C_out, 3, k, k], got " + shape_str(w2d.shape()));
  }
  const std::int64_t co = w2d.dim(0), kk = w2d.dim(2) * w2d.dim(3);
  Tensor<T> out({co, 3 * n, w2d.dim(2), w2d.dim(3)});
  const T inv_n = T{1} / static_cast<T>(n);
  for (std::int64_t o = 0; o < co; ++o)
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t k = 0; k < kk; ++k) {
          out[((o * 3 * n) + 3 * j + c) * kk + k] = w2d[(o * 3 + c) * kk + k] * inv_n;
        }
  return out;
}

void write_clip(const std::filesystem::path& path, const FrameSequence& seq) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const std::uint32_t header[3] = {static_cast<std::uint32_t>(seq.count()), static_cast<std::uint32_t>(seq.height()),
                                   static_cast<std::uint32_t>(seq.width())};
  io::write_le<std::uint32_t>(out, header);
  io::write_le<float>(out, seq.frames.data());
}

FrameSequence read_clip(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open clip " + path.string());
  const auto header = io::read_le<std::uint32_t>(in, 3);
  if (header[0] == 0 || header[1] == 0 || header[2] == 0) {
    throw ValidationError("clip " + path.string() + " has an empty dimension");
  }
  const Shape shape{header[0], 3, header[1], header[2]};
  auto data = io::read_le<float>(in, static_cast<std::size_t>(shape_numel(shape)));
  return FrameSequence(Tensor<float>(shape, std::move(data)));
}

template Tensor<float> build_super_image(const FrameSequence&, std::span<const std::int64_t>, std::int64_t,
                                         const FrameNormalization&);
template Tensor<double> build_super_image(const FrameSequence&, std::span<const std::int64_t>, std::int64_t,
                                          const FrameNormalization&);
template Tensor<float> inflate_conv1_weights(const Tensor<float>&, std::int64_t);
template Tensor<double> inflate_conv1_weights(const Tensor<double>&, std::int64_t);

}  // namespace stnet
