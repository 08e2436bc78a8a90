#pragma once

// Forward/backward kernels on plain tensors. No autodiff here: the tape in
// autodiff.hpp composes these. Backward kernels accumulate (+=) into their
// gradient outputs so the caller controls zeroing.
//
// Every reduction runs in a fixed order on one thread, so repeated calls are
// bitwise reproducible.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "stnet/tensor.hpp"

namespace stnet::kernels {

enum class Mode { Train, Eval };
enum class PoolKind { Max, Avg };

// ---------------------------------------------------------------------------
// Grouped N-d convolution (cross-correlation, zero padding), spatial rank 1-3.
// ---------------------------------------------------------------------------

struct ConvOptions {
  std::vector<int> stride;   // empty -> all 1; size 1 -> broadcast
  std::vector<int> padding;  // empty -> all 0; size 1 -> broadcast
  int groups = 1;
};

struct ConvGeometry {
  int rank = 0;
  std::int64_t batch = 0, c_in = 0, c_out = 0, groups = 1;
  // Spatial dims are right-aligned into 3 slots; unused leading slots are 1.
  std::array<std::int64_t, 3> in{1, 1, 1}, kernel{1, 1, 1}, stride{1, 1, 1}, pad{0, 0, 0}, out{1, 1, 1};

  std::int64_t in_spatial() const { return in[0] * in[1] * in[2]; }
  std::int64_t out_spatial() const { return out[0] * out[1] * out[2]; }
  std::int64_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  Shape out_shape() const;
};

// Validates x [B, C_in, *S] against w [C_out, C_in/G, *K]. Throws ShapeError
// naming the offending dimension.
ConvGeometry conv_geometry(const Shape& x, const Shape& w, int rank, const ConvOptions& opt);

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, const ConvGeometry& g);

template <typename T>
void conv_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, const ConvGeometry& g,
                   Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* dbias);

// ---------------------------------------------------------------------------
// Batch normalization over all non-channel axes of x [B, C, *S].
// Running variance tracks the normalizer var + eps, so eval mode divides by
// sqrt(running_var) directly and a fresh (mean 0, var 1) state is an exact
// identity.
// ---------------------------------------------------------------------------

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.9;
};

template <typename T>
struct BatchNormSaved {
  Tensor<T> xhat;
  std::vector<T> inv_std;  // per channel
};

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& run_mean,
                            Tensor<T>& run_var, Mode mode, const BatchNormOptions& opt, BatchNormSaved<T>* saved);

template <typename T>
void batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BatchNormSaved<T>& saved, Mode mode,
                        Tensor<T>* dx, Tensor<T>* dgamma, Tensor<T>* dbeta);

// ---------------------------------------------------------------------------
// Pooling.
// ---------------------------------------------------------------------------

struct PoolGeometry {
  int rank = 0;
  std::int64_t batch = 0, channels = 0;
  std::array<std::int64_t, 3> in{1, 1, 1}, window{1, 1, 1}, stride{1, 1, 1}, out{1, 1, 1};
  Shape out_shape() const;
};

PoolGeometry pool_geometry(const Shape& x, int rank, std::span<const int> window, std::span<const int> stride);

// Windowed pooling without padding. For max, `argmax` receives flat input
// offsets (first maximum wins).
template <typename T>
Tensor<T> pool_forward(const Tensor<T>& x, PoolKind kind, const PoolGeometry& g, std::vector<std::int64_t>* argmax);

template <typename T>
void pool_backward(const Tensor<T>& dy, PoolKind kind, const PoolGeometry& g, const std::vector<std::int64_t>& argmax,
                   Tensor<T>* dx);

// [B, C, *S] -> [B, C] over every axis after the channel axis.
template <typename T>
Tensor<T> global_pool_forward(const Tensor<T>& x, PoolKind kind, std::vector<std::int64_t>* argmax);

template <typename T>
void global_pool_backward(const Tensor<T>& dy, const Shape& x_shape, PoolKind kind,
                          const std::vector<std::int64_t>& argmax, Tensor<T>* dx);

// ---------------------------------------------------------------------------
// Dense layers and losses.
// ---------------------------------------------------------------------------

// x [B, D], w [D, O], b [O] -> [B, O]
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias);

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dw,
                     Tensor<T>* dbias);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x);

// Subgradient at 0 is 0.
template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx);

// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// Mean over batch of -log softmax(logits)[label]. Writes probabilities.
template <typename T>
T softmax_xent_forward(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>* probs);

template <typename T>
void softmax_xent_backward(const Tensor<T>& probs, std::span<const int> labels, T dloss, Tensor<T>* dlogits);

// ---------------------------------------------------------------------------
// Layout.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::span<const int> perm);

// Mean over one axis (axis removed).
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis);

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>* const> parts, int axis);

// Gathers along the last axis: out[..., t] = x[..., index[t]].
template <typename T>
Tensor<T> gather_last(const Tensor<T>& x, std::span<const std::int64_t> index);

template <typename T>
void gather_last_backward(const Tensor<T>& dy, std::span<const std::int64_t> index, Tensor<T>* dx);

// Nearest-index map used for sequence alignment: floor(t * length / target).
std::vector<std::int64_t> nearest_resample_index(std::int64_t length, std::int64_t target);

}  // namespace stnet::kernels
