#pragma once

// Reverse-mode automatic differentiation over a linear tape.
//
// Each op evaluates its kernel eagerly and appends one entry holding the
// output value, the input node ids and a backward closure. Entries are
// appended in evaluation order, so the tape is topologically sorted by
// construction and `backward` is a single reverse sweep.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stnet/kernels.hpp"
#include "stnet/tensor.hpp"

namespace stnet {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> leaf(Tensor<T> value, bool requires_grad = true);

  // Appends an op entry. `fn` is dropped when no input requires grad.
  Var<T> record(std::string op, Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn);

  // Seeds d(root)/d(root) = 1 and sweeps the tape backwards. Root must hold a
  // single element.
  void backward(Var<T> root);

  const Tensor<T>& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  const std::string& op(int id) const { return nodes_.at(static_cast<std::size_t>(id)).op; }
  const std::vector<int>& inputs(int id) const { return nodes_.at(static_cast<std::size_t>(id)).inputs; }

  // Gradient accumulated for node `id`; empty if backward never reached it.
  const Tensor<T>& grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).grad; }
  Tensor<T> grad_or_zeros(int id) const;

  // Zero-initialized on first use; backward closures accumulate here.
  Tensor<T>& grad_slot(int id);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape->requires_grad(id);
}

namespace ag {

using kernels::Mode;
using kernels::PoolKind;

template <typename T>
Var<T> conv(Var<T> x, Var<T> w, std::optional<Var<T>> bias, int rank, const kernels::ConvOptions& opt);

// Running statistics are updated in place in train mode.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& run_mean, Tensor<T>& run_var, Mode mode,
                  const kernels::BatchNormOptions& opt);

template <typename T>
Var<T> relu(Var<T> x);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> x, T factor);

template <typename T>
Var<T> sum(Var<T> x);

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<Var<T>> bias);

template <typename T>
Var<T> global_pool(Var<T> x, PoolKind kind);

template <typename T>
Var<T> pool(Var<T> x, PoolKind kind, int rank, std::span<const int> window, std::span<const int> stride);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

template <typename T>
Var<T> permute(Var<T> x, std::vector<int> perm);

template <typename T>
Var<T> mean_axis(Var<T> x, int axis);

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, int axis);

template <typename T>
Var<T> gather_last(Var<T> x, std::vector<std::int64_t> index);

// Scalar mean cross-entropy; optionally exposes the softmax probabilities.
template <typename T>
Var<T> softmax_xent(Var<T> logits, std::span<const int> labels, Tensor<T>* probs = nullptr);

}  // namespace ag

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace stnet
