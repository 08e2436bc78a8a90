#include "stnet/autodiff.hpp"

#include <algorithm>
#include <memory>

namespace stnet {

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return leaf(std::move(value), false);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::record(std::string op, Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  for (const auto& v : inputs) {
    if (v.tape != this) throw Error("autodiff: input belongs to a different tape");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>& Tape<T>::grad_slot(int id) {
  Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
Tensor<T> Tape<T>::grad_or_zeros(int id) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(id));
  return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
  if (root.tape != this) throw Error("autodiff: root belongs to a different tape");
  const Node& r = nodes_.at(static_cast<std::size_t>(root.id));
  if (r.value.numel() != 1) {
    throw ValidationError("backward: root must be a scalar, got shape " + shape_str(r.value.shape()));
  }
  grad_slot(root.id).fill(T{1});
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

namespace ag {

namespace {

template <typename T>
Tensor<T>* slot_if(Tape<T>& tape, int id) {
  return tape.requires_grad(id) ? &tape.grad_slot(id) : nullptr;
}

}  // namespace

template <typename T>
Var<T> conv(Var<T> x, Var<T> w, std::optional<Var<T>> bias, int rank, const kernels::ConvOptions& opt) {
  const auto geom = kernels::conv_geometry(x.shape(), w.shape(), rank, opt);
  Tensor<T> y = kernels::conv_forward(x.value(), w.value(), bias ? &bias->value() : nullptr, geom);
  std::vector<Var<T>> ins{x, w};
  if (bias) ins.push_back(*bias);
  const int xi = x.id, wi = w.id, bi = bias ? bias->id : -1;
  return x.tape->record("conv" + std::to_string(rank) + "d", std::move(y), ins,
                        [geom, xi, wi, bi](Tape<T>& t, const Tensor<T>& g) {
                          kernels::conv_backward(t.value(xi), t.value(wi), g, geom, slot_if(t, xi), slot_if(t, wi),
                                                 bi >= 0 ? slot_if(t, bi) : nullptr);
                        });
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& run_mean, Tensor<T>& run_var, Mode mode,
                  const kernels::BatchNormOptions& opt) {
  auto saved = std::make_shared<kernels::BatchNormSaved<T>>();
  Tensor<T> y =
      kernels::batchnorm_forward(x.value(), gamma.value(), beta.value(), run_mean, run_var, mode, opt, saved.get());
  const Var<T> ins[] = {x, gamma, beta};
  const int xi = x.id, gi = gamma.id, bi = beta.id;
  return x.tape->record("batchnorm", std::move(y), ins, [saved, mode, xi, gi, bi](Tape<T>& t, const Tensor<T>& g) {
    kernels::batchnorm_backward(g, t.value(gi), *saved, mode, slot_if(t, xi), slot_if(t, gi), slot_if(t, bi));
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  const Var<T> ins[] = {x};
  const int xi = x.id;
  return x.tape->record("relu", kernels::relu_forward(x.value()), ins, [xi](Tape<T>& t, const Tensor<T>& g) {
    kernels::relu_backward(t.value(xi), g, slot_if(t, xi));
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> y = a.value();
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  const Var<T> ins[] = {a, b};
  const int ai = a.id, bi = b.id;
  return a.tape->record("add", std::move(y), ins, [ai, bi](Tape<T>& t, const Tensor<T>& g) {
    for (int id : {ai, bi}) {
      if (Tensor<T>* d = slot_if(t, id)) {
        for (std::int64_t i = 0; i < g.numel(); ++i) (*d)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> y = a.value();
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  const Var<T> ins[] = {a, b};
  const int ai = a.id, bi = b.id;
  return a.tape->record("mul", std::move(y), ins, [ai, bi](Tape<T>& t, const Tensor<T>& g) {
    if (Tensor<T>* d = slot_if(t, ai)) {
      for (std::int64_t i = 0; i < g.numel(); ++i) (*d)[i] += g[i] * t.value(bi)[i];
    }
    if (Tensor<T>* d = slot_if(t, bi)) {
      for (std::int64_t i = 0; i < g.numel(); ++i) (*d)[i] += g[i] * t.value(ai)[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v *= factor;
  const Var<T> ins[] = {x};
  const int xi = x.id;
  return x.tape->record("scale", std::move(y), ins, [xi, factor](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& d = t.grad_slot(xi);
    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T s{0};
  for (T v : x.value().data()) s += v;
  const Var<T> ins[] = {x};
  const int xi = x.id;
  return x.tape->record("sum", Tensor<T>({1}, s), ins, [xi](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& d = t.grad_slot(xi);
    for (auto& v : d.data()) v += g[0];
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<Var<T>> bias) {
  Tensor<T> y = kernels::linear_forward(x.value(), w.value(), bias ? &bias->value() : nullptr);
  std::vector<Var<T>> ins{x, w};
  if (bias) ins.push_back(*bias);
  const int xi = x.id, wi = w.id, bi = bias ? bias->id : -1;
  return x.tape->record("linear", std::move(y), ins, [xi, wi, bi](Tape<T>& t, const Tensor<T>& g) {
    kernels::linear_backward(t.value(xi), t.value(wi), g, slot_if(t, xi), slot_if(t, wi),
                             bi >= 0 ? slot_if(t, bi) : nullptr);
  });
}

template <typename T>
Var<T> global_pool(Var<T> x, PoolKind kind) {
  auto argmax = std::make_shared<std::vector<std::int64_t>>();
  Tensor<T> y = kernels::global_pool_forward(x.value(), kind, argmax.get());
  const Var<T> ins[] = {x};
  const int xi = x.id;
  const Shape xs = x.shape();
  return x.tape->record(kind == PoolKind::Max ? "global_max_pool" : "global_avg_pool", std::move(y), ins,
                        [xi, xs, kind, argmax](Tape<T>& t, const Tensor<T>& g) {
                          kernels::global_pool_backward(g, xs, kind, *argmax, &t.grad_slot(xi));
                        });
}

template <typename T>
Var<T> pool(Var<T> x, PoolKind kind, int rank, std::span<const int> window, std::span<const int> stride) {
  const auto geom = kernels::pool_geometry(x.shape(), rank, window, stride);
  auto argmax = std::make_shared<std::vector<std::int64_t>>();
  Tensor<T> y = kernels::pool_forward(x.value(), kind, geom, argmax.get());
  const Var<T> ins[] = {x};
  const int xi = x.id;
  return x.tape->record(kind == PoolKind::Max ? "max_pool" : "avg_pool", std::move(y), ins,
                        [xi, geom, kind, argmax](Tape<T>& t, const Tensor<T>& g) {
                          kernels::pool_backward(g, kind, geom, *argmax, &t.grad_slot(xi));
                        });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  const Var<T> ins[] = {x};
  const int xi = x.id;
  return x.tape->record("reshape", std::move(y), ins, [xi](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& d = t.grad_slot(xi);
    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += g[i];
  });
}

template <typename T>
Var<T> permute(Var<T> x, std::vector<int> perm) {
  Tensor<T> y = kernels::permute(x.value(), perm);
  std::vector<int> inverse(perm.size());
  for (std::size_t d = 0; d < perm.size(); ++d) inverse[static_cast<std::size_t>(perm[d])] = static_cast<int>(d);
  const Var<T> ins[] = {x};
  const int xi = x.id;
  return x.tape->record("permute", std::move(y), ins, [xi, inverse](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> back = kernels::permute(g, inverse);
    Tensor<T>& d = t.grad_slot(xi);
    for (std::int64_t i = 0; i < back.numel(); ++i) d[i] += back[i];
  });
}

template <typename T>
Var<T> mean_axis(Var<T> x, int axis) {
  if (axis < 0) axis += x.value().rank();
  Tensor<T> y = kernels::mean_axis(x.value(), axis);
  const Var<T> ins[] = {x};
  const int xi = x.id;
  const Shape xs = x.shape();
  return x.tape->record("mean_axis", std::move(y), ins, [xi, xs, axis](Tape<T>& t, const Tensor<T>& g) {
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= xs[static_cast<std::size_t>(d)];
    for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < xs.size(); ++d) inner *= xs[d];
    const std::int64_t A = xs[static_cast<std::size_t>(axis)];
    const T inv = T{1} / static_cast<T>(A);
    Tensor<T>& dx = t.grad_slot(xi);
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t a = 0; a < A; ++a)
        for (std::int64_t i = 0; i < inner; ++i) dx[(o * A + a) * inner + i] += g[o * inner + i] * inv;
  });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<const Tensor<T>*> values;
  for (const auto& p : parts) values.push_back(&p.value());
  if (axis < 0) axis += values[0]->rank();
  Tensor<T> y = kernels::concat<T>(values, axis);
  std::vector<int> ids;
  std::vector<Shape> shapes;
  for (const auto& p : parts) {
    ids.push_back(p.id);
    shapes.push_back(p.shape());
  }
  return parts[0].tape->record("concat", std::move(y), parts, [ids, shapes, axis](Tape<T>& t, const Tensor<T>& g) {
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= shapes[0][static_cast<std::size_t>(d)];
    for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < shapes[0].size(); ++d) inner *= shapes[0][d];
    std::int64_t total = 0;
    for (const auto& s : shapes) total += s[static_cast<std::size_t>(axis)] * inner;
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::int64_t slab = shapes[k][static_cast<std::size_t>(axis)] * inner;
      if (Tensor<T>* d = slot_if(t, ids[k])) {
        for (std::int64_t o = 0; o < outer; ++o) {
          const T* src = g.ptr() + o * total + offset;
          T* dst = d->ptr() + o * slab;
          for (std::int64_t i = 0; i < slab; ++i) dst[i] += src[i];
        }
      }
      offset += slab;
    }
  });
}

template <typename T>
Var<T> gather_last(Var<T> x, std::vector<std::int64_t> index) {
  Tensor<T> y = kernels::gather_last(x.value(), index);
  const Var<T> ins[] = {x};
  const int xi = x.id;
  return x.tape->record("gather_last", std::move(y), ins, [xi, index](Tape<T>& t, const Tensor<T>& g) {
    kernels::gather_last_backward(g, index, &t.grad_slot(xi));
  });
}

template <typename T>
Var<T> softmax_xent(Var<T> logits, std::span<const int> labels, Tensor<T>* probs) {
  auto p = std::make_shared<Tensor<T>>();
  const T loss = kernels::softmax_xent_forward(logits.value(), labels, p.get());
  if (probs) *probs = *p;
  const Var<T> ins[] = {logits};
  const int li = logits.id;
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.tape->record("softmax_xent", Tensor<T>({1}, loss), ins, [li, p, ys](Tape<T>& t, const Tensor<T>& g) {
    kernels::softmax_xent_backward(*p, ys, g[0], &t.grad_slot(li));
  });
}

#define STNET_INSTANTIATE(T)                                                                                   \
  template Var<T> conv(Var<T>, Var<T>, std::optional<Var<T>>, int, const kernels::ConvOptions&);               \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, Tensor<T>&, Tensor<T>&, Mode,                             \
                             const kernels::BatchNormOptions&);                                                \
  template Var<T> relu(Var<T>);                                                                                \
  template Var<T> add(Var<T>, Var<T>);                                                                         \
  template Var<T> mul(Var<T>, Var<T>);                                                                         \
  template Var<T> scale(Var<T>, T);                                                                            \
  template Var<T> sum(Var<T>);                                                                                 \
  template Var<T> linear(Var<T>, Var<T>, std::optional<Var<T>>);                                               \
  template Var<T> global_pool(Var<T>, PoolKind);                                                               \
  template Var<T> pool(Var<T>, PoolKind, int, std::span<const int>, std::span<const int>);                     \
  template Var<T> reshape(Var<T>, Shape);                                                                      \
  template Var<T> permute(Var<T>, std::vector<int>);                                                           \
  template Var<T> mean_axis(Var<T>, int);                                                                      \
  template Var<T> concat(std::span<const Var<T>>, int);                                                        \
  template Var<T> gather_last(Var<T>, std::vector<std::int64_t>);                                              \
  template Var<T> softmax_xent(Var<T>, std::span<const int>, Tensor<T>*);

STNET_INSTANTIATE(float)
STNET_INSTANTIATE(double)

#undef STNET_INSTANTIATE

}  // namespace ag

template class Tape<float>;
template class Tape<double>;

}  // namespace stnet
