#include "stnet/executor.hpp"

#include <algorithm>

namespace stnet {

namespace {

template <typename T>
struct RunState {
  const ModelGraph& graph;
  ParamSet<T>& params;
  Tape<T>& tape;
  Mode mode;
  const RunOptions& opt;
  GraphRun<T> run;
  std::int64_t batch = -1;
  std::int64_t time = -1;
  std::int64_t common_length = -1;

  Var<T> param(const std::string& name) {
    if (auto it = run.params.find(name); it != run.params.end()) return it->second;
    const bool grad = opt.requires_grad && params.trainable(name);
    Var<T> v = tape.leaf(params.at(name), grad);
    run.params.emplace(name, v);
    return v;
  }

  Var<T> in(const LayerSpec& l, std::size_t k = 0) { return run.nodes.at(l.inputs[k]); }

  void need_time(const LayerSpec& l) const {
    if (time < 0) {
      throw ValidationError("graph: layer '" + l.name + "' needs the segment count, but no merge_time ran before it");
    }
  }
};

template <typename T>
void check_input(const LayerSpec& l, const Tensor<T>& x) {
  if (x.rank() != l.rank) {
    throw ShapeError("input '" + l.name + "': expected rank " + std::to_string(l.rank) + ", got shape " +
                     shape_str(x.shape()));
  }
  if (l.in_channels > 0 && x.dim(l.channel_axis) != l.in_channels) {
    throw ShapeError("input '" + l.name + "': channel axis " + std::to_string(l.channel_axis) + " has " +
                     std::to_string(x.dim(l.channel_axis)) + ", expected " + std::to_string(l.in_channels));
  }
}

template <typename T>
Var<T> eval_layer(RunState<T>& s, const LayerSpec& l, const InputMap<T>& inputs) {
  Tape<T>& tape = s.tape;
  switch (l.kind) {
    case LayerKind::Input: {
      auto it = inputs.find(l.name);
      if (it == inputs.end()) throw ValidationError("missing graph input '" + l.name + "'");
      check_input(l, it->second);
      return tape.constant(it->second);
    }
    case LayerKind::Conv: {
      kernels::ConvOptions opt{l.stride, l.padding, l.groups};
      std::optional<Var<T>> bias;
      if (l.bias) bias = s.param(l.name + ".bias");
      return ag::conv(s.in(l), s.param(l.name + ".weight"), bias, l.rank, opt);
    }
    case LayerKind::BatchNorm: {
      return ag::batch_norm(s.in(l), s.param(l.name + ".gamma"), s.param(l.name + ".beta"),
                            s.params.at(l.name + ".running_mean"), s.params.at(l.name + ".running_var"), s.mode,
                            kernels::BatchNormOptions{l.eps, l.momentum});
    }
    case LayerKind::Relu:
      return ag::relu(s.in(l));
    case LayerKind::Add:
      return ag::add(s.in(l, 0), s.in(l, 1));
    case LayerKind::Concat: {
      std::vector<Var<T>> parts;
      for (std::size_t k = 0; k < l.inputs.size(); ++k) parts.push_back(s.in(l, k));
      return ag::concat<T>(parts, l.axis);
    }
    case LayerKind::GlobalPool:
      return ag::global_pool(s.in(l), l.pool);
    case LayerKind::Pool:
      return ag::pool(s.in(l), l.pool, l.rank, l.kernel, l.stride);
    case LayerKind::Linear: {
      std::optional<Var<T>> bias;
      if (l.bias) bias = s.param(l.name + ".bias");
      return ag::linear(s.in(l), s.param(l.name + ".weight"), bias);
    }
    case LayerKind::MergeTime: {
      Var<T> x = s.in(l);
      const Shape& xs = x.shape();
      if (xs.size() != 5) throw ShapeError("merge_time '" + l.name + "': expected [B,T,C,H,W], got " + shape_str(xs));
      s.batch = xs[0];
      s.time = xs[1];
      return ag::reshape(x, {xs[0] * xs[1], xs[2], xs[3], xs[4]});
    }
    case LayerKind::SplitTime: {
      s.need_time(l);
      Var<T> x = s.in(l);
      const Shape& xs = x.shape();
      Var<T> r = ag::reshape(x, {s.batch, s.time, xs[1], xs[2], xs[3]});
      return ag::permute(r, {0, 2, 1, 3, 4});
    }
    case LayerKind::FoldTime: {
      Var<T> x = s.in(l);
      const Shape& xs = x.shape();
      if (xs.size() != 5) throw ShapeError("fold_time '" + l.name + "': expected [B,C,T,H,W], got " + shape_str(xs));
      Var<T> p = ag::permute(x, {0, 2, 1, 3, 4});
      return ag::reshape(p, {xs[0] * xs[2], xs[1], xs[3], xs[4]});
    }
    case LayerKind::ToSequence: {
      s.need_time(l);
      Var<T> x = s.in(l);
      Var<T> r = ag::reshape(x, {s.batch, s.time, x.shape()[1]});
      return ag::permute(r, {0, 2, 1});
    }
    case LayerKind::MeanOverTime: {
      s.need_time(l);
      Var<T> x = s.in(l);
      Var<T> r = ag::reshape(x, {s.batch, s.time, x.shape()[1]});
      return ag::mean_axis(r, 1);
    }
    case LayerKind::ResampleTime: {
      Var<T> x = s.in(l);
      const std::int64_t len = x.shape().back();
      return ag::gather_last(x, kernels::nearest_resample_index(len, s.common_length));
    }
  }
  throw Error("unhandled layer kind");
}

}  // namespace

template <typename T>
GraphRun<T> run_graph(const ModelGraph& graph, ParamSet<T>& params, const InputMap<T>& inputs, Mode mode,
                      Tape<T>& tape, const RunOptions& opt) {
  if (graph.output().empty()) throw ValidationError("graph '" + graph.name() + "' has no output");
  RunState<T> s{graph, params, tape, mode, opt, {}};
  // Sequences meeting in a resample/concat are aligned to the longest input.
  for (const auto& l : graph.layers()) {
    if (l.kind == LayerKind::Input && l.rank == 3) {
      if (auto it = inputs.find(l.name); it != inputs.end() && it->second.rank() == 3) {
        s.common_length = std::max(s.common_length, it->second.dim(2));
      }
    }
  }
  for (const auto& l : graph.layers()) {
    Var<T> v = eval_layer(s, l, inputs);
    if (opt.check_finite && !v.value().all_finite()) {
      throw NonFiniteError(l.name, "non-finite values first produced by layer '" + l.name + "' (" +
                                       std::string(to_string(l.kind)) + ")");
    }
    s.run.nodes.emplace(l.name, v);
  }
  s.run.output = s.run.nodes.at(graph.output());
  return std::move(s.run);
}

template <typename T>
GradSet<T> collect_grads(const GraphRun<T>& run, const ParamSet<T>& params, const Tape<T>& tape) {
  GradSet<T> grads;
  for (const auto& [name, e] : params.entries()) {
    if (!e.trainable) continue;
    auto it = run.params.find(name);
    grads.emplace(name, it == run.params.end() ? Tensor<T>(e.value.shape()) : tape.grad_or_zeros(it->second.id));
  }
  return grads;
}

template <typename T>
LossEval<T> evaluate_loss(const ModelGraph& graph, ParamSet<T>& params, const InputMap<T>& inputs,
                          std::span<const int> labels, Mode mode, bool with_grads, const RunOptions& opt) {
  Tape<T> tape;
  RunOptions ro = opt;
  ro.requires_grad = with_grads;
  GraphRun<T> run = run_graph(graph, params, inputs, mode, tape, ro);
  LossEval<T> out;
  Var<T> loss = ag::softmax_xent(run.output, labels, &out.probs);
  out.loss = loss.value()[0];
  out.logits = run.output.value();
  if (with_grads) {
    tape.backward(loss);
    out.grads = collect_grads(run, params, tape);
  }
  return out;
}

template <typename T>
Tensor<T> predict(const ModelGraph& graph, ParamSet<T>& params, const InputMap<T>& inputs, Mode mode) {
  Tape<T> tape;
  return run_graph(graph, params, inputs, mode, tape).output.value();
}

template <typename T>
Tensor<T> predict_eval(const ModelGraph& graph, const ParamSet<T>& params, const InputMap<T>& inputs) {
  Tape<T> tape;
  // Eval mode reads running statistics and never writes them.
  auto& mutable_params = const_cast<ParamSet<T>&>(params);
  return run_graph(graph, mutable_params, inputs, Mode::Eval, tape).output.value();
}

#define STNET_INSTANTIATE(T)                                                                                    \
  template GraphRun<T> run_graph(const ModelGraph&, ParamSet<T>&, const InputMap<T>&, Mode, Tape<T>&,          \
                                 const RunOptions&);                                                            \
  template GradSet<T> collect_grads(const GraphRun<T>&, const ParamSet<T>&, const Tape<T>&);                    \
  template LossEval<T> evaluate_loss(const ModelGraph&, ParamSet<T>&, const InputMap<T>&, std::span<const int>, \
                                     Mode, bool, const RunOptions&);                                            \
  template Tensor<T> predict(const ModelGraph&, ParamSet<T>&, const InputMap<T>&, Mode);                        \
  template Tensor<T> predict_eval(const ModelGraph&, const ParamSet<T>&, const InputMap<T>&);

STNET_INSTANTIATE(float)
STNET_INSTANTIATE(double)

#undef STNET_INSTANTIATE

}  // namespace stnet
