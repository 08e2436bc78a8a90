#pragma once

#include <map>
#include <span>
#include <string>

#include "stnet/autodiff.hpp"
#include "stnet/graph.hpp"
#include "stnet/param_set.hpp"

namespace stnet {

using kernels::Mode;

template <typename T>
using InputMap = std::map<std::string, Tensor<T>>;

struct RunOptions {
  bool requires_grad = false;  // trainable params become grad leaves
  bool check_finite = false;   // throw NonFiniteError at the first non-finite layer output
};

template <typename T>
struct GraphRun {
  Var<T> output;
  std::map<std::string, Var<T>> nodes;   // layer name -> output
  std::map<std::string, Var<T>> params;  // parameter name -> leaf
};

// Evaluates `graph` on `tape`. Train mode updates batch-norm running
// statistics in `params`.
template <typename T>
GraphRun<T> run_graph(const ModelGraph& graph, ParamSet<T>& params, const InputMap<T>& inputs, Mode mode,
                      Tape<T>& tape, const RunOptions& opt = {});

// Gradients for every trainable parameter reached by the tape (zeros for the
// unreached ones).
template <typename T>
GradSet<T> collect_grads(const GraphRun<T>& run, const ParamSet<T>& params, const Tape<T>& tape);

template <typename T>
struct LossEval {
  T loss{};
  Tensor<T> logits;
  Tensor<T> probs;
  GradSet<T> grads;  // empty unless requested
};

template <typename T>
LossEval<T> evaluate_loss(const ModelGraph& graph, ParamSet<T>& params, const InputMap<T>& inputs,
                          std::span<const int> labels, Mode mode, bool with_grads, const RunOptions& opt = {});

// Forward only; returns the output layer value.
template <typename T>
Tensor<T> predict(const ModelGraph& graph, ParamSet<T>& params, const InputMap<T>& inputs, Mode mode);

// Eval-mode forward on a const ParamSet (no running-stat mutation), safe to
// call concurrently.
template <typename T>
Tensor<T> predict_eval(const ModelGraph& graph, const ParamSet<T>& params, const InputMap<T>& inputs);

}  // namespace stnet
