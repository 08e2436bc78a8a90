#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stnet/executor.hpp"

namespace stnet {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  // Coordinates sampled per layer type (all of them when a type has fewer).
  int coords_per_group = 200;
  // Step of the fourth-order central difference, h = h_scale * (1 + |x|).
  double h_scale = 1e-5;
  // Coordinates with |g_ad - g_fd| at or below floor_ulps * eps * (1 + |L|) / h
  // are at the finite-difference rounding limit. When such a coordinate still
  // has a relative error above refine_above (a near-zero gradient) it is
  // counted in coords_at_floor and left out of max_rel_err.
  double floor_ulps = 16.0;
  // A coordinate whose error exceeds refine_above is re-measured with the
  // step divided by 10, up to `refinements` times, keeping the smallest
  // error. A step that straddles a ReLU or max-pool switch resolves this way;
  // a wrong gradient does not.
  double refine_above = 1e-6;
  int refinements = 2;
};

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  std::int64_t coords_checked = 0;
  std::int64_t coords_at_floor = 0;
  std::int64_t coords_refined = 0;
  // Maximum over every sampled coordinate, at-floor ones included.
  double max_rel_err_all = 0.0;
  std::map<std::string, double> group_max_rel_err;
  std::map<std::string, std::int64_t> group_coords;

  nlohmann::json to_json() const;
};

// rel_err = |g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|)
double gradcheck_rel_err(double ad, double fd);

using LossFn = std::function<double(ParamSet<double>&)>;
using GradFn = std::function<GradSet<double>(ParamSet<double>&)>;
using GroupFn = std::function<std::string(const std::string& param)>;

// Compares `grads` against central differences of `loss` on a seeded sample
// of trainable coordinates of `params`.
GradcheckReport gradcheck(const LossFn& loss, const GradFn& grads, ParamSet<double> params, const GroupFn& group_of,
                          const GradcheckOptions& opt = {});

// Gradcheck of softmax cross-entropy over a model graph, grouped by layer type
// (conv1d/conv2d/conv3d/batchnorm/linear).
GradcheckReport gradcheck_graph(const ModelGraph& graph, const ParamSet<double>& params,
                                const InputMap<double>& inputs, std::span<const int> labels, Mode mode,
                                const GradcheckOptions& opt = {});

// Layer-type label used for grouping, e.g. "conv3d".
std::string layer_type_label(const LayerSpec& layer);

}  // namespace stnet
