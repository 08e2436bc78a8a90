#include "stnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stnet/rng.hpp"

namespace stnet {

nlohmann::json GradcheckReport::to_json() const {
  return {{"max_rel_err", max_rel_err},
          {"worst_param", worst_param},
          {"worst_index", worst_index},
          {"coords_checked", coords_checked},
          {"coords_at_floor", coords_at_floor},
          {"max_rel_err_all", max_rel_err_all},
          {"coords_refined", coords_refined},
          {"group_max_rel_err", group_max_rel_err},
          {"group_coords", group_coords}};
}

double gradcheck_rel_err(double ad, double fd) {
  return std::abs(ad - fd) / std::max(1e-12, std::abs(ad) + std::abs(fd));
}

std::string layer_type_label(const LayerSpec& layer) {
  if (layer.kind == LayerKind::Conv) return "conv" + std::to_string(layer.rank) + "d";
  return std::string(to_string(layer.kind));
}

GradcheckReport gradcheck(const LossFn& loss, const GradFn& grads, ParamSet<double> params, const GroupFn& group_of,
                          const GradcheckOptions& opt) {
  struct Coord {
    std::string name;
    std::int64_t index;
  };
  std::map<std::string, std::vector<Coord>> pools;
  for (const auto& [name, e] : params.entries()) {
    if (!e.trainable) continue;
    auto& pool = pools[group_of(name)];
    for (std::int64_t i = 0; i < e.value.numel(); ++i) pool.push_back({name, i});
  }

  ParamSet<double> base = params;
  const GradSet<double> g_ad = grads(base);
  const double l0 = loss(base);
  constexpr double eps = std::numeric_limits<double>::epsilon();

  GradcheckReport report;
  RngStream rng(opt.seed, 0x67726164ULL);
  for (auto& [group, pool] : pools) {
    // Partial Fisher-Yates: the first `take` entries are a uniform sample.
    const auto take = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(opt.coords_per_group));
    for (std::size_t i = 0; i < take; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                              static_cast<std::int64_t>(pool.size()) - 1));
      std::swap(pool[i], pool[j]);
    }
    double group_max = 0.0;
    for (std::size_t c = 0; c < take; ++c) {
      const Coord& coord = pool[c];
      Tensor<double>& w = params.at(coord.name);
      const double x0 = w[coord.index];
      const double ad = g_ad.at(coord.name)[coord.index];
      // Relative error at step scale `hs`; `floor` is set when |ad - fd| is
      // inside the rounding floor of the difference quotient.
      auto err_at = [&](double hs, bool& floor) {
        const double h = hs * (1.0 + std::abs(x0));
        auto at = [&](double dx) {
          w[coord.index] = x0 + dx;
          return loss(params);
        };
        const double l1 = at(h), m1 = at(-h), l2 = at(2.0 * h), m2 = at(-2.0 * h);
        w[coord.index] = x0;
        const double fd = (8.0 * (l1 - m1) - (l2 - m2)) / (12.0 * h);
        floor = std::abs(ad - fd) <= opt.floor_ulps * eps * (1.0 + std::abs(l0)) / h;
        return gradcheck_rel_err(ad, fd);
      };
      ++report.coords_checked;
      bool at_floor = false;
      double rel = err_at(opt.h_scale, at_floor);
      double hs = opt.h_scale;
      for (int r = 0; r < opt.refinements && !at_floor && rel > opt.refine_above; ++r) {
        hs /= 10.0;
        bool f = false;
        const double e = err_at(hs, f);
        if (f || e < rel) {
          rel = e;
          at_floor = f;
        }
        if (r == 0) ++report.coords_refined;
      }
      report.max_rel_err_all = std::max(report.max_rel_err_all, rel);
      // Only a disagreement that is both large relative to the gradient and
      // inside the rounding floor is treated as unresolvable.
      if (at_floor && rel > opt.refine_above) {
        ++report.coords_at_floor;
        continue;
      }
      group_max = std::max(group_max, rel);
      if (report.worst_param.empty() || rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = coord.name;
        report.worst_index = coord.index;
      }
    }
    report.group_max_rel_err[group] = group_max;
    report.group_coords[group] = static_cast<std::int64_t>(take);
  }
  return report;
}

GradcheckReport gradcheck_graph(const ModelGraph& graph, const ParamSet<double>& params,
                                const InputMap<double>& inputs, std::span<const int> labels, Mode mode,
                                const GradcheckOptions& opt) {
  std::map<std::string, std::string> owner;
  for (const auto& l : graph.layers()) {
    for (const auto& p : layer_params(l)) owner[p.name] = layer_type_label(l);
  }
  const std::vector<int> ys(labels.begin(), labels.end());
  auto loss = [&](ParamSet<double>& p) {
    return evaluate_loss(graph, p, inputs, ys, mode, false).loss;
  };
  auto grads = [&](ParamSet<double>& p) { return evaluate_loss(graph, p, inputs, ys, mode, true).grads; };
  auto group_of = [&](const std::string& name) {
    auto it = owner.find(name);
    return it == owner.end() ? std::string("other") : it->second;
  };
  return gradcheck(loss, grads, params, group_of, opt);
}

}  // namespace stnet
