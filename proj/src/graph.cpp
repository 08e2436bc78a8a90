#include "stnet/graph.hpp"

#include <algorithm>
#include <array>
#include <iomanip>
#include <map>
#include <sstream>
#include <utility>

#include "stnet/error.hpp"

namespace stnet {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 15> kKindNames{{
    {LayerKind::Input, "input"},
    {LayerKind::Conv, "conv"},
    {LayerKind::BatchNorm, "batchnorm"},
    {LayerKind::Relu, "relu"},
    {LayerKind::Add, "add"},
    {LayerKind::Concat, "concat"},
    {LayerKind::GlobalPool, "global_pool"},
    {LayerKind::Pool, "pool"},
    {LayerKind::Linear, "linear"},
    {LayerKind::MergeTime, "merge_time"},
    {LayerKind::SplitTime, "split_time"},
    {LayerKind::FoldTime, "fold_time"},
    {LayerKind::ToSequence, "to_sequence"},
    {LayerKind::MeanOverTime, "mean_over_time"},
    {LayerKind::ResampleTime, "resample_time"},
}};

std::string pool_name(kernels::PoolKind k) { return k == kernels::PoolKind::Max ? "max" : "avg"; }

std::string layer_attrs(const LayerSpec& l) {
  std::ostringstream os;
  auto list = [&](const std::vector<int>& v) {
    os << '(';
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    os << ')';
  };
  switch (l.kind) {
    case LayerKind::Conv:
      os << l.rank << "d " << l.in_channels << "->" << l.out_channels << " k";
      list(l.kernel);
      if (!l.stride.empty()) {
        os << " s";
        list(l.stride);
      }
      if (!l.padding.empty()) {
        os << " p";
        list(l.padding);
      }
      os << " g" << l.groups;
      break;
    case LayerKind::BatchNorm:
      os << "C=" << l.out_channels;
      break;
    case LayerKind::Linear:
      os << l.in_channels << "->" << l.out_channels;
      break;
    case LayerKind::GlobalPool:
      os << pool_name(l.pool);
      break;
    case LayerKind::Pool:
      os << pool_name(l.pool) << " w";
      list(l.kernel);
      break;
    case LayerKind::Input:
      os << "C=" << l.in_channels << " @axis" << l.channel_axis << " rank" << l.rank;
      break;
    default:
      break;
  }
  return os.str();
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, n] : kKindNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw ValidationError("unknown layer kind '" + std::string(name) + "'");
}

std::vector<ParamSpec> layer_params(const LayerSpec& l) {
  std::vector<ParamSpec> out;
  switch (l.kind) {
    case LayerKind::Conv: {
      Shape w{l.out_channels, l.in_channels / l.groups};
      for (int k : l.kernel) w.push_back(k);
      out.push_back({l.name + ".weight", w, true});
      if (l.bias) out.push_back({l.name + ".bias", {l.out_channels}, true});
      break;
    }
    case LayerKind::BatchNorm:
      out.push_back({l.name + ".gamma", {l.out_channels}, true});
      out.push_back({l.name + ".beta", {l.out_channels}, true});
      out.push_back({l.name + ".running_mean", {l.out_channels}, false});
      out.push_back({l.name + ".running_var", {l.out_channels}, false});
      break;
    case LayerKind::Linear:
      out.push_back({l.name + ".weight", {l.in_channels, l.out_channels}, true});
      if (l.bias) out.push_back({l.name + ".bias", {l.out_channels}, true});
      break;
    default:
      break;
  }
  return out;
}

const LayerSpec& ModelGraph::add(LayerSpec layer) {
  if (layer.name.empty()) throw ValidationError("graph: layer without a name");
  if (contains(layer.name)) throw ValidationError("graph: duplicate layer '" + layer.name + "'");
  for (const auto& in : layer.inputs) {
    if (!contains(in)) {
      throw ValidationError("graph: layer '" + layer.name + "' consumes unknown layer '" + in + "'");
    }
  }
  const std::size_t arity = layer.inputs.size();
  bool arity_ok = arity == 1;
  if (layer.kind == LayerKind::Input) arity_ok = arity == 0;
  if (layer.kind == LayerKind::Add) arity_ok = arity == 2;
  if (layer.kind == LayerKind::Concat) arity_ok = arity >= 1;
  if (!arity_ok) {
    throw ValidationError("graph: layer '" + layer.name + "' of kind " + std::string(to_string(layer.kind)) +
                          " has " + std::to_string(arity) + " inputs");
  }
  if (layer.kind == LayerKind::Conv) {
    if (layer.rank < 1 || layer.rank > 3 || static_cast<int>(layer.kernel.size()) != layer.rank) {
      throw ValidationError("graph: conv '" + layer.name + "' needs one kernel extent per spatial dim");
    }
    if (layer.groups < 1 || layer.in_channels % layer.groups || layer.out_channels % layer.groups) {
      throw ValidationError("graph: conv '" + layer.name + "' groups " + std::to_string(layer.groups) +
                            " must divide in/out channels");
    }
  }
  layers_.push_back(std::move(layer));
  return layers_.back();
}

void ModelGraph::set_output(const std::string& name) {
  if (!contains(name)) throw ValidationError("graph: unknown output layer '" + name + "'");
  output_ = name;
}

const LayerSpec& ModelGraph::layer(const std::string& name) const {
  auto it = std::find_if(layers_.begin(), layers_.end(), [&](const LayerSpec& l) { return l.name == name; });
  if (it == layers_.end()) throw ValidationError("graph: no layer '" + name + "'");
  return *it;
}

bool ModelGraph::contains(const std::string& name) const {
  return std::any_of(layers_.begin(), layers_.end(), [&](const LayerSpec& l) { return l.name == name; });
}

std::vector<std::string> ModelGraph::input_names() const {
  std::vector<std::string> out;
  for (const auto& l : layers_) {
    if (l.kind == LayerKind::Input) out.push_back(l.name);
  }
  return out;
}

std::vector<ParamSpec> ModelGraph::param_specs() const {
  std::vector<ParamSpec> out;
  for (const auto& l : layers_) {
    auto p = layer_params(l);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::int64_t ModelGraph::param_count() const {
  std::int64_t n = 0;
  for (const auto& p : param_specs()) {
    if (p.trainable) n += p.numel();
  }
  return n;
}

json ModelGraph::to_json() const {
  json layers = json::array();
  for (const auto& l : layers_) {
    json j = {{"name", l.name}, {"kind", to_string(l.kind)}, {"inputs", l.inputs}};
    if (!l.role.empty()) j["role"] = l.role;
    if (!l.block.empty()) j["block"] = l.block;
    switch (l.kind) {
      case LayerKind::Input:
        j["rank"] = l.rank;
        j["channels"] = l.in_channels;
        j["channel_axis"] = l.channel_axis;
        break;
      case LayerKind::Conv:
        j.update({{"rank", l.rank},
                  {"in_channels", l.in_channels},
                  {"out_channels", l.out_channels},
                  {"kernel", l.kernel},
                  {"stride", l.stride},
                  {"padding", l.padding},
                  {"groups", l.groups},
                  {"bias", l.bias}});
        break;
      case LayerKind::BatchNorm:
        j.update({{"channels", l.out_channels}, {"eps", l.eps}, {"momentum", l.momentum}});
        break;
      case LayerKind::Linear:
        j.update({{"in_features", l.in_channels}, {"out_features", l.out_channels}, {"bias", l.bias}});
        break;
      case LayerKind::GlobalPool:
        j["pool"] = pool_name(l.pool);
        break;
      case LayerKind::Pool:
        j.update({{"pool", pool_name(l.pool)}, {"rank", l.rank}, {"window", l.kernel}, {"stride", l.stride}});
        break;
      case LayerKind::Concat:
        j["axis"] = l.axis;
        break;
      default:
        break;
    }
    layers.push_back(std::move(j));
  }
  return {{"name", name_}, {"layers", layers}, {"output", output_}, {"meta", meta_}};
}

ModelGraph ModelGraph::from_json(const json& j) {
  ModelGraph g(j.at("name").get<std::string>());
  for (const auto& jl : j.at("layers")) {
    LayerSpec l;
    l.name = jl.at("name").get<std::string>();
    l.kind = parse_layer_kind(jl.at("kind").get<std::string>());
    l.inputs = jl.value("inputs", std::vector<std::string>{});
    l.role = jl.value("role", "");
    l.block = jl.value("block", "");
    switch (l.kind) {
      case LayerKind::Input:
        l.rank = jl.at("rank");
        l.in_channels = jl.at("channels");
        l.channel_axis = jl.at("channel_axis");
        break;
      case LayerKind::Conv:
        l.rank = jl.at("rank");
        l.in_channels = jl.at("in_channels");
        l.out_channels = jl.at("out_channels");
        l.kernel = jl.at("kernel").get<std::vector<int>>();
        l.stride = jl.value("stride", std::vector<int>{});
        l.padding = jl.value("padding", std::vector<int>{});
        l.groups = jl.value("groups", 1);
        l.bias = jl.value("bias", false);
        break;
      case LayerKind::BatchNorm:
        l.out_channels = jl.at("channels");
        l.in_channels = l.out_channels;
        l.eps = jl.value("eps", 1e-5);
        l.momentum = jl.value("momentum", 0.9);
        break;
      case LayerKind::Linear:
        l.in_channels = jl.at("in_features");
        l.out_channels = jl.at("out_features");
        l.bias = jl.value("bias", true);
        break;
      case LayerKind::GlobalPool:
        l.pool = jl.value("pool", "avg") == "max" ? kernels::PoolKind::Max : kernels::PoolKind::Avg;
        break;
      case LayerKind::Pool:
        l.pool = jl.value("pool", "avg") == "max" ? kernels::PoolKind::Max : kernels::PoolKind::Avg;
        l.rank = jl.at("rank");
        l.kernel = jl.at("window").get<std::vector<int>>();
        l.stride = jl.value("stride", std::vector<int>{});
        break;
      case LayerKind::Concat:
        l.axis = jl.value("axis", 1);
        break;
      default:
        break;
    }
    g.add(std::move(l));
  }
  g.set_output(j.at("output").get<std::string>());
  g.meta_ = j.value("meta", json::object());
  return g;
}

json describe_json(const ModelGraph& graph) {
  json layers = json::array();
  std::map<std::string, std::int64_t> block_counts;
  std::vector<std::string> block_order;
  for (const auto& l : graph.layers()) {
    json params = json::array();
    std::int64_t count = 0;
    for (const auto& p : layer_params(l)) {
      params.push_back({{"name", p.name}, {"shape", p.shape}, {"trainable", p.trainable}});
      if (p.trainable) count += p.numel();
    }
    layers.push_back({{"name", l.name},
                      {"kind", to_string(l.kind)},
                      {"role", l.role},
                      {"block", l.block},
                      {"attrs", layer_attrs(l)},
                      {"params", params},
                      {"param_count", count}});
    if (!l.block.empty()) {
      if (!block_counts.contains(l.block)) block_order.push_back(l.block);
      block_counts[l.block] += count;
    }
  }
  json blocks = json::array();
  for (const auto& b : block_order) blocks.push_back({{"block", b}, {"param_count", block_counts[b]}});
  return {{"model", graph.name()},
          {"layers", layers},
          {"blocks", blocks},
          {"total_params", graph.param_count()},
          {"meta", graph.meta()}};
}

std::string describe_text(const ModelGraph& graph) {
  const json d = describe_json(graph);
  std::ostringstream os;
  os << "model " << graph.name() << "\n";
  os << std::left << std::setw(34) << "layer" << std::setw(16) << "kind" << std::setw(34) << "attrs"
     << std::right << std::setw(12) << "params" << "\n";
  for (const auto& l : d["layers"]) {
    if (l["param_count"].get<std::int64_t>() == 0 && l["kind"] != "input") continue;
    os << std::left << std::setw(34) << l["name"].get<std::string>() << std::setw(16) << l["kind"].get<std::string>()
       << std::setw(34) << l["attrs"].get<std::string>() << std::right << std::setw(12)
       << l["param_count"].get<std::int64_t>() << "\n";
  }
  os << "blocks\n";
  for (const auto& b : d["blocks"]) {
    os << "  " << std::left << std::setw(32) << b["block"].get<std::string>() << std::right << std::setw(12)
       << b["param_count"].get<std::int64_t>() << "\n";
  }
  if (graph.meta().contains("temporal_blocks")) {
    os << "temporal blocks inserted after:";
    for (const auto& t : graph.meta()["temporal_blocks"]) {
      os << " stage" << t["after_stage"].get<int>() << " (C=" << t["channels"].get<std::int64_t>() << ")";
    }
    os << "\n";
  }
  os << "total trainable params " << d["total_params"].get<std::int64_t>() << "\n";
  return os.str();
}

}  // namespace stnet
