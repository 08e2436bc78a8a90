#include "stnet/fusion.hpp"

#include <algorithm>
#include <fstream>

#include "stnet/io.hpp"

namespace stnet {

std::string_view to_string(GroupsMode m) { return m == GroupsMode::Depthwise ? "depthwise" : "full"; }

GroupsMode parse_groups_mode(std::string_view s) {
  if (s == "depthwise") return GroupsMode::Depthwise;
  if (s == "full") return GroupsMode::Full;
  throw ValidationError("groups_mode must be depthwise or full, got '" + std::string(s) + "'");
}

void TxnBlockCfg::validate() const {
  if (bottleneck_channels < 0) throw ValidationError("txn: bottleneck_channels must be >= 0");
  if (units.empty()) throw ValidationError("txn: at least one unit is required");
  for (const auto& u : units) {
    if (u.out_channels < 1) throw ValidationError("txn: unit out_channels must be positive");
    if (u.kernel_size < 1 || u.kernel_size % 2 == 0) {
      throw ValidationError("txn: kernel_size must be odd, got " + std::to_string(u.kernel_size));
    }
  }
}

std::int64_t TxnBlockCfg::out_channels(std::int64_t in_channels) const {
  return units.empty() ? (bottleneck_channels > 0 ? bottleneck_channels : in_channels) : units.back().out_channels;
}

namespace {

LayerSpec conv1d(std::string name, std::string input, std::int64_t cin, std::int64_t cout, int k, int groups,
                 const std::string& role, const std::string& block) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::Conv;
  l.inputs = {std::move(input)};
  l.role = role;
  l.block = block;
  l.rank = 1;
  l.in_channels = cin;
  l.out_channels = cout;
  l.groups = groups;
  l.kernel = {k};
  l.padding = {k / 2};
  l.bias = true;
  return l;
}

LayerSpec simple(std::string name, LayerKind kind, std::vector<std::string> inputs, const std::string& role,
                 const std::string& block, std::int64_t channels = 0) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = kind;
  l.inputs = std::move(inputs);
  l.role = role;
  l.block = block;
  l.out_channels = channels;
  return l;
}

LayerSpec sequence_input(const std::string& name, std::int64_t dim) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::Input;
  l.role = "input";
  l.rank = 3;
  l.in_channels = dim;
  l.channel_axis = 1;
  return l;
}

LayerSpec classifier(const std::string& input, std::int64_t in, int num_classes) {
  LayerSpec l;
  l.name = "fc";
  l.kind = LayerKind::Linear;
  l.inputs = {input};
  l.role = "classifier";
  l.block = "fc";
  l.in_channels = in;
  l.out_channels = num_classes;
  l.bias = true;
  return l;
}

}  // namespace

std::string add_txn(ModelGraph& g, const std::string& prefix, const std::string& input, std::int64_t in_channels,
                    const TxnBlockCfg& cfg, const std::string& role) {
  cfg.validate();
  std::string cur = input;
  std::int64_t c = in_channels;
  if (cfg.bottleneck_channels > 0) {
    const std::int64_t b = cfg.bottleneck_channels;
    g.add(conv1d(prefix + ".bottleneck", cur, c, b, 1, 1, role, prefix));
    g.add(simple(prefix + ".bottleneck_bn", LayerKind::BatchNorm, {prefix + ".bottleneck"}, role, prefix, b));
    g.add(simple(prefix + ".bottleneck_relu", LayerKind::Relu, {prefix + ".bottleneck_bn"}, role, prefix));
    cur = prefix + ".bottleneck_relu";
    c = b;
  }
  for (std::size_t u = 0; u < cfg.units.size(); ++u) {
    const auto& unit = cfg.units[u];
    const std::string p = prefix + ".unit" + std::to_string(u + 1);
    const int groups = unit.groups_mode == GroupsMode::Depthwise ? static_cast<int>(c) : 1;
    g.add(conv1d(p + ".temporal", cur, c, c, unit.kernel_size, groups, role, prefix));
    g.add(conv1d(p + ".pointwise", p + ".temporal", c, unit.out_channels, 1, 1, role, prefix));
    g.add(simple(p + ".bn", LayerKind::BatchNorm, {p + ".pointwise"}, role, prefix, unit.out_channels));
    g.add(simple(p + ".relu", LayerKind::Relu, {p + ".bn"}, role, prefix));
    g.add(conv1d(p + ".proj", cur, c, unit.out_channels, 1, 1, role, prefix));
    g.add(simple(p + ".add", LayerKind::Add, {p + ".relu", p + ".proj"}, role, prefix));
    cur = p + ".add";
    c = unit.out_channels;
  }
  LayerSpec pool = simple(prefix + ".pool", LayerKind::GlobalPool, {cur}, role, prefix);
  pool.pool = cfg.head;
  g.add(pool);
  return prefix + ".pool";
}

const std::vector<std::string>& modality_roles() {
  static const std::vector<std::string> roles{"rgb", "flow_a", "flow_b", "audio"};
  return roles;
}

ModalityDims ModalityBundle::dims() const {
  ModalityDims d;
  for (const auto& [m, seq] : sequences) d[m] = seq.dim(1);
  return d;
}

void save_bundle(const ModalityBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::object();
  for (const auto& [m, seq] : bundle.sequences) {
    const std::string file = m + ".f32";
    manifest[m] = {{"T", seq.dim(0)}, {"d", seq.dim(1)}, {"file", file}};
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / file).string());
    io::write_le<float>(out, seq.data());
  }
  io::write_json(dir / "manifest.json", manifest);
}

ModalityBundle load_bundle(const std::filesystem::path& dir) {
  const auto manifest = io::read_json(dir / "manifest.json");
  if (!manifest.is_object()) throw ValidationError("bundle manifest must be an object: " + dir.string());
  ModalityBundle b;
  for (const auto& [m, e] : manifest.items()) {
    const Shape shape{e.at("T").get<std::int64_t>(), e.at("d").get<std::int64_t>()};
    const auto path = dir / e.at("file").get<std::string>();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("missing bundle blob " + path.string());
    auto data = io::read_le<float>(in, static_cast<std::size_t>(shape_numel(shape)));
    if (in.peek() != std::char_traits<char>::eof()) throw ValidationError("bundle blob too long: " + path.string());
    b.sequences.emplace(m, Tensor<float>(shape, std::move(data)));
  }
  return b;
}

ModelGraph build_itxn(const ModalityDims& dims, const TxnBlockCfg& cfg, int num_classes) {
  if (dims.empty()) throw ValidationError("build_itxn: at least one modality is required");
  if (num_classes < 2) throw ValidationError("build_itxn: num_classes must be >= 2");
  ModelGraph g("itxn");
  std::vector<std::string> early_parts;
  std::int64_t early_dim = 0;
  for (const auto& [m, d] : dims) {
    if (d < 1) throw ValidationError("build_itxn: modality '" + m + "' has non-positive dim");
    g.add(sequence_input(m, d));
  }
  for (const auto& [m, d] : dims) {
    g.add(simple("early.resample." + m, LayerKind::ResampleTime, {m}, "fusion", "early"));
    early_parts.push_back("early.resample." + m);
    early_dim += d;
  }
  LayerSpec cat = simple("early.concat", LayerKind::Concat, early_parts, "fusion", "early");
  cat.axis = 1;
  cat.in_channels = early_dim;
  cat.out_channels = early_dim;
  g.add(cat);

  std::vector<std::string> heads;
  std::int64_t feat = 0;
  for (const auto& [m, d] : dims) {
    heads.push_back(add_txn(g, "late." + m, m, d, cfg));
    feat += cfg.out_channels(d);
  }
  heads.push_back(add_txn(g, "early", "early.concat", early_dim, cfg));
  feat += cfg.out_channels(early_dim);

  LayerSpec fuse = simple("fusion.concat", LayerKind::Concat, heads, "fusion", "fusion");
  fuse.axis = 1;
  fuse.in_channels = feat;
  fuse.out_channels = feat;
  g.add(fuse);
  g.add(classifier("fusion.concat", feat, num_classes));
  g.set_output("fc");

  nlohmann::json md = nlohmann::json::object();
  for (const auto& [m, d] : dims) md[m] = d;
  g.meta()["architecture"] = "itxn";
  g.meta()["modalities"] = md;
  g.meta()["early_dim"] = early_dim;
  g.meta()["feature_dim"] = feat;
  g.meta()["num_classes"] = num_classes;
  return g;
}

ModelGraph build_single_txn(const std::string& modality, std::int64_t dim, const TxnBlockCfg& cfg, int num_classes) {
  if (dim < 1) throw ValidationError("build_single_txn: non-positive dim");
  if (num_classes < 2) throw ValidationError("build_single_txn: num_classes must be >= 2");
  ModelGraph g("txn_" + modality);
  g.add(sequence_input(modality, dim));
  const std::string head = add_txn(g, "txn", modality, dim, cfg);
  g.add(classifier(head, cfg.out_channels(dim), num_classes));
  g.set_output("fc");
  g.meta()["architecture"] = "txn";
  g.meta()["modalities"] = {{modality, dim}};
  g.meta()["num_classes"] = num_classes;
  return g;
}

template <typename T>
Tensor<T> resample_sequence(const Tensor<T>& seq, std::int64_t target) {
  if (seq.rank() != 2) throw ShapeError("resample_sequence: expected [T, d], got " + shape_str(seq.shape()));
  if (target < 1) throw ValidationError("resample_sequence: target length must be positive");
  const std::int64_t d = seq.dim(1);
  const auto idx = kernels::nearest_resample_index(seq.dim(0), target);
  Tensor<T> out({target, d});
  for (std::int64_t t = 0; t < target; ++t) {
    std::copy_n(seq.ptr() + idx[static_cast<std::size_t>(t)] * d, d, out.ptr() + t * d);
  }
  return out;
}

template <typename T>
InputMap<T> bundle_inputs(const ModelGraph& graph, const std::vector<const ModalityBundle*>& bundles) {
  return bundle_inputs<T>(graph.input_names(), bundles);
}

template <typename T>
InputMap<T> bundle_inputs(const std::vector<std::string>& modalities, const std::vector<const ModalityBundle*>& bundles) {
  if (bundles.empty()) throw ValidationError("bundle_inputs: empty batch");
  std::string missing;
  for (const auto& name : modalities) {
    for (const auto* b : bundles) {
      if (!b->has(name)) {
        missing += (missing.empty() ? "" : ", ") + name;
        break;
      }
    }
  }
  if (!missing.empty()) throw ValidationError("bundle is missing modalities required by the graph: " + missing);

  InputMap<T> inputs;
  const auto B = static_cast<std::int64_t>(bundles.size());
  for (const auto& name : modalities) {
    std::int64_t len = 0;
    for (const auto* b : bundles) len = std::max(len, b->sequences.at(name).dim(0));
    const std::int64_t d = bundles.front()->sequences.at(name).dim(1);
    Tensor<T> x({B, d, len});
    for (std::int64_t i = 0; i < B; ++i) {
      const Tensor<float>& src = bundles[static_cast<std::size_t>(i)]->sequences.at(name);
      if (src.dim(1) != d) {
        throw ShapeError("modality '" + name + "': feature dim " + std::to_string(src.dim(1)) + ", expected " +
                         std::to_string(d));
      }
      const Tensor<float> seq = src.dim(0) == len ? src : resample_sequence(src, len);
      T* dst = x.ptr() + i * d * len;
      for (std::int64_t t = 0; t < len; ++t)
        for (std::int64_t c = 0; c < d; ++c) dst[c * len + t] = static_cast<T>(seq[t * d + c]);
    }
    inputs.emplace(name, std::move(x));
  }
  return inputs;
}

template <typename T>
Tensor<T> itxn_forward(const ModelGraph& graph, ParamSet<T>& params, const ModalityBundle& bundle, Mode mode) {
  return predict(graph, params, bundle_inputs<T>(graph, {&bundle}), mode);
}

template Tensor<float> resample_sequence(const Tensor<float>&, std::int64_t);
template Tensor<double> resample_sequence(const Tensor<double>&, std::int64_t);
template InputMap<float> bundle_inputs(const std::vector<std::string>&, const std::vector<const ModalityBundle*>&);
template InputMap<double> bundle_inputs(const std::vector<std::string>&, const std::vector<const ModalityBundle*>&);
template InputMap<float> bundle_inputs(const ModelGraph&, const std::vector<const ModalityBundle*>&);
template InputMap<double> bundle_inputs(const ModelGraph&, const std::vector<const ModalityBundle*>&);
template Tensor<float> itxn_forward(const ModelGraph&, ParamSet<float>&, const ModalityBundle&, Mode);
template Tensor<double> itxn_forward(const ModelGraph&, ParamSet<double>&, const ModalityBundle&, Mode);

}  // namespace stnet
