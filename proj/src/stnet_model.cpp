#include "stnet/stnet_model.hpp"

#include <algorithm>
#include <cmath>

namespace stnet {

void BackboneSpec::validate() const {
  if (stages.size() < 4) {
    throw ValidationError("backbone needs at least 4 stages, got " + std::to_string(stages.size()));
  }
  if (stem.channels < 1 || stem.kernel < 1 || stem.stride < 1) throw ValidationError("backbone: invalid stem");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& st = stages[s];
    if (st.blocks < 1 || st.channels < 1 || st.stride < 1) {
      throw ValidationError("backbone: invalid stage " + std::to_string(s + 1));
    }
  }
}

namespace {

struct Builder {
  ModelGraph& g;

  void conv2d(const std::string& name, const std::string& in, std::int64_t cin, std::int64_t cout, int k, int stride,
              const std::string& role, const std::string& block) {
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::Conv;
    l.inputs = {in};
    l.role = role;
    l.block = block;
    l.rank = 2;
    l.in_channels = cin;
    l.out_channels = cout;
    l.kernel = {k, k};
    l.stride = {stride, stride};
    l.padding = {k / 2, k / 2};
    g.add(l);
  }

  void op(const std::string& name, LayerKind kind, std::vector<std::string> in, const std::string& role,
          const std::string& block, std::int64_t channels = 0) {
    LayerSpec l;
    l.name = name;
    l.kind = kind;
    l.inputs = std::move(in);
    l.role = role;
    l.block = block;
    l.out_channels = channels;
    g.add(l);
  }

  std::string conv_bn_relu_stem(const std::string& in, std::int64_t cin, const StemSpec& stem) {
    conv2d("conv1", in, cin, stem.channels, stem.kernel, stem.stride, "stem", "conv1");
    op("conv1.bn", LayerKind::BatchNorm, {"conv1"}, "stem", "conv1", stem.channels);
    op("conv1.relu", LayerKind::Relu, {"conv1.bn"}, "stem", "conv1");
    return "conv1.relu";
  }

  // conv3x3-BN-ReLU-conv3x3-BN (+ projected shortcut) -> add -> ReLU
  std::string residual(const std::string& p, const std::string& in, std::int64_t cin, std::int64_t cout, int stride,
                       const std::string& block) {
    conv2d(p + ".conv_a", in, cin, cout, 3, stride, "backbone", block);
    op(p + ".bn_a", LayerKind::BatchNorm, {p + ".conv_a"}, "backbone", block, cout);
    op(p + ".relu_a", LayerKind::Relu, {p + ".bn_a"}, "backbone", block);
    conv2d(p + ".conv_b", p + ".relu_a", cout, cout, 3, 1, "backbone", block);
    op(p + ".bn_b", LayerKind::BatchNorm, {p + ".conv_b"}, "backbone", block, cout);
    std::string shortcut = in;
    if (cin != cout || stride != 1) {
      conv2d(p + ".proj", in, cin, cout, 1, stride, "backbone", block);
      op(p + ".proj_bn", LayerKind::BatchNorm, {p + ".proj"}, "backbone", block, cout);
      shortcut = p + ".proj_bn";
    }
    op(p + ".add", LayerKind::Add, {p + ".bn_b", shortcut}, "backbone", block);
    op(p + ".relu", LayerKind::Relu, {p + ".add"}, "backbone", block);
    return p + ".relu";
  }

  std::string temporal(int stage, const std::string& in, std::int64_t c, bool residual_block) {
    const std::string p = "temporal" + std::to_string(stage);
    op(p + ".split", LayerKind::SplitTime, {in}, "temporal", p);
    LayerSpec conv;
    conv.name = p + ".conv";
    conv.kind = LayerKind::Conv;
    conv.inputs = {p + ".split"};
    conv.role = "temporal";
    conv.block = p;
    conv.rank = 3;
    conv.in_channels = c;
    conv.out_channels = c;
    conv.groups = 1;
    conv.kernel = {3, 1, 1};
    conv.padding = {1, 0, 0};
    conv.bias = true;
    g.add(conv);
    op(p + ".bn", LayerKind::BatchNorm, {p + ".conv"}, "temporal", p, c);
    op(p + ".relu", LayerKind::Relu, {p + ".bn"}, "temporal", p);
    std::string out = p + ".relu";
    if (residual_block) {
      op(p + ".add", LayerKind::Add, {out, p + ".split"}, "temporal", p);
      out = p + ".add";
    }
    op(p + ".fold", LayerKind::FoldTime, {out}, "temporal", p);
    return p + ".fold";
  }
};

// Shared trunk: clips -> merged segments -> backbone (with optional temporal
// blocks) -> global average pool [B*T, C_last].
std::string trunk(ModelGraph& g, const StNetCfg& cfg, bool with_temporal, nlohmann::json& inserted) {
  cfg.backbone.validate();
  if (cfg.n < 1) throw ValidationError("N must be >= 1");
  if (cfg.num_classes < 2) throw ValidationError("num_classes must be >= 2");
  const auto& stages = cfg.backbone.stages;
  if (with_temporal) {
    for (int s : cfg.temporal_after) {
      if (s < 1 || s > static_cast<int>(stages.size())) {
        throw ValidationError("temporal block after stage " + std::to_string(s) + ", but the backbone has " +
                              std::to_string(stages.size()) + " stages");
      }
    }
  }

  Builder b{g};
  LayerSpec in;
  in.name = "clips";
  in.kind = LayerKind::Input;
  in.role = "input";
  in.rank = 5;
  in.channel_axis = 2;
  in.in_channels = 3 * cfg.n;
  g.add(in);
  b.op("merge", LayerKind::MergeTime, {"clips"}, "reshape", "input");
  std::string cur = b.conv_bn_relu_stem("merge", 3 * cfg.n, cfg.backbone.stem);
  std::int64_t c = cfg.backbone.stem.channels;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const int stage = static_cast<int>(s) + 1;
    const std::string block = "res" + std::to_string(stage);
    for (int k = 0; k < stages[s].blocks; ++k) {
      cur = b.residual(block + "." + std::to_string(k + 1), cur, c, stages[s].channels, k == 0 ? stages[s].stride : 1,
                       block);
      c = stages[s].channels;
    }
    if (with_temporal && std::find(cfg.temporal_after.begin(), cfg.temporal_after.end(), stage) !=
                             cfg.temporal_after.end()) {
      cur = b.temporal(stage, cur, c, cfg.residual_temporal_block);
      inserted.push_back({{"after_stage", stage}, {"channels", c}, {"block", "temporal" + std::to_string(stage)}});
    }
  }
  LayerSpec gap;
  gap.name = "gap";
  gap.kind = LayerKind::GlobalPool;
  gap.inputs = {cur};
  gap.role = "head";
  gap.block = "head";
  gap.pool = kernels::PoolKind::Avg;
  g.add(gap);
  return "gap";
}

void common_meta(ModelGraph& g, const StNetCfg& cfg) {
  g.meta()["n"] = cfg.n;
  g.meta()["input_channels"] = 3 * cfg.n;
  g.meta()["num_classes"] = cfg.num_classes;
  g.meta()["last_channels"] = cfg.backbone.stages.back().channels;
}

}  // namespace

ModelGraph build_stnet(const StNetCfg& cfg) {
  ModelGraph g("stnet");
  nlohmann::json inserted = nlohmann::json::array();
  trunk(g, cfg, true, inserted);
  const std::int64_t c_last = cfg.backbone.stages.back().channels;
  Builder b{g};
  b.op("to_sequence", LayerKind::ToSequence, {"gap"}, "head", "head");
  const std::string head = add_txn(g, "txn", "to_sequence", c_last, cfg.txn);
  LayerSpec fc;
  fc.name = "fc";
  fc.kind = LayerKind::Linear;
  fc.inputs = {head};
  fc.role = "classifier";
  fc.block = "fc";
  fc.in_channels = cfg.txn.out_channels(c_last);
  fc.out_channels = cfg.num_classes;
  fc.bias = true;
  g.add(fc);
  g.set_output("fc");
  common_meta(g, cfg);
  g.meta()["architecture"] = "stnet";
  g.meta()["temporal_blocks"] = inserted;
  g.meta()["residual_temporal_block"] = cfg.residual_temporal_block;
  return g;
}

ModelGraph build_tsn(const StNetCfg& cfg) {
  ModelGraph g("tsn");
  nlohmann::json inserted = nlohmann::json::array();
  trunk(g, cfg, false, inserted);
  LayerSpec fc;
  fc.name = "fc";
  fc.kind = LayerKind::Linear;
  fc.inputs = {"gap"};
  fc.role = "classifier";
  fc.block = "fc";
  fc.in_channels = cfg.backbone.stages.back().channels;
  fc.out_channels = cfg.num_classes;
  fc.bias = true;
  g.add(fc);
  Builder b{g};
  b.op("segment_mean", LayerKind::MeanOverTime, {"fc"}, "head", "head");
  g.set_output("segment_mean");
  common_meta(g, cfg);
  g.meta()["architecture"] = "tsn";
  g.meta()["temporal_blocks"] = inserted;
  return g;
}

std::vector<TemporalBlockSpec> temporal_blocks(const ModelGraph& graph) {
  std::vector<TemporalBlockSpec> out;
  if (!graph.meta().contains("temporal_blocks")) return out;
  for (const auto& e : graph.meta()["temporal_blocks"]) {
    out.push_back({e.at("after_stage").get<int>(), e.at("channels").get<std::int64_t>()});
  }
  return out;
}

namespace {

std::uint64_t name_stream(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, RngStream rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

template <typename T>
ParamSet<T> init_params(const ModelGraph& graph, std::uint64_t seed, const ParamSet<T>* base2d,
                        const InitOptions& opt) {
  ParamSet<T> ps;
  auto from_base = [&](const ParamSpec& spec) -> const Tensor<T>* {
    if (!base2d || !base2d->contains(spec.name)) return nullptr;
    const Tensor<T>& v = base2d->at(spec.name);
    if (v.shape() != spec.shape) {
      throw ShapeError("base2d '" + spec.name + "' has shape " + shape_str(v.shape()) + ", expected " +
                       shape_str(spec.shape));
    }
    return &v;
  };

  for (const auto& l : graph.layers()) {
    for (const auto& spec : layer_params(l)) {
      RngStream rng(seed, name_stream(spec.name));
      const std::string suffix = spec.name.substr(l.name.size() + 1);
      Tensor<T> value(spec.shape);
      switch (l.kind) {
        case LayerKind::Conv: {
          const bool temporal = l.rank != 2 && l.kernel[0] > 1 && opt.paper_temporal_init;
          if (suffix == "bias") break;
          if (temporal) {
            value.fill(static_cast<T>(1.0 / (3.0 * static_cast<double>(l.in_channels))));
            break;
          }
          const bool stem = l.name == "conv1" && l.rank == 2 && graph.meta().contains("n");
          if (stem) {
            const auto n = graph.meta()["n"].get<std::int64_t>();
            Shape shape2d = spec.shape;
            shape2d[1] = 3;
            Tensor<T> w2d;
            if (base2d && base2d->contains(spec.name)) {
              w2d = base2d->at(spec.name);
              if (w2d.shape() != shape2d) {
                throw ShapeError("base2d 'conv1.weight' has shape " + shape_str(w2d.shape()) + ", expected " +
                                 shape_str(shape2d));
              }
            } else {
              const double fan_in = 3.0 * l.kernel[0] * l.kernel[1];
              w2d = uniform_tensor<T>(shape2d, std::sqrt(6.0 / fan_in), rng);
            }
            value = inflate_conv1_weights(w2d, n);
            break;
          }
          if (const Tensor<T>* b = from_base(spec)) {
            value = *b;
            break;
          }
          double fan_in = static_cast<double>(l.in_channels / l.groups);
          for (int k : l.kernel) fan_in *= k;
          value = uniform_tensor<T>(spec.shape, std::sqrt(6.0 / fan_in), rng);
          break;
        }
        case LayerKind::BatchNorm:
          if (l.role == "backbone" || l.role == "stem") {
            if (const Tensor<T>* b = from_base(spec)) {
              value = *b;
              break;
            }
          }
          if (suffix == "gamma" || suffix == "running_var") value.fill(T{1});
          break;
        case LayerKind::Linear:
          if (suffix == "weight") {
            value = uniform_tensor<T>(spec.shape, 1.0 / std::sqrt(static_cast<double>(l.in_channels)), rng);
          }
          break;
        default:
          break;
      }
      ps.add(spec.name, std::move(value), spec.trainable);
    }
  }
  return ps;
}

namespace {

template <typename T>
void check_batch(const ModelGraph& graph, const SuperImageBatch<T>& batch) {
  const auto expected = graph.meta().value("input_channels", std::int64_t{0});
  if (batch.clips.rank() != 5) {
    throw ShapeError("clips must be [B, T, 3N, H, W], got " + shape_str(batch.clips.shape()));
  }
  if (batch.clips.dim(2) != expected) {
    throw ShapeError("clip channel axis has " + std::to_string(batch.clips.dim(2)) + ", expected 3N=" +
                     std::to_string(expected));
  }
}

}  // namespace

template <typename T>
Tensor<T> forward_stnet(const ModelGraph& graph, ParamSet<T>& params, const SuperImageBatch<T>& batch, Mode mode) {
  check_batch(graph, batch);
  return predict(graph, params, InputMap<T>{{"clips", batch.clips}}, mode);
}

template <typename T>
Tensor<T> tsn_baseline_forward(const ModelGraph& graph, ParamSet<T>& params, const SuperImageBatch<T>& batch,
                               Mode mode) {
  check_batch(graph, batch);
  return predict(graph, params, InputMap<T>{{"clips", batch.clips}}, mode);
}

#define STNET_INSTANTIATE(T)                                                                                  \
  template ParamSet<T> init_params(const ModelGraph&, std::uint64_t, const ParamSet<T>*, const InitOptions&); \
  template Tensor<T> forward_stnet(const ModelGraph&, ParamSet<T>&, const SuperImageBatch<T>&, Mode);         \
  template Tensor<T> tsn_baseline_forward(const ModelGraph&, ParamSet<T>&, const SuperImageBatch<T>&, Mode);

STNET_INSTANTIATE(float)
STNET_INSTANTIATE(double)

#undef STNET_INSTANTIATE

}  // namespace stnet
