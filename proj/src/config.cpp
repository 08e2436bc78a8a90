#include "stnet/config.hpp"

#include <set>

#include "stnet/io.hpp"

namespace stnet {

using nlohmann::json;

namespace {

// Rejects keys of `j` not in `allowed`, naming the enclosing section.
void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError("config: '" + section + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.contains(k)) throw ValidationError("config: unknown key '" + k + "' in " + section);
  }
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ValidationError("config: bad value for " + section + "." + key + ": " + e.what());
  }
}

json optim_json(const OptimCfg& o) {
  return {{"lr", o.lr},         {"momentum", o.momentum},     {"weight_decay", o.weight_decay},
          {"epochs", o.epochs}, {"batch_size", o.batch_size}, {"milestones", o.milestones},
          {"factor", o.factor}};
}

OptimCfg optim_from(const json& j, OptimCfg o, const std::string& s) {
  check_keys(j, s, {"lr", "momentum", "weight_decay", "epochs", "batch_size", "milestones", "factor"});
  read(j, "lr", o.lr, s);
  read(j, "momentum", o.momentum, s);
  read(j, "weight_decay", o.weight_decay, s);
  read(j, "epochs", o.epochs, s);
  read(j, "batch_size", o.batch_size, s);
  read(j, "milestones", o.milestones, s);
  read(j, "factor", o.factor, s);
  return o;
}

json txn_json(const TxnBlockCfg& t) {
  json units = json::array();
  for (const auto& u : t.units) {
    units.push_back({{"out_channels", u.out_channels},
                     {"kernel_size", u.kernel_size},
                     {"groups_mode", std::string(to_string(u.groups_mode))}});
  }
  return {{"bottleneck_channels", t.bottleneck_channels},
          {"units", units},
          {"head", t.head == kernels::PoolKind::Max ? "max" : "mean"}};
}

TxnBlockCfg txn_from(const json& j, TxnBlockCfg t) {
  check_keys(j, "txn", {"bottleneck_channels", "units", "head"});
  read(j, "bottleneck_channels", t.bottleneck_channels, "txn");
  if (j.contains("units")) {
    t.units.clear();
    for (const auto& u : j.at("units")) {
      check_keys(u, "txn.units[]", {"out_channels", "kernel_size", "groups_mode"});
      TxnUnitCfg unit;
      read(u, "out_channels", unit.out_channels, "txn.units[]");
      read(u, "kernel_size", unit.kernel_size, "txn.units[]");
      std::string gm = std::string(to_string(unit.groups_mode));
      read(u, "groups_mode", gm, "txn.units[]");
      unit.groups_mode = parse_groups_mode(gm);
      t.units.push_back(unit);
    }
  }
  if (j.contains("head")) {
    const std::string h = j.at("head").get<std::string>();
    if (h == "max") {
      t.head = kernels::PoolKind::Max;
    } else if (h == "mean") {
      t.head = kernels::PoolKind::Avg;
    } else {
      throw ValidationError("config: txn.head must be max or mean, got '" + h + "'");
    }
  }
  return t;
}

}  // namespace

StNetCfg RunConfig::stnet_cfg(int num_classes) const {
  StNetCfg c;
  c.backbone = backbone;
  c.n = n_frames;
  c.num_classes = num_classes;
  c.temporal_after = temporal_after;
  c.residual_temporal_block = residual_temporal_block;
  c.txn = txn;
  return c;
}

void RunConfig::validate() const {
  if (n_frames < 1) throw ValidationError("config: n_frames must be >= 1");
  if (t_train < 1 || t_eval < 1) throw ValidationError("config: t_train and t_eval must be >= 1");
  if (workers < 1) throw ValidationError("config: workers must be >= 1");
  if (eval_batch < 1) throw ValidationError("config: eval_batch must be >= 1");
  const bool known = model == "stnet" || model == "tsn" || model == "itxn" || model.rfind("txn:", 0) == 0;
  if (!known) throw ValidationError("config: model must be stnet, tsn, itxn or txn:<modality>, got '" + model + "'");
  if (model.rfind("txn:", 0) == 0 && !multimodal_xor.dims.contains(model.substr(4))) {
    throw ValidationError("config: model '" + model + "' names a modality not in multimodal_xor.dims");
  }
  backbone.validate();
  txn.validate();
  video_optim.validate();
  sequence_optim.validate();
  for (const auto& [m, w] : ensemble_weights) {
    if (!multimodal_xor.dims.contains(m)) throw ValidationError("config: ensemble weight for unknown modality " + m);
    if (!(w >= 0.0)) throw ValidationError("config: ensemble weights must be >= 0");
  }
}

int config_num_classes(const RunConfig& cfg) {
  return cfg.video_model() ? cfg.temporal_order.classes : cfg.multimodal_xor.num_classes();
}

ModelGraph build_model(const RunConfig& cfg, const std::string& model) {
  RunConfig c = cfg;
  if (!model.empty()) c.model = model;
  c.validate();
  const int K = config_num_classes(c);
  if (c.model == "stnet") return build_stnet(c.stnet_cfg(K));
  if (c.model == "tsn") return build_tsn(c.stnet_cfg(K));
  if (c.model == "itxn") return build_itxn(c.multimodal_xor.dims, c.txn, K);
  const std::string m = c.model.substr(4);
  return build_single_txn(m, c.multimodal_xor.dims.at(m), c.txn, K);
}

json config_to_json(const RunConfig& c) {
  json stages = json::array();
  for (const auto& s : c.backbone.stages) {
    stages.push_back({{"blocks", s.blocks}, {"channels", s.channels}, {"stride", s.stride}});
  }
  const auto& to = c.temporal_order;
  const auto& mx = c.multimodal_xor;
  return {
      {"seed", c.seed},
      {"dtype", std::string(to_string(c.dtype))},
      {"n_frames", c.n_frames},
      {"t_train", c.t_train},
      {"t_eval", c.t_eval},
      {"workers", c.workers},
      {"eval_batch", c.eval_batch},
      {"model", c.model},
      {"backbone",
       {{"stem", {{"channels", c.backbone.stem.channels}, {"kernel", c.backbone.stem.kernel}, {"stride", c.backbone.stem.stride}}},
        {"stages", stages}}},
      {"temporal", {{"after_stages", c.temporal_after}, {"residual", c.residual_temporal_block}}},
      {"txn", txn_json(c.txn)},
      {"init", {{"paper_temporal_init", c.init.paper_temporal_init}}},
      {"normalization",
       {{"enabled", c.normalization.enabled}, {"mean", c.normalization.mean}, {"std", c.normalization.stddev}}},
      {"temporal_order",
       {{"classes", to.classes},
        {"frames", to.frames},
        {"height", to.height},
        {"width", to.width},
        {"noise", to.noise},
        {"train", to.train},
        {"test", to.test},
        {"blocks", to.blocks}}},
      {"multimodal_xor",
       {{"dims", mx.dims},
        {"t_min", mx.t_min},
        {"t_max", mx.t_max},
        {"train", mx.train},
        {"test", mx.test},
        {"amplitude", mx.amplitude},
        {"noise", mx.noise},
        {"cue", mx.cue},
        {"probe_limit", mx.probe_limit},
        {"max_attempts", mx.max_attempts}}},
      {"video_optim", optim_json(c.video_optim)},
      {"sequence_optim", optim_json(c.sequence_optim)},
      {"ensemble_weights", c.ensemble_weights},
  };
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  check_keys(j, "config",
             {"seed", "dtype", "n_frames", "t_train", "t_eval", "workers", "eval_batch", "model", "backbone", "temporal",
              "txn", "init", "normalization", "temporal_order", "multimodal_xor", "video_optim", "sequence_optim",
              "ensemble_weights"});
  const std::string s = "config";
  read(j, "seed", c.seed, s);
  if (j.contains("dtype")) c.dtype = parse_dtype(j.at("dtype").get<std::string>());
  read(j, "n_frames", c.n_frames, s);
  read(j, "t_train", c.t_train, s);
  read(j, "t_eval", c.t_eval, s);
  read(j, "workers", c.workers, s);
  read(j, "eval_batch", c.eval_batch, s);
  read(j, "model", c.model, s);
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    check_keys(b, "backbone", {"stem", "stages"});
    if (b.contains("stem")) {
      check_keys(b.at("stem"), "backbone.stem", {"channels", "kernel", "stride"});
      read(b.at("stem"), "channels", c.backbone.stem.channels, "backbone.stem");
      read(b.at("stem"), "kernel", c.backbone.stem.kernel, "backbone.stem");
      read(b.at("stem"), "stride", c.backbone.stem.stride, "backbone.stem");
    }
    if (b.contains("stages")) {
      c.backbone.stages.clear();
      for (const auto& st : b.at("stages")) {
        check_keys(st, "backbone.stages[]", {"blocks", "channels", "stride"});
        StageSpec spec;
        read(st, "blocks", spec.blocks, "backbone.stages[]");
        read(st, "channels", spec.channels, "backbone.stages[]");
        read(st, "stride", spec.stride, "backbone.stages[]");
        c.backbone.stages.push_back(spec);
      }
    }
  }
  if (j.contains("temporal")) {
    check_keys(j.at("temporal"), "temporal", {"after_stages", "residual"});
    read(j.at("temporal"), "after_stages", c.temporal_after, "temporal");
    read(j.at("temporal"), "residual", c.residual_temporal_block, "temporal");
  }
  if (j.contains("txn")) c.txn = txn_from(j.at("txn"), c.txn);
  if (j.contains("init")) {
    check_keys(j.at("init"), "init", {"paper_temporal_init"});
    read(j.at("init"), "paper_temporal_init", c.init.paper_temporal_init, "init");
  }
  if (j.contains("normalization")) {
    const auto& n = j.at("normalization");
    check_keys(n, "normalization", {"enabled", "mean", "std"});
    read(n, "enabled", c.normalization.enabled, "normalization");
    read(n, "mean", c.normalization.mean, "normalization");
    read(n, "std", c.normalization.stddev, "normalization");
  }
  if (j.contains("temporal_order")) {
    const auto& t = j.at("temporal_order");
    const std::string ts = "temporal_order";
    check_keys(t, ts, {"classes", "frames", "height", "width", "noise", "train", "test", "blocks"});
    auto& to = c.temporal_order;
    read(t, "classes", to.classes, ts);
    read(t, "frames", to.frames, ts);
    read(t, "height", to.height, ts);
    read(t, "width", to.width, ts);
    read(t, "noise", to.noise, ts);
    read(t, "train", to.train, ts);
    read(t, "test", to.test, ts);
    read(t, "blocks", to.blocks, ts);
  }
  if (j.contains("multimodal_xor")) {
    const auto& m = j.at("multimodal_xor");
    const std::string ms = "multimodal_xor";
    check_keys(m, ms,
               {"dims", "t_min", "t_max", "train", "test", "amplitude", "noise", "cue", "probe_limit", "max_attempts"});
    auto& mx = c.multimodal_xor;
    read(m, "dims", mx.dims, ms);
    read(m, "t_min", mx.t_min, ms);
    read(m, "t_max", mx.t_max, ms);
    read(m, "train", mx.train, ms);
    read(m, "test", mx.test, ms);
    read(m, "amplitude", mx.amplitude, ms);
    read(m, "noise", mx.noise, ms);
    read(m, "cue", mx.cue, ms);
    read(m, "probe_limit", mx.probe_limit, ms);
    read(m, "max_attempts", mx.max_attempts, ms);
  }
  if (j.contains("video_optim")) c.video_optim = optim_from(j.at("video_optim"), c.video_optim, "video_optim");
  if (j.contains("sequence_optim")) {
    c.sequence_optim = optim_from(j.at("sequence_optim"), c.sequence_optim, "sequence_optim");
  }
  read(j, "ensemble_weights", c.ensemble_weights, s);
  return c;
}

RunConfig load_config(const std::string& path) {
  try {
    return config_from_json(io::read_json(path));
  } catch (const json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
}

}  // namespace stnet
