#include "stnet/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "stnet/io.hpp"

namespace stnet {

using nlohmann::json;

const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names{"stnet_vs_tsn", "itxn_vs_single", "t_transfer"};
  return names;
}

namespace {

std::uint64_t model_seed(std::uint64_t seed, const std::string& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : model) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return RngStream::value_at(seed, h, 0);
}

template <typename T>
struct Trained {
  ModelGraph graph;
  ParamSet<T> params;
  std::vector<CurvePoint> curve;
};

template <typename T>
Trained<T> fit(ModelGraph graph, const Dataset<T>& data, OptimCfg opt, const RunConfig& cfg, std::uint64_t seed,
               const std::string& slug) {
  Trained<T> t{std::move(graph), {}, {}};
  t.params = init_params<T>(t.graph, model_seed(seed, slug), nullptr, cfg.init);
  opt.seed = seed;
  t.curve = train(t.graph, t.params, data, opt);
  return t;
}

template <typename T>
void save_model(const std::filesystem::path* out, const std::string& slug, const Trained<T>& m,
                const std::vector<std::pair<std::string, const EvalReport*>>& evals) {
  if (!out) return;
  const auto dir = *out / slug;
  save_params(m.params, dir / "params");
  io::write_text(dir / "curve.csv", curve_csv(m.curve));
  io::write_json(dir / "graph.json", m.graph.to_json());
  json ev = json::object();
  for (const auto& [name, r] : evals) ev[name] = r->to_json(true);
  io::write_json(dir / "eval.json", ev);
}

json row(const std::string& model, const EvalReport& r, std::int64_t params, const std::vector<CurvePoint>* curve) {
  json j{{"model", model}, {"prec1", r.top1}, {"prec5", r.top5}, {"per_class", r.per_class}, {"test_loss", r.loss}};
  if (params >= 0) j["params"] = params;
  if (curve && !curve->empty()) j["final_train_loss"] = curve->back().loss;
  return j;
}

template <typename T>
json stnet_vs_tsn(const RunConfig& cfg, std::uint64_t seed, const std::filesystem::path* out, bool transfer) {
  const auto data = gen_temporal_order(cfg.temporal_order, seed, cfg.workers);
  const int K = cfg.temporal_order.classes;
  const StNetCfg scfg = cfg.stnet_cfg(K);
  VideoDataset<T> train_set(data.train, cfg.t_train, cfg.n_frames, cfg.normalization);
  VideoDataset<T> test_train_t(data.test, cfg.t_train, cfg.n_frames, cfg.normalization);

  json report{{"ablation", transfer ? "t_transfer" : "stnet_vs_tsn"},
              {"seed", seed},
              {"dtype", std::string(to_string(dtype_of<T>()))},
              {"dataset",
               {{"kind", "temporal_order"},
                {"classes", K},
                {"train", data.train.size()},
                {"test", data.test.size()},
                {"permutations", data.permutations}}},
              {"chance", 1.0 / K},
              {"n_frames", cfg.n_frames},
              {"t_train", cfg.t_train}};
  json rows = json::array();

  auto stnet = fit<T>(build_stnet(scfg), train_set, cfg.video_optim, cfg, seed, "stnet");
  const EvalReport st_eval = evaluate(stnet.graph, stnet.params, test_train_t, {}, cfg.eval_batch, cfg.workers);
  if (!transfer) {
    rows.push_back(row("StNet", st_eval, stnet.graph.param_count(), &stnet.curve));
    save_model<T>(out, "stnet", stnet, {{"t" + std::to_string(cfg.t_train), &st_eval}});
    auto tsn = fit<T>(build_tsn(scfg), train_set, cfg.video_optim, cfg, seed, "tsn");
    const EvalReport tsn_eval = evaluate(tsn.graph, tsn.params, test_train_t, {}, cfg.eval_batch, cfg.workers);
    rows.push_back(row("TSN-baseline", tsn_eval, tsn.graph.param_count(), &tsn.curve));
    save_model<T>(out, "tsn", tsn, {{"t" + std::to_string(cfg.t_train), &tsn_eval}});
    report["t_eval"] = cfg.t_train;
  } else {
    VideoDataset<T> test_eval_t(data.test, cfg.t_eval, cfg.n_frames, cfg.normalization);
    const EvalReport long_eval = evaluate(stnet.graph, stnet.params, test_eval_t, {}, cfg.eval_batch, cfg.workers);
    json a = row("StNet (T=" + std::to_string(cfg.t_train) + ")", st_eval, stnet.graph.param_count(), &stnet.curve);
    a["t_eval"] = cfg.t_train;
    json b = row("StNet (T=" + std::to_string(cfg.t_eval) + ")", long_eval, stnet.graph.param_count(), &stnet.curve);
    b["t_eval"] = cfg.t_eval;
    rows.push_back(a);
    rows.push_back(b);
    save_model<T>(out, "stnet", stnet,
                  {{"t" + std::to_string(cfg.t_train), &st_eval}, {"t" + std::to_string(cfg.t_eval), &long_eval}});
    report["t_eval"] = cfg.t_eval;
  }
  report["rows"] = rows;
  return report;
}

template <typename T>
json itxn_vs_single(const RunConfig& cfg, std::uint64_t seed, const std::filesystem::path* out) {
  const auto data = gen_multimodal_xor(cfg.multimodal_xor, seed, cfg.workers);
  const int K = data.num_classes;
  std::vector<std::string> modalities;
  for (const auto& [m, d] : cfg.multimodal_xor.dims) modalities.push_back(m);

  json report{{"ablation", "itxn_vs_single"},
              {"seed", seed},
              {"dtype", std::string(to_string(dtype_of<T>()))},
              {"dataset",
               {{"kind", "multimodal_xor"},
                {"classes", K},
                {"train", data.train.size()},
                {"test", data.test.size()},
                {"lengths", data.lengths},
                {"generation_attempt", data.attempt},
                {"probe_accuracy", data.probe_accuracy}}},
              {"chance", 1.0 / K}};
  json rows = json::array();

  BundleDataset<T> train_all(data.train, modalities), test_all(data.test, modalities);
  auto itxn = fit<T>(build_itxn(cfg.multimodal_xor.dims, cfg.txn, K), train_all, cfg.sequence_optim, cfg, seed, "itxn");
  const EvalReport it_eval = evaluate(itxn.graph, itxn.params, test_all, {}, cfg.eval_batch, cfg.workers);
  rows.push_back(row("iTXN", it_eval, itxn.graph.param_count(), &itxn.curve));
  save_model<T>(out, "itxn", itxn, {{"test", &it_eval}});

  std::vector<Tensor<double>> singles;
  std::vector<double> weights;
  std::vector<int> labels;
  for (const auto& m : modalities) {
    BundleDataset<T> tr(data.train, {m}), te(data.test, {m});
    const std::string slug = "txn_" + m;
    auto single = fit<T>(build_single_txn(m, cfg.multimodal_xor.dims.at(m), cfg.txn, K), tr, cfg.sequence_optim, cfg,
                         seed, slug);
    const EvalReport ev = evaluate(single.graph, single.params, te, {}, cfg.eval_batch, cfg.workers);
    rows.push_back(row("TXN[" + m + "]", ev, single.graph.param_count(), &single.curve));
    save_model<T>(out, slug, single, {{"test", &ev}});
    singles.push_back(ev.scores);
    weights.push_back(cfg.ensemble_weights.contains(m) ? cfg.ensemble_weights.at(m) : 1.0);
    labels = ev.labels;
  }
  const Tensor<double> ens = ensemble_average(singles, weights);
  EvalReport ens_eval = score_report(ens, labels, {});
  double nll = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) nll -= std::log(ens[static_cast<std::int64_t>(i) * K + labels[i]]);
  ens_eval.loss = nll / static_cast<double>(labels.size());
  json ens_row = row("Ensemble(single TXNs)", ens_eval, -1, nullptr);
  ens_row["weights"] = weights;
  rows.push_back(ens_row);
  report["rows"] = rows;
  return report;
}

template <typename T>
json dispatch(const std::string& name, const RunConfig& cfg, std::uint64_t seed, const std::filesystem::path* out) {
  if (name == "stnet_vs_tsn") return stnet_vs_tsn<T>(cfg, seed, out, false);
  if (name == "t_transfer") return stnet_vs_tsn<T>(cfg, seed, out, true);
  return itxn_vs_single<T>(cfg, seed, out);
}

}  // namespace

AblationResult run_ablation(const std::string& name, const RunConfig& cfg, std::uint64_t seed,
                            const std::filesystem::path* out) {
  const auto& names = ablation_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw ValidationError("unknown ablation '" + name + "'; valid names: " + list);
  }
  cfg.validate();
  AblationResult r;
  r.report = cfg.dtype == DType::F64 ? dispatch<double>(name, cfg, seed, out) : dispatch<float>(name, cfg, seed, out);
  r.text = report_table(r.report);
  return r;
}

GradcheckReport gradcheck_model(const RunConfig& cfg, std::uint64_t seed, const GradcheckOptions& opt) {
  const ModelGraph graph = build_model(cfg);
  const int K = config_num_classes(cfg);
  ParamSet<double> params = init_params<double>(graph, seed, nullptr, cfg.init);
  RngStream jitter(seed, 0x6a74ULL);
  for (auto& [name, e] : params.entries()) {
    if (!e.trainable) continue;
    double ss = 0.0;
    for (double v : e.value.data()) ss += v * v;
    const double rms = std::sqrt(ss / static_cast<double>(e.value.numel()));
    const double scale = 0.5 * (rms > 0.0 ? rms : 0.1);
    for (double& v : e.value.data()) v += scale * jitter.normal();
  }
  RngStream rng(seed, 0x6763ULL);
  InputMap<double> inputs;
  std::int64_t batch = 0;
  if (cfg.video_model()) {
    batch = 2;
    Tensor<double> clips({batch, 3, 3 * cfg.n_frames, 16, 16});
    for (auto& v : clips.data()) v = rng.uniform();
    inputs.emplace("clips", std::move(clips));
  } else {
    batch = 4;
    std::int64_t len = 3;
    for (const auto& name : graph.input_names()) {
      const std::int64_t d = graph.layer(name).in_channels;
      Tensor<double> x({batch, d, len++});
      for (auto& v : x.data()) v = rng.normal();
      inputs.emplace(name, std::move(x));
    }
  }
  std::vector<int> labels;
  for (std::int64_t b = 0; b < batch; ++b) labels.push_back(static_cast<int>(rng.uniform_int(0, K - 1)));
  GradcheckOptions o = opt;
  o.seed = seed;
  return gradcheck_graph(graph, params, inputs, labels, Mode::Train, o);
}

std::string report_table(const json& report) {
  std::ostringstream os;
  os << report.value("ablation", std::string("report")) << " (seed " << report.value("seed", std::uint64_t{0})
     << ")\n";
  std::size_t width = 5;
  for (const auto& r : report.at("rows")) width = std::max(width, r.at("model").get<std::string>().size());
  os << std::left << std::setw(static_cast<int>(width)) << "model" << "  " << std::right << std::setw(8) << "Prec@1"
     << "  " << std::setw(8) << "Prec@5" << '\n';
  os << std::string(width + 20, '-') << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& r : report.at("rows")) {
    os << std::left << std::setw(static_cast<int>(width)) << r.at("model").get<std::string>() << "  " << std::right
       << std::setw(8) << r.at("prec1").get<double>() << "  " << std::setw(8) << r.at("prec5").get<double>() << '\n';
  }
  return os.str();
}

}  // namespace stnet
