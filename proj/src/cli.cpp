#include "stnet/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "stnet/ablation.hpp"
#include "stnet/io.hpp"

namespace stnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string dtype;
  std::optional<std::int64_t> t_train, t_eval, n_frames;
  std::optional<int> workers;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON run config (defaults for every missing field)");
  app->add_option("--seed", f.seed, "seed for all randomness");
  app->add_option("--out", f.out, "output directory; nothing is written outside it");
  app->add_option("--dtype", f.dtype, "f32 or f64");
  app->add_option("--t-train", f.t_train, "segments per clip during training");
  app->add_option("--t-eval", f.t_eval, "segments per clip during evaluation");
  app->add_option("--n-frames", f.n_frames, "frames per segment (N)");
  app->add_option("--workers", f.workers, "threads for data generation and evaluation");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.dtype.empty()) cfg.dtype = parse_dtype(f.dtype);
  if (f.t_train) cfg.t_train = *f.t_train;
  if (f.t_eval) cfg.t_eval = *f.t_eval;
  if (f.n_frames) cfg.n_frames = *f.n_frames;
  if (f.workers) cfg.workers = *f.workers;
  cfg.validate();
  return cfg;
}

fs::path require_out(const CommonFlags& f, const std::string& cmd) {
  if (f.out.empty()) throw ValidationError(cmd + ": --out is required");
  fs::create_directories(f.out);
  return fs::path(f.out);
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Timestamps live in meta.json so report.json stays reproducible.
struct Meta {
  std::string command;
  std::vector<std::string> args;
  std::string started = utc_now();
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  void write(const fs::path& dir) const {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    io::write_json(dir / "meta.json",
                   {{"command", command}, {"argv", args}, {"started", started}, {"finished", utc_now()},
                    {"seconds", secs}});
  }
};

struct LoadedData {
  std::vector<VideoSample> video_train, video_test;
  std::vector<BundleSample> bundle_train, bundle_test;
};

LoadedData load_data(const RunConfig& cfg, const std::string& data_dir, bool need_train) {
  LoadedData d;
  if (!data_dir.empty()) {
    const fs::path dir(data_dir);
    if (cfg.video_model()) {
      if (need_train) d.video_train = load_video_split(dir / "train");
      d.video_test = load_video_split(dir / "test");
    } else {
      if (need_train) d.bundle_train = load_bundle_split(dir / "train");
      d.bundle_test = load_bundle_split(dir / "test");
    }
    return d;
  }
  if (cfg.video_model()) {
    auto g = gen_temporal_order(cfg.temporal_order, cfg.seed, cfg.workers);
    d.video_train = std::move(g.train);
    d.video_test = std::move(g.test);
  } else {
    auto g = gen_multimodal_xor(cfg.multimodal_xor, cfg.seed, cfg.workers);
    d.bundle_train = std::move(g.train);
    d.bundle_test = std::move(g.test);
  }
  return d;
}

std::vector<std::string> model_modalities(const ModelGraph& g) { return g.input_names(); }

template <typename T>
void check_params_match(const ModelGraph& graph, const ParamSet<T>& params) {
  for (const auto& spec : graph.param_specs()) {
    if (!params.contains(spec.name)) throw ValidationError("params are missing '" + spec.name + "'");
    if (params.at(spec.name).shape() != spec.shape) {
      throw ShapeError("param '" + spec.name + "' has shape " + shape_str(params.at(spec.name).shape()) +
                       ", model expects " + shape_str(spec.shape));
    }
  }
}

template <typename T>
json eval_all(const RunConfig& cfg, const ModelGraph& graph, const ParamSet<T>& params, const LoadedData& data,
              json& scores_out) {
  json evals = json::object();
  if (cfg.video_model()) {
    std::vector<std::int64_t> ts{cfg.t_train};
    if (cfg.t_eval != cfg.t_train) ts.push_back(cfg.t_eval);
    for (auto t : ts) {
      VideoDataset<T> ds(data.video_test, t, cfg.n_frames, cfg.normalization);
      const EvalReport r = evaluate(graph, params, ds, {}, cfg.eval_batch, cfg.workers);
      evals["T=" + std::to_string(t)] = r.to_json();
      if (t == cfg.t_eval) scores_out = r.to_json(true);
    }
  } else {
    BundleDataset<T> ds(data.bundle_test, model_modalities(graph));
    const EvalReport r = evaluate(graph, params, ds, {}, cfg.eval_batch, cfg.workers);
    evals["test"] = r.to_json();
    scores_out = r.to_json(true);
  }
  return evals;
}

template <typename T>
void do_train(const RunConfig& cfg, const std::string& data_dir, const fs::path& out, std::ostream& os) {
  const ModelGraph graph = build_model(cfg);
  const LoadedData data = load_data(cfg, data_dir, true);
  ParamSet<T> params = init_params<T>(graph, cfg.seed, nullptr, cfg.init);
  std::vector<CurvePoint> curve;
  if (cfg.video_model()) {
    VideoDataset<T> ds(data.video_train, cfg.t_train, cfg.n_frames, cfg.normalization);
    OptimCfg o = cfg.video_optim;
    o.seed = cfg.seed;
    curve = train(graph, params, ds, o);
  } else {
    BundleDataset<T> ds(data.bundle_train, model_modalities(graph));
    OptimCfg o = cfg.sequence_optim;
    o.seed = cfg.seed;
    curve = train(graph, params, ds, o);
  }
  save_params(params, out / "params");
  io::write_json(out / "graph.json", graph.to_json());
  io::write_text(out / "curve.csv", curve_csv(curve));
  json scores;
  const json evals = eval_all(cfg, graph, params, data, scores);
  io::write_json(out / "scores.json", scores);
  const json report{{"model", cfg.model},
                    {"seed", cfg.seed},
                    {"params", graph.param_count()},
                    {"final_train_loss", curve.empty() ? 0.0 : curve.back().loss},
                    {"eval", evals}};
  io::write_json(out / "report.json", report);
  os << report.dump(2) << '\n';
}

template <typename T>
void do_eval(const RunConfig& cfg, const std::string& params_dir, const std::string& data_dir, const fs::path& out,
             std::ostream& os) {
  const ModelGraph graph = build_model(cfg);
  const ParamSet<T> params = load_params<T>(params_dir);
  check_params_match(graph, params);
  const LoadedData data = load_data(cfg, data_dir, false);
  json scores;
  const json evals = eval_all(cfg, graph, params, data, scores);
  io::write_json(out / "scores.json", scores);
  const json report{{"model", cfg.model}, {"seed", cfg.seed}, {"eval", evals}};
  io::write_json(out / "report.json", report);
  os << report.dump(2) << '\n';
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Tensor<double> scores_tensor(const json& j, const std::string& src) {
  const auto rows = j.at("scores").get<std::vector<std::vector<double>>>();
  if (rows.empty() || rows.front().empty()) throw ValidationError("no scores in " + src);
  const auto B = static_cast<std::int64_t>(rows.size()), K = static_cast<std::int64_t>(rows.front().size());
  Tensor<double> t({B, K});
  for (std::int64_t b = 0; b < B; ++b) {
    if (static_cast<std::int64_t>(rows[static_cast<std::size_t>(b)].size()) != K) {
      throw ShapeError("ragged score rows in " + src);
    }
    std::copy(rows[static_cast<std::size_t>(b)].begin(), rows[static_cast<std::size_t>(b)].end(), t.ptr() + b * K);
  }
  return t;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"StNet / iTXN toy experiments"};
  app.name("stnet");
  app.require_subcommand(1);

  CommonFlags f;
  std::string model, name, params_dir, data_dir, runs, weights, dataset;

  auto* describe = app.add_subcommand("describe", "per-layer parameter report of a model");
  add_common(describe, f);
  describe->add_option("--model", model, "stnet | tsn | itxn | txn:<modality>");

  auto* gradcheck = app.add_subcommand("gradcheck", "compare autodiff gradients with finite differences (f64)");
  add_common(gradcheck, f);
  gradcheck->add_option("--model", model, "stnet | tsn | itxn | txn:<modality>");

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  add_common(gen, f);
  gen->add_option("--dataset", dataset, "temporal_order | multimodal_xor (default: the model's)");

  auto* trn = app.add_subcommand("train", "train a model and evaluate it on the test split");
  add_common(trn, f);
  trn->add_option("--model", model, "stnet | tsn | itxn | txn:<modality>");
  trn->add_option("--data", data_dir, "dataset directory from gen-data (default: generate from the seed)");

  auto* ev = app.add_subcommand("eval", "evaluate saved parameters on the test split");
  add_common(ev, f);
  ev->add_option("--model", model, "stnet | tsn | itxn | txn:<modality>");
  ev->add_option("--params", params_dir, "parameter directory written by train")->required();
  ev->add_option("--data", data_dir, "dataset directory from gen-data (default: generate from the seed)");

  auto* abl = app.add_subcommand("ablate", "run a named ablation");
  add_common(abl, f);
  abl->add_option("--name", name, "stnet_vs_tsn | itxn_vs_single | t_transfer")->required();

  auto* ens = app.add_subcommand("ensemble", "weighted score averaging of saved runs");
  add_common(ens, f);
  ens->add_option("--runs", runs, "comma-separated run directories holding scores.json")->required();
  ens->add_option("--weights", weights, "comma-separated non-negative weights (default: equal)");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  Meta meta;
  meta.args = args;
  try {
    RunConfig cfg = resolve(f);
    if (!model.empty()) {
      cfg.model = model;
      cfg.validate();
    }
    if (describe->parsed()) {
      meta.command = "describe";
      const ModelGraph g = build_model(cfg);
      const std::string text = describe_text(g);
      out << text;
      if (!f.out.empty()) {
        const fs::path dir = require_out(f, "describe");
        io::write_text(dir / "describe.txt", text);
        io::write_json(dir / "describe.json", describe_json(g));
        io::write_json(dir / "config.json", config_to_json(cfg));
        meta.write(dir);
      }
      return 0;
    }
    if (gradcheck->parsed()) {
      meta.command = "gradcheck";
      if (cfg.dtype != DType::F64) throw ValidationError("gradcheck runs in f64 only; pass --dtype f64");
      const GradcheckReport r = gradcheck_model(cfg, cfg.seed);
      constexpr double kTol = 1e-5;
      out << "model " << cfg.model << "  coords " << r.coords_checked << "  max_rel_err " << std::scientific
          << std::setprecision(3) << r.max_rel_err << "  worst " << r.worst_param << '[' << r.worst_index << "]  at_floor " << r.coords_at_floor << "  refined " << r.coords_refined << "\n";
      for (const auto& [g, e] : r.group_max_rel_err) {
        out << "  " << g << ": " << e << " over " << r.group_coords.at(g) << " coords\n";
      }
      if (!f.out.empty()) {
        const fs::path dir = require_out(f, "gradcheck");
        json j = r.to_json();
        j["tolerance"] = kTol;
        j["passed"] = r.max_rel_err < kTol;
        io::write_json(dir / "gradcheck.json", j);
        io::write_json(dir / "config.json", config_to_json(cfg));
        meta.write(dir);
      }
      if (r.max_rel_err >= kTol) {
        err << "gradcheck failed: max_rel_err " << r.max_rel_err << " >= " << kTol << '\n';
        return 1;
      }
      return 0;
    }
    if (gen->parsed()) {
      meta.command = "gen-data";
      const fs::path dir = require_out(f, "gen-data");
      if (dataset.empty()) dataset = cfg.video_model() ? "temporal_order" : "multimodal_xor";
      if (dataset == "temporal_order") {
        save_temporal_order(gen_temporal_order(cfg.temporal_order, cfg.seed, cfg.workers), dir);
      } else if (dataset == "multimodal_xor") {
        save_multimodal_xor(gen_multimodal_xor(cfg.multimodal_xor, cfg.seed, cfg.workers), dir);
      } else {
        throw ValidationError("unknown dataset '" + dataset + "'; valid: temporal_order, multimodal_xor");
      }
      io::write_json(dir / "config.json", config_to_json(cfg));
      meta.write(dir);
      out << "wrote " << dataset << " to " << dir.string() << '\n';
      return 0;
    }
    if (trn->parsed()) {
      meta.command = "train";
      const fs::path dir = require_out(f, "train");
      io::write_json(dir / "config.json", config_to_json(cfg));
      if (cfg.dtype == DType::F64) {
        do_train<double>(cfg, data_dir, dir, out);
      } else {
        do_train<float>(cfg, data_dir, dir, out);
      }
      meta.write(dir);
      return 0;
    }
    if (ev->parsed()) {
      meta.command = "eval";
      const fs::path dir = require_out(f, "eval");
      io::write_json(dir / "config.json", config_to_json(cfg));
      if (cfg.dtype == DType::F64) {
        do_eval<double>(cfg, params_dir, data_dir, dir, out);
      } else {
        do_eval<float>(cfg, params_dir, data_dir, dir, out);
      }
      meta.write(dir);
      return 0;
    }
    if (abl->parsed()) {
      meta.command = "ablate";
      const fs::path dir = require_out(f, "ablate");
      io::write_json(dir / "config.json", config_to_json(cfg));
      const AblationResult r = run_ablation(name, cfg, cfg.seed, &dir);
      io::write_json(dir / "report.json", r.report);
      io::write_text(dir / "report.txt", r.text);
      out << r.text;
      meta.write(dir);
      return 0;
    }
    if (ens->parsed()) {
      meta.command = "ensemble";
      const fs::path dir = require_out(f, "ensemble");
      const auto run_dirs = split_list(runs);
      if (run_dirs.empty()) throw ValidationError("ensemble: --runs is empty");
      std::vector<double> w(run_dirs.size(), 1.0);
      if (!weights.empty()) {
        w.clear();
        for (const auto& s : split_list(weights)) {
          try {
            w.push_back(std::stod(s));
          } catch (const std::exception&) {
            throw ValidationError("ensemble: bad weight '" + s + "'");
          }
        }
      }
      std::vector<Tensor<double>> sets;
      std::vector<int> labels;
      json rows = json::array();
      for (const auto& rd : run_dirs) {
        const fs::path src = fs::path(rd) / "scores.json";
        const json j = io::read_json(src);
        sets.push_back(scores_tensor(j, src.string()));
        const auto l = j.at("labels").get<std::vector<int>>();
        if (!labels.empty() && l != labels) throw ValidationError("ensemble: runs were scored on different labels");
        labels = l;
        const EvalReport r = score_report(sets.back(), labels, {});
        rows.push_back({{"model", rd}, {"prec1", r.top1}, {"prec5", r.top5}});
      }
      const Tensor<double> avg = ensemble_average(sets, w);
      const EvalReport r = score_report(avg, labels, {});
      rows.push_back({{"model", "ensemble"}, {"prec1", r.top1}, {"prec5", r.top5}, {"weights", w}});
      const json report{{"ablation", "ensemble"}, {"seed", cfg.seed}, {"rows", rows}};
      io::write_json(dir / "report.json", report);
      io::write_json(dir / "config.json", config_to_json(cfg));
      const std::string text = report_table(report);
      io::write_text(dir / "report.txt", text);
      out << text;
      meta.write(dir);
      return 0;
    }
  } catch (const NonFiniteError& e) {
    err << "error: " << e.what() << " (layer: " << e.layer() << ")\n";
    return 2;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace stnet
