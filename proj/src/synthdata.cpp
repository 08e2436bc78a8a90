#include "stnet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "stnet/io.hpp"
#include "stnet/parallel.hpp"
#include "stnet/rng.hpp"

namespace stnet {

namespace {

constexpr std::uint64_t kTrainStream = 0x747261696eULL;
constexpr std::uint64_t kTestStream = 0x74657374ULL;
constexpr std::uint64_t kPermStream = 0x7065726dULL;
constexpr std::uint64_t kLengthStream = 0x6c656eULL;

std::string index_name(std::size_t i) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

// Saturating factorial, enough to compare against a class count.
std::int64_t factorial_capped(std::int64_t n, std::int64_t cap) {
  std::int64_t f = 1;
  for (std::int64_t k = 2; k <= n && f <= cap; ++k) f *= k;
  return f;
}

}  // namespace

FrameSequence temporal_order_base(const TemporalOrderCfg& cfg) {
  const std::int64_t F = cfg.frames, H = cfg.height, W = cfg.width;
  const std::int64_t len = F / cfg.blocks;
  const std::int64_t bar = std::max<std::int64_t>(2, W / 4);
  FrameSequence seq(F, H, W);
  for (std::int64_t f = 0; f < F; ++f) {
    const std::int64_t block = std::min(f / len, cfg.blocks - 1);
    const std::int64_t step = f - block * len;
    const double bpos = cfg.blocks > 1 ? static_cast<double>(block) / static_cast<double>(cfg.blocks - 1) : 0.0;
    const double spos = len > 1 ? static_cast<double>(std::min(step, len - 1)) / static_cast<double>(len - 1) : 0.0;
    const float color[3] = {static_cast<float>(0.2 + 0.6 * bpos), static_cast<float>(0.8 - 0.6 * bpos),
                            static_cast<float>(0.2 + 0.6 * spos)};
    const std::int64_t x0 = F > 1 ? (f * (W - bar)) / (F - 1) : 0;
    auto px = seq.frame(f);
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
          const bool on = x >= x0 && x < x0 + bar;
          px[static_cast<std::size_t>((c * H + y) * W + x)] = on ? color[c] : 0.1f;
        }
  }
  return seq;
}

std::vector<std::int64_t> temporal_order_frames(const TemporalOrderCfg& cfg, const std::vector<std::int64_t>& perm) {
  const std::int64_t len = cfg.frames / cfg.blocks;
  std::vector<std::int64_t> order;
  order.reserve(static_cast<std::size_t>(cfg.frames));
  for (std::int64_t b : perm)
    for (std::int64_t j = 0; j < len; ++j) order.push_back(b * len + j);
  for (std::int64_t f = cfg.blocks * len; f < cfg.frames; ++f) order.push_back(f);
  return order;
}

TemporalOrderData gen_temporal_order(const TemporalOrderCfg& cfg, std::uint64_t seed, int workers) {
  if (cfg.classes < 2) throw ValidationError("temporal_order: classes must be >= 2");
  if (cfg.frames < cfg.classes) throw ValidationError("temporal_order: frames must be >= classes");
  if (cfg.blocks < 1 || cfg.blocks > cfg.frames) throw ValidationError("temporal_order: blocks must be in [1, frames]");
  if (cfg.height < 1 || cfg.width < 1) throw ValidationError("temporal_order: frame size must be positive");
  if (cfg.noise < 0) throw ValidationError("temporal_order: noise must be >= 0");
  if (cfg.train < 0 || cfg.test < 0) throw ValidationError("temporal_order: split sizes must be >= 0");
  if (factorial_capped(cfg.blocks, cfg.classes) < cfg.classes) {
    throw ValidationError("temporal_order: " + std::to_string(cfg.classes) + " classes need distinct orderings, but " +
                          std::to_string(cfg.blocks) + " blocks only have " +
                          std::to_string(factorial_capped(cfg.blocks, cfg.classes)));
  }

  TemporalOrderData data;
  data.cfg = cfg;
  RngStream prng(seed, kPermStream);
  std::set<std::vector<std::int64_t>> seen;
  while (static_cast<int>(data.permutations.size()) < cfg.classes) {
    std::vector<std::int64_t> p(static_cast<std::size_t>(cfg.blocks));
    for (std::int64_t i = 0; i < cfg.blocks; ++i) p[static_cast<std::size_t>(i)] = i;
    prng.shuffle(p.begin(), p.end());
    if (seen.insert(p).second) data.permutations.push_back(p);
  }

  const FrameSequence base = temporal_order_base(cfg);
  std::vector<std::vector<std::int64_t>> orders;
  for (const auto& p : data.permutations) orders.push_back(temporal_order_frames(cfg, p));

  auto make = [&](std::vector<VideoSample>& out, int count, std::uint64_t stream) {
    out.resize(static_cast<std::size_t>(count));
    parallel_for(out.size(), workers, [&](std::size_t i) {
      RngStream rng = RngStream(seed, stream).split(i);
      const int label = static_cast<int>(i % static_cast<std::size_t>(cfg.classes));
      FrameSequence seq(cfg.frames, cfg.height, cfg.width);
      const auto& order = orders[static_cast<std::size_t>(label)];
      for (std::int64_t f = 0; f < cfg.frames; ++f) {
        const auto src = base.frame(order[static_cast<std::size_t>(f)]);
        auto dst = seq.frame(f);
        for (std::size_t k = 0; k < dst.size(); ++k) {
          const double v = src[k] + (cfg.noise > 0 ? cfg.noise * rng.normal() : 0.0);
          dst[k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
      out[i] = VideoSample{std::move(seq), label};
    });
  };
  make(data.train, cfg.train, kTrainStream);
  make(data.test, cfg.test, kTestStream);
  return data;
}

int MultimodalXorCfg::num_classes() const {
  const auto pairs = static_cast<int>(dims.size() / 2);
  return 1 << std::max(pairs, 1);
}

namespace {

// Label from the modality bits in name order.
int xor_label(const std::vector<int>& bits) {
  const std::size_t pairs = std::max<std::size_t>(bits.size() / 2, 1);
  std::vector<int> parity(pairs, 0);
  for (std::size_t m = 0; m < bits.size(); ++m) parity[std::min(m / 2, pairs - 1)] ^= bits[m];
  int y = 0;
  for (int p : parity) y = 2 * y + p;
  return y;
}

void probe_features(const Tensor<float>& seq, std::vector<double>& out) {
  const std::int64_t T = seq.dim(0), d = seq.dim(1);
  const double tbar = 0.5 * static_cast<double>(T - 1);
  double denom = 0.0;
  for (std::int64_t t = 0; t < T; ++t) denom += (t - tbar) * (t - tbar);
  for (std::int64_t c = 0; c < d; ++c) {
    double mean = 0.0, slope = 0.0;
    for (std::int64_t t = 0; t < T; ++t) {
      const double v = seq[t * d + c];
      mean += v;
      slope += (t - tbar) * v;
    }
    out.push_back(mean / static_cast<double>(T));
    out.push_back(denom > 0 ? slope / denom : 0.0);
  }
}

}  // namespace

double linear_probe_accuracy(const std::vector<BundleSample>& train, const std::vector<BundleSample>& test,
                             const std::string& modality, int num_classes) {
  if (train.empty() || test.empty()) throw ValidationError("linear probe needs non-empty splits");
  auto features = [&](const std::vector<BundleSample>& split) {
    std::vector<std::vector<double>> X;
    for (const auto& s : split) {
      std::vector<double> f;
      probe_features(s.bundle.sequences.at(modality), f);
      X.push_back(std::move(f));
    }
    return X;
  };
  auto Xtr = features(train), Xte = features(test);
  const std::size_t D = Xtr.front().size();
  const auto K = static_cast<std::size_t>(num_classes);

  std::vector<double> mu(D, 0.0), sd(D, 0.0);
  for (const auto& x : Xtr)
    for (std::size_t j = 0; j < D; ++j) mu[j] += x[j];
  for (auto& m : mu) m /= static_cast<double>(Xtr.size());
  for (const auto& x : Xtr)
    for (std::size_t j = 0; j < D; ++j) sd[j] += (x[j] - mu[j]) * (x[j] - mu[j]);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(Xtr.size())) + 1e-8;
  for (auto* X : {&Xtr, &Xte})
    for (auto& x : *X)
      for (std::size_t j = 0; j < D; ++j) x[j] = (x[j] - mu[j]) / sd[j];

  std::vector<double> W((D + 1) * K, 0.0), G(W.size()), p(K);
  auto scores = [&](const std::vector<double>& x, std::vector<double>& s) {
    for (std::size_t k = 0; k < K; ++k) {
      double a = W[D * K + k];
      for (std::size_t j = 0; j < D; ++j) a += x[j] * W[j * K + k];
      s[k] = a;
    }
  };
  constexpr int kIters = 300;
  constexpr double kLr = 0.5, kL2 = 1e-3;
  const double inv_n = 1.0 / static_cast<double>(Xtr.size());
  for (int it = 0; it < kIters; ++it) {
    std::fill(G.begin(), G.end(), 0.0);
    for (std::size_t i = 0; i < Xtr.size(); ++i) {
      scores(Xtr[i], p);
      const double mx = *std::max_element(p.begin(), p.end());
      double z = 0.0;
      for (auto& v : p) z += (v = std::exp(v - mx));
      for (std::size_t k = 0; k < K; ++k) {
        const double g = (p[k] / z - (static_cast<int>(k) == train[i].label ? 1.0 : 0.0)) * inv_n;
        for (std::size_t j = 0; j < D; ++j) G[j * K + k] += g * Xtr[i][j];
        G[D * K + k] += g;
      }
    }
    for (std::size_t q = 0; q < W.size(); ++q) W[q] -= kLr * (G[q] + (q < D * K ? kL2 * W[q] : 0.0));
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < Xte.size(); ++i) {
    scores(Xte[i], p);
    const auto best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    hits += best == test[i].label;
  }
  return static_cast<double>(hits) / static_cast<double>(Xte.size());
}

MultimodalXorData gen_multimodal_xor(const MultimodalXorCfg& cfg, std::uint64_t seed, int workers) {
  if (cfg.dims.size() < 2) throw ValidationError("multimodal_xor: at least 2 modalities are required");
  if (cfg.t_min < 1 || cfg.t_max < cfg.t_min) throw ValidationError("multimodal_xor: need 1 <= t_min <= t_max");
  if (cfg.train < 1 || cfg.test < 1) throw ValidationError("multimodal_xor: split sizes must be positive");
  if (cfg.max_attempts < 1) throw ValidationError("multimodal_xor: max_attempts must be >= 1");
  const int K = cfg.num_classes();
  for (const auto& [m, d] : cfg.dims) {
    if (d < 4 + K) {
      throw ValidationError("multimodal_xor: modality '" + m + "' needs dim >= " + std::to_string(4 + K) +
                            " (4 bit channels + " + std::to_string(K) + " cue channels)");
    }
  }

  std::vector<std::string> names;
  for (const auto& [m, d] : cfg.dims) names.push_back(m);

  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    MultimodalXorData data;
    data.cfg = cfg;
    data.num_classes = K;
    data.attempt = attempt;
    RngStream lrng(seed, kLengthStream + static_cast<std::uint64_t>(attempt));
    for (const auto& m : names) data.lengths[m] = lrng.uniform_int(cfg.t_min, cfg.t_max);

    auto make = [&](std::vector<BundleSample>& out, int count, std::uint64_t stream) {
      out.resize(static_cast<std::size_t>(count));
      const RngStream split_rng = RngStream(seed, stream).split(static_cast<std::uint64_t>(attempt));
      parallel_for(out.size(), workers, [&](std::size_t i) {
        RngStream rng = split_rng.split(i);
        std::vector<int> bits;
        for (std::size_t m = 0; m < names.size(); ++m) bits.push_back(rng.uniform() < 0.5 ? 0 : 1);
        const int label = xor_label(bits);
        BundleSample s;
        s.label = label;
        for (std::size_t m = 0; m < names.size(); ++m) {
          const std::int64_t T = data.lengths.at(names[m]);
          const std::int64_t d = cfg.dims.at(names[m]);
          Tensor<float> seq({T, d});
          std::vector<double> offset(static_cast<std::size_t>(K));
          for (auto& o : offset) o = rng.normal();
          const double sign = bits[m] ? 1.0 : -1.0;
          for (std::int64_t t = 0; t < T; ++t) {
            const double ramp = T > 1 ? 2.0 * static_cast<double>(t) / static_cast<double>(T - 1) - 1.0 : 0.0;
            for (std::int64_t c = 0; c < d; ++c) {
              double v = cfg.noise * rng.normal();
              if (c < 4) {
                v += sign * cfg.amplitude * ramp;
              } else if (c < 4 + K) {
                const auto k = static_cast<std::size_t>(c - 4);
                v += (static_cast<int>(k) == label ? cfg.cue : 0.0) + offset[k];
              }
              seq[t * d + c] = static_cast<float>(v);
            }
          }
          s.bundle.sequences.emplace(names[m], std::move(seq));
        }
        out[i] = std::move(s);
      });
    };
    make(data.train, cfg.train, kTrainStream);
    make(data.test, cfg.test, kTestStream);

    bool ok = true;
    for (const auto& m : names) {
      const double acc = linear_probe_accuracy(data.train, data.test, m, K);
      data.probe_accuracy[m] = acc;
      ok = ok && acc <= cfg.probe_limit;
    }
    if (ok) return data;
  }
  throw Error("multimodal_xor: a single-modality linear probe exceeded " + std::to_string(cfg.probe_limit) +
              " accuracy in all " + std::to_string(cfg.max_attempts) + " generation attempts");
}

namespace {

void save_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  io::write_json(path, nlohmann::json{{"labels", labels}});
}

std::vector<int> load_labels(const std::filesystem::path& split_dir) {
  const auto j = io::read_json(split_dir / "labels.json");
  return j.at("labels").get<std::vector<int>>();
}

}  // namespace

void save_temporal_order(const TemporalOrderData& data, const std::filesystem::path& dir) {
  for (const auto& [name, split] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
    std::vector<int> labels;
    for (std::size_t i = 0; i < split->size(); ++i) {
      write_clip(dir / name / (index_name(i) + ".clip"), (*split)[i].seq);
      labels.push_back((*split)[i].label);
    }
    save_labels(dir / name / "labels.json", labels);
  }
  nlohmann::json perms = data.permutations;
  io::write_json(dir / "dataset.json", {{"kind", "temporal_order"},
                                        {"classes", data.cfg.classes},
                                        {"frames", data.cfg.frames},
                                        {"height", data.cfg.height},
                                        {"width", data.cfg.width},
                                        {"noise", data.cfg.noise},
                                        {"blocks", data.cfg.blocks},
                                        {"permutations", perms}});
}

void save_multimodal_xor(const MultimodalXorData& data, const std::filesystem::path& dir) {
  for (const auto& [name, split] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
    std::vector<int> labels;
    for (std::size_t i = 0; i < split->size(); ++i) {
      save_bundle((*split)[i].bundle, dir / name / index_name(i));
      labels.push_back((*split)[i].label);
    }
    save_labels(dir / name / "labels.json", labels);
  }
  nlohmann::json dims = data.cfg.dims;
  io::write_json(dir / "dataset.json", {{"kind", "multimodal_xor"},
                                        {"num_classes", data.num_classes},
                                        {"dims", dims},
                                        {"lengths", data.lengths},
                                        {"attempt", data.attempt},
                                        {"probe_accuracy", data.probe_accuracy}});
}

std::vector<VideoSample> load_video_split(const std::filesystem::path& split_dir) {
  const auto labels = load_labels(split_dir);
  std::vector<VideoSample> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out.push_back({read_clip(split_dir / (index_name(i) + ".clip")), labels[i]});
  }
  return out;
}

std::vector<BundleSample> load_bundle_split(const std::filesystem::path& split_dir) {
  const auto labels = load_labels(split_dir);
  std::vector<BundleSample> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out.push_back({load_bundle(split_dir / index_name(i)), labels[i]});
  }
  return out;
}

}  // namespace stnet
