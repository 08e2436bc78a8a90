#include "stnet/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "stnet/parallel.hpp"
#include "stnet/rng.hpp"

namespace stnet {

namespace {

constexpr std::uint64_t kSampleStream = 0x73616d706c65ULL;
constexpr std::uint64_t kShuffleStream = 0x73687566ULL;

}  // namespace

template <typename T>
VideoDataset<T>::VideoDataset(const std::vector<VideoSample>& samples, std::int64_t segments, std::int64_t n,
                              FrameNormalization norm)
    : samples_(&samples), segments_(segments), n_(n), norm_(norm) {
  if (segments < 1 || n < 1) throw ValidationError("video dataset: T and N must be positive");
}

template <typename T>
InputMap<T> VideoDataset<T>::inputs(std::span<const std::size_t> idx, Mode mode, std::uint64_t seed,
                                    std::uint64_t epoch) const {
  if (idx.empty()) throw ValidationError("video dataset: empty batch");
  const auto& first = (*samples_)[idx[0]].seq;
  const std::int64_t H = first.height(), W = first.width();
  const auto B = static_cast<std::int64_t>(idx.size());
  Tensor<T> clips({B, segments_, 3 * n_, H, W});
  const std::int64_t per = segments_ * 3 * n_ * H * W;
  const RngStream base = RngStream(seed, kSampleStream).split(epoch);
  for (std::int64_t b = 0; b < B; ++b) {
    const std::size_t i = idx[static_cast<std::size_t>(b)];
    const auto& seq = (*samples_)[i].seq;
    if (seq.height() != H || seq.width() != W) throw ShapeError("video dataset: frame sizes differ within a batch");
    RngStream rng = base.split(i);
    const auto offsets = sample_segments(seq.count(), segments_, n_, mode, rng);
    const Tensor<T> img = build_super_image<T>(seq, offsets, n_, norm_);
    std::copy(img.data().begin(), img.data().end(), clips.ptr() + b * per);
  }
  return {{"clips", std::move(clips)}};
}

template <typename T>
BundleDataset<T>::BundleDataset(const std::vector<BundleSample>& samples, std::vector<std::string> modalities)
    : samples_(&samples), modalities_(std::move(modalities)) {
  if (modalities_.empty()) throw ValidationError("bundle dataset: no modalities selected");
}

template <typename T>
InputMap<T> BundleDataset<T>::inputs(std::span<const std::size_t> idx, Mode, std::uint64_t, std::uint64_t) const {
  std::vector<const ModalityBundle*> bundles;
  for (std::size_t i : idx) bundles.push_back(&(*samples_)[i].bundle);
  return bundle_inputs<T>(modalities_, bundles);
}

void OptimCfg::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("optim: lr must be finite and >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("optim: momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ValidationError("optim: weight_decay must be >= 0");
  if (epochs < 0) throw ValidationError("optim: epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("optim: batch_size must be >= 1");
  if (factor <= 0.0) throw ValidationError("optim: factor must be > 0");
}

double OptimCfg::lr_at(int epoch) const {
  double r = lr;
  for (int m : milestones) {
    if (epoch >= m) r *= factor;
  }
  return r;
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss,top1\n";
  for (const auto& p : curve) os << p.epoch << ',' << p.loss << ',' << p.top1 << '\n';
  return os.str();
}

namespace {

template <typename T>
int argmax_row(const Tensor<T>& logits, std::int64_t row) {
  const std::int64_t K = logits.dim(1);
  int best = 0;
  for (std::int64_t k = 1; k < K; ++k) {
    if (logits[row * K + k] > logits[row * K + best]) best = static_cast<int>(k);
  }
  return best;
}

}  // namespace

template <typename T>
std::vector<CurvePoint> train(const ModelGraph& graph, ParamSet<T>& params, const Dataset<T>& data,
                              const OptimCfg& opt) {
  opt.validate();
  if (data.size() == 0) throw ValidationError("train: empty dataset");
  std::map<std::string, Tensor<T>> velocity;
  for (const auto& [name, e] : params.entries()) {
    if (e.trainable) velocity.emplace(name, Tensor<T>(e.value.shape()));
  }

  std::vector<CurvePoint> curve;
  const RngStream shuffle_root(opt.seed, kShuffleStream);
  const std::size_t n = data.size();
  const auto bs = static_cast<std::size_t>(opt.batch_size);
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream srng = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    srng.shuffle(order.begin(), order.end());
    const T lr = static_cast<T>(opt.lr_at(epoch));
    const T mu = static_cast<T>(opt.momentum);
    const T wd = static_cast<T>(opt.weight_decay);

    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      std::size_t stop = std::min(n, start + bs);
      // A lone trailing sample would give degenerate batch statistics.
      if (stop - start == 1 && n > 1 && start > 0) break;
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(data.label(i));
      const InputMap<T> inputs = data.inputs(idx, Mode::Train, opt.seed, static_cast<std::uint64_t>(epoch));
      RunOptions ro;
      ro.check_finite = true;
      LossEval<T> ev = evaluate_loss(graph, params, inputs, labels, Mode::Train, true, ro);
      if (!std::isfinite(static_cast<double>(ev.loss))) {
        throw NonFiniteError("loss", "non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += static_cast<double>(ev.loss) * static_cast<double>(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) {
        correct += argmax_row(ev.logits, static_cast<std::int64_t>(b)) == labels[b];
      }
      seen += idx.size();

      for (auto& [name, v] : velocity) {
        Tensor<T>& w = params.at(name);
        const Tensor<T>& g = ev.grads.at(name);
        T* vp = v.ptr();
        T* wp = w.ptr();
        const T* gp = g.ptr();
        for (std::int64_t k = 0; k < w.numel(); ++k) {
          vp[k] = mu * vp[k] + gp[k] + wd * wp[k];
          wp[k] -= lr * vp[k];
        }
      }
    }
    curve.push_back({epoch + 1, loss_sum / static_cast<double>(std::max<std::size_t>(seen, 1)),
                     static_cast<double>(correct) / static_cast<double>(std::max<std::size_t>(seen, 1))});
  }
  return curve;
}

bool in_top_k(std::span<const double> scores, int label, int k) {
  const double s = scores[static_cast<std::size_t>(label)];
  int rank = 0;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const int ci = static_cast<int>(c);
    if (scores[c] > s || (scores[c] == s && ci < label)) ++rank;
  }
  return rank < k;
}

EvalReport score_report(const Tensor<double>& scores, std::span<const int> labels, std::span<const int> k_list) {
  if (scores.rank() != 2) throw ShapeError("scores must be [B, K], got " + shape_str(scores.shape()));
  const std::int64_t B = scores.dim(0), K = scores.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B) {
    throw ShapeError("score_report: " + std::to_string(labels.size()) + " labels for " + std::to_string(B) + " rows");
  }
  std::vector<int> ks(k_list.begin(), k_list.end());
  if (ks.empty()) ks = {1, static_cast<int>(std::min<std::int64_t>(5, K))};
  for (int k : ks) {
    if (k < 1 || k > K) {
      throw ValidationError("top-k: k=" + std::to_string(k) + " is outside [1, " + std::to_string(K) + "]");
    }
  }
  EvalReport r;
  r.scores = scores;
  r.labels.assign(labels.begin(), labels.end());
  std::vector<std::int64_t> class_total(static_cast<std::size_t>(K), 0), class_hit(static_cast<std::size_t>(K), 0);
  std::vector<std::int64_t> hits(ks.size(), 0);
  std::int64_t hit5 = 0;
  const int k5 = static_cast<int>(std::min<std::int64_t>(5, K));
  for (std::int64_t b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= K) throw ValidationError("label " + std::to_string(y) + " out of range");
    const std::span<const double> row(scores.ptr() + b * K, static_cast<std::size_t>(K));
    for (std::size_t q = 0; q < ks.size(); ++q) hits[q] += in_top_k(row, y, ks[q]);
    const bool top1 = in_top_k(row, y, 1);
    hit5 += in_top_k(row, y, k5);
    ++class_total[static_cast<std::size_t>(y)];
    class_hit[static_cast<std::size_t>(y)] += top1;
    r.top1 += top1;
  }
  const double inv = B > 0 ? 1.0 / static_cast<double>(B) : 0.0;
  r.top1 *= inv;
  r.top5 = static_cast<double>(hit5) * inv;
  for (std::size_t q = 0; q < ks.size(); ++q) r.topk.emplace_back(ks[q], static_cast<double>(hits[q]) * inv);
  for (std::int64_t k = 0; k < K; ++k) {
    const auto t = class_total[static_cast<std::size_t>(k)];
    r.per_class.push_back(t ? static_cast<double>(class_hit[static_cast<std::size_t>(k)]) / static_cast<double>(t)
                            : std::numeric_limits<double>::quiet_NaN());
  }
  return r;
}

nlohmann::json EvalReport::to_json(bool with_scores) const {
  nlohmann::json topk_j = nlohmann::json::object();
  for (const auto& [k, v] : topk) topk_j["top" + std::to_string(k)] = v;
  nlohmann::json j{{"top1", top1}, {"top5", top5}, {"topk", topk_j}, {"per_class", per_class}, {"loss", loss}};
  if (with_scores) {
    std::vector<std::vector<double>> rows;
    for (std::int64_t b = 0; b < scores.dim(0); ++b) {
      rows.emplace_back(scores.ptr() + b * scores.dim(1), scores.ptr() + (b + 1) * scores.dim(1));
    }
    j["scores"] = rows;
    j["labels"] = labels;
  }
  return j;
}

template <typename T>
EvalReport evaluate(const ModelGraph& graph, const ParamSet<T>& params, const Dataset<T>& data, std::vector<int> k_list,
                    int batch_size, int workers) {
  if (data.size() == 0) throw ValidationError("evaluate: empty dataset");
  if (batch_size < 1) throw ValidationError("evaluate: batch_size must be >= 1");
  const std::size_t n = data.size();
  const auto bs = static_cast<std::size_t>(batch_size);
  const std::size_t batches = (n + bs - 1) / bs;
  std::vector<Tensor<T>> outs(batches);
  parallel_for(batches, workers, [&](std::size_t q) {
    std::vector<std::size_t> idx;
    for (std::size_t i = q * bs; i < std::min(n, (q + 1) * bs); ++i) idx.push_back(i);
    outs[q] = predict_eval(graph, params, data.inputs(idx, Mode::Eval, 0, 0));
  });
  const std::int64_t K = outs.front().dim(1);
  Tensor<double> scores({static_cast<std::int64_t>(n), K});
  std::int64_t row = 0;
  for (const auto& o : outs) {
    for (std::int64_t k = 0; k < o.numel(); ++k) scores[row * K + k] = static_cast<double>(o[k]);
    row += o.dim(0);
  }
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) labels.push_back(data.label(i));
  EvalReport r = score_report(scores, labels, k_list);
  Tensor<double> probs;
  r.loss = kernels::softmax_xent_forward(scores, labels, &probs);
  return r;
}

Tensor<double> ensemble_average(std::span<const Tensor<double>> score_sets, std::span<const double> weights) {
  if (score_sets.empty()) throw ValidationError("ensemble: no score sets");
  if (weights.size() != score_sets.size()) {
    throw ValidationError("ensemble: " + std::to_string(weights.size()) + " weights for " +
                          std::to_string(score_sets.size()) + " score sets");
  }
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("ensemble: weights must be finite and >= 0");
    wsum += w;
  }
  if (wsum <= 0.0) throw ValidationError("ensemble: weights must not all be 0");
  const Shape& shape = score_sets.front().shape();
  if (shape.size() != 2) throw ShapeError("ensemble: scores must be [B, K], got " + shape_str(shape));
  for (const auto& s : score_sets) {
    if (s.shape() != shape) {
      throw ShapeError("ensemble: score set shape " + shape_str(s.shape()) + " differs from " + shape_str(shape));
    }
  }
  Tensor<double> acc(shape);
  for (std::size_t m = 0; m < score_sets.size(); ++m) {
    if (weights[m] == 0.0) continue;
    const Tensor<double> p = kernels::softmax(score_sets[m]);
    const double w = weights[m] / wsum;
    for (std::int64_t k = 0; k < acc.numel(); ++k) acc[k] += w * p[k];
  }
  const std::int64_t B = shape[0], K = shape[1];
  for (std::int64_t b = 0; b < B; ++b) {
    double z = 0.0;
    for (std::int64_t k = 0; k < K; ++k) z += acc[b * K + k];
    // Rows already normalized to rounding are left as is.
    if (std::abs(z - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(K)) continue;
    for (std::int64_t k = 0; k < K; ++k) acc[b * K + k] /= z;
  }
  return acc;
}

template class VideoDataset<float>;
template class VideoDataset<double>;
template class BundleDataset<float>;
template class BundleDataset<double>;

#define STNET_INSTANTIATE(T)                                                                                         \
  template std::vector<CurvePoint> train(const ModelGraph&, ParamSet<T>&, const Dataset<T>&, const OptimCfg&);     \
  template EvalReport evaluate(const ModelGraph&, const ParamSet<T>&, const Dataset<T>&, std::vector<int>, int, int);

STNET_INSTANTIATE(float)
STNET_INSTANTIATE(double)

#undef STNET_INSTANTIATE

}  // namespace stnet
