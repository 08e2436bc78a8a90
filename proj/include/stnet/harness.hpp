#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stnet/executor.hpp"
#include "stnet/synthdata.hpp"

namespace stnet {

// Labeled samples that can be stacked into graph inputs.
template <typename T>
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual int label(std::size_t i) const = 0;
  // Train-mode randomness for sample i in `epoch` comes from its own stream,
  // so a batch does not depend on which other samples it contains.
  virtual InputMap<T> inputs(std::span<const std::size_t> idx, Mode mode, std::uint64_t seed,
                             std::uint64_t epoch) const = 0;
};

// Video clips -> "clips" [B, T, 3N, H, W] via segment sampling.
template <typename T>
class VideoDataset final : public Dataset<T> {
 public:
  VideoDataset(const std::vector<VideoSample>& samples, std::int64_t segments, std::int64_t n,
               FrameNormalization norm = {});
  std::size_t size() const override { return samples_->size(); }
  int label(std::size_t i) const override { return (*samples_)[i].label; }
  InputMap<T> inputs(std::span<const std::size_t> idx, Mode mode, std::uint64_t seed,
                     std::uint64_t epoch) const override;

 private:
  const std::vector<VideoSample>* samples_;
  std::int64_t segments_, n_;
  FrameNormalization norm_;
};

// Modality bundles -> one [B, d_m, T_m] input per modality.
template <typename T>
class BundleDataset final : public Dataset<T> {
 public:
  BundleDataset(const std::vector<BundleSample>& samples, std::vector<std::string> modalities);
  std::size_t size() const override { return samples_->size(); }
  int label(std::size_t i) const override { return (*samples_)[i].label; }
  InputMap<T> inputs(std::span<const std::size_t> idx, Mode mode, std::uint64_t seed,
                     std::uint64_t epoch) const override;

 private:
  const std::vector<BundleSample>* samples_;
  std::vector<std::string> modalities_;
};

// SGD with momentum; lr * factor^(milestones passed) at each epoch.
struct OptimCfg {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 10;
  int batch_size = 16;
  std::vector<int> milestones;
  double factor = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  double lr_at(int epoch) const;
};

struct CurvePoint {
  int epoch = 0;
  double loss = 0.0;  // mean training loss
  double top1 = 0.0;  // training accuracy from the train-mode forward
};

std::string curve_csv(const std::vector<CurvePoint>& curve);

// Trains in place. Aborts with NonFiniteError naming the first layer whose
// output went non-finite.
template <typename T>
std::vector<CurvePoint> train(const ModelGraph& graph, ParamSet<T>& params, const Dataset<T>& data,
                              const OptimCfg& opt);

struct EvalReport {
  double top1 = 0.0;
  double top5 = 0.0;  // top-min(5, K)
  std::vector<std::pair<int, double>> topk;  // (k, accuracy) for every requested k
  std::vector<double> per_class;
  double loss = 0.0;
  Tensor<double> scores;  // [B, K] logits or probabilities
  std::vector<int> labels;

  nlohmann::json to_json(bool with_scores = false) const;
};

// Top-k from scores; ties broken toward the lower class index.
EvalReport score_report(const Tensor<double>& scores, std::span<const int> labels, std::span<const int> k_list);
bool in_top_k(std::span<const double> scores, int label, int k);

// Eval-mode forward over the whole dataset. `k_list` empty means {1, min(5, K)}.
template <typename T>
EvalReport evaluate(const ModelGraph& graph, const ParamSet<T>& params, const Dataset<T>& data,
                    std::vector<int> k_list = {}, int batch_size = 32, int workers = 1);

// Softmax each score set, weighted mean, renormalize rows.
Tensor<double> ensemble_average(std::span<const Tensor<double>> score_sets, std::span<const double> weights);

}  // namespace stnet
