#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "micronas/autodiff/tensor.hpp"
#include "micronas/supernet/model.hpp"

namespace micronas {

/// Feature batch in NHWC plus one integer label per sample. For anomaly test
/// sets `flags` marks anomalous samples; it is empty otherwise.
struct LabeledDataset {
  std::array<int, 3> sample_shape{};  // H, W, C
  int num_classes = 0;
  std::string split;  // "train" or "test"
  std::vector<double> features;
  std::vector<int> labels;
  std::vector<int> flags;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const {
    return static_cast<std::size_t>(sample_shape[0]) * sample_shape[1] * sample_shape[2];
  }
  std::span<const double> sample(std::size_t i) const {
    return std::span<const double>(features).subspan(i * sample_size(), sample_size());
  }
  /// [len(idx), H, W, C] constant tensor.
  ad::Tensor batch(std::span<const std::size_t> idx) const;
  std::vector<int> batch_labels(std::span<const std::size_t> idx) const;
  /// Throws ShapeError when sizes disagree or a label is out of range.
  void validate() const;
};

struct TaskData {
  LabeledDataset train;
  LabeledDataset test;
  std::vector<std::vector<double>> templates;  // one clean pattern per class
};

struct SpectrogramTaskSpec {
  int num_classes = 4;
  int samples_per_class = 100;  // per class, split train/test 3:1
  std::array<int, 3> shape{49, 10, 1};
  double jitter = 1.0;  // 0 gives exact templates
  std::uint64_t seed = 0;
};

/// Each class is a fixed pattern of frequency bands switching on and off in
/// time. Samples shift the pattern by up to 2 * jitter frames, rescale it and
/// add Gaussian noise of 0.35 * jitter.
TaskData gen_synthetic_spectrogram_task(const SpectrogramTaskSpec& spec);

struct AdTaskSpec {
  int num_machine_ids = 4;
  int train_per_id = 120;
  int test_normal_per_id = 40;
  int test_anomalous_per_id = 40;
  double perturbation = 1.0;  // 0 makes anomalies indistinguishable
  std::uint64_t seed = 0;
};

/// 32x32x1 machine sounds. Each ID has its own harmonic spacing and pulse
/// rate with random phases per sample. An anomalous sample blends in another
/// ID's signature and a transient burst, both scaled by `perturbation`.
/// Training samples are all normal; test flags mark anomalies.
TaskData gen_synthetic_ad_task(const AdTaskSpec& spec);

/// Arg-max accuracy of [N, K] logits; ties go to the lowest class index.
double accuracy_from_logits(std::span<const double> logits, std::size_t num_classes, std::span<const int> labels);
/// Forward in chunks of `batch` samples and score against the labels.
double evaluate_accuracy(const SupernetModel& model, const LabeledDataset& data, const DecisionWeights& z = {},
                         std::size_t batch = 128);

/// -softmax(logits)[machine_id] per sample.
std::vector<double> scores_from_logits(std::span<const double> logits, std::size_t num_ids,
                                       std::span<const int> machine_ids);
std::vector<double> anomaly_scores(const SupernetModel& classifier, const LabeledDataset& eval_set,
                                   std::size_t batch = 128);

/// Mann-Whitney AUC: P(anomalous > normal) + 0.5 P(tie). Exhaustive pair
/// counting up to 10^4 samples, mid-rank formula above.
double auc_roc(std::span<const double> scores, std::span<const int> is_anomalous);
double auc_all_pairs(std::span<const double> scores, std::span<const int> is_anomalous);
double auc_rank(std::span<const double> scores, std::span<const int> is_anomalous);

}  // namespace micronas
