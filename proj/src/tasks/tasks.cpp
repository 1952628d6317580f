#include "micronas/tasks/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "micronas/autodiff/ops.hpp"
#include "micronas/errors.hpp"

namespace micronas {

using ad::Shape;
using ad::Tensor;

ad::Tensor LabeledDataset::batch(std::span<const std::size_t> idx) const {
  const std::size_t s = sample_size();
  std::vector<double> v;
  v.reserve(idx.size() * s);
  for (std::size_t i : idx) {
    if (i >= size()) throw ShapeError("batch index out of range");
    auto x = sample(i);
    v.insert(v.end(), x.begin(), x.end());
  }
  return Tensor::from(Shape{static_cast<std::int64_t>(idx.size()), sample_shape[0], sample_shape[1], sample_shape[2]},
                      std::move(v));
}

std::vector<int> LabeledDataset::batch_labels(std::span<const std::size_t> idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels.at(i));
  return out;
}

void LabeledDataset::validate() const {
  for (int d : sample_shape) {
    if (d <= 0) throw ShapeError("dataset sample shape must be positive");
  }
  if (num_classes < 1) throw ShapeError("dataset needs at least one class");
  if (features.size() != labels.size() * sample_size()) {
    throw ShapeError("dataset holds " + std::to_string(features.size()) + " values for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (!flags.empty() && flags.size() != labels.size()) throw ShapeError("dataset flag count differs from labels");
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw ShapeError("dataset label " + std::to_string(l) + " out of range");
  }
}

namespace {

std::size_t at3(const std::array<int, 3>& s, int h, int w, int c) {
  return (static_cast<std::size_t>(h) * s[1] + w) * s[2] + c;
}

std::vector<double> band_template(const std::array<int, 3>& shape, std::mt19937_64& rng) {
  const int H = shape[0], W = shape[1], C = shape[2];
  std::vector<double> t(static_cast<std::size_t>(H) * W * C, 0.0);
  std::uniform_int_distribution<int> freq(0, W - 1);
  std::uniform_int_distribution<int> width(1, std::max(1, W / 5));
  std::uniform_int_distribution<int> onset(0, std::max(0, H - H / 3));
  std::uniform_int_distribution<int> length(std::max(1, H / 4), std::max(1, (2 * H) / 3));
  for (int b = 0; b < 3; ++b) {
    const int f0 = freq(rng);
    const int fw = width(rng);
    const int t0 = onset(rng);
    const int t1 = std::min(H, t0 + length(rng));
    for (int c = 0; c < C; ++c) {
      for (int h = t0; h < t1; ++h) {
        for (int f = f0; f < std::min(W, f0 + fw); ++f) t[at3(shape, h, f, c)] += 1.0;
      }
    }
  }
  return t;
}

void append_sample(LabeledDataset& d, std::vector<double> x, int label, int flag = -1) {
  d.features.insert(d.features.end(), x.begin(), x.end());
  d.labels.push_back(label);
  if (flag >= 0) d.flags.push_back(flag);
}

}  // namespace

TaskData gen_synthetic_spectrogram_task(const SpectrogramTaskSpec& spec) {
  if (spec.num_classes < 2) throw ShapeError("spectrogram task needs at least 2 classes");
  if (spec.samples_per_class < 2) throw ShapeError("spectrogram task needs at least 2 samples per class");
  for (int d : spec.shape) {
    if (d <= 0) throw ShapeError("spectrogram shape must be positive");
  }
  if (spec.shape[0] < 2 || spec.shape[1] < 2) throw ShapeError("spectrogram needs at least 2x2 bins");
  if (spec.jitter < 0.0) throw ShapeError("jitter must be non-negative");

  std::mt19937_64 rng(spec.seed);
  TaskData out;
  for (int k = 0; k < spec.num_classes; ++k) {
    auto t = band_template(spec.shape, rng);
    // redraw the (rare) exact duplicates so classes stay separable
    while (std::find(out.templates.begin(), out.templates.end(), t) != out.templates.end()) {
      t = band_template(spec.shape, rng);
    }
    out.templates.push_back(std::move(t));
  }
  for (auto* d : {&out.train, &out.test}) {
    d->sample_shape = spec.shape;
    d->num_classes = spec.num_classes;
  }
  out.train.split = "train";
  out.test.split = "test";

  const int max_shift = static_cast<int>(std::lround(2.0 * spec.jitter));
  std::uniform_int_distribution<int> shift(-max_shift, max_shift);
  std::uniform_real_distribution<double> gain(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int n_test = std::max(1, spec.samples_per_class / 4);
  const int H = spec.shape[0], W = spec.shape[1], C = spec.shape[2];

  for (int i = 0; i < spec.samples_per_class; ++i) {
    for (int k = 0; k < spec.num_classes; ++k) {
      const auto& t = out.templates[k];
      const int s = shift(rng);
      const double g = 1.0 + 0.2 * spec.jitter * gain(rng);
      std::vector<double> x(t.size(), 0.0);
      for (int h = 0; h < H; ++h) {
        const int src = h - s;
        for (int w = 0; w < W; ++w) {
          for (int c = 0; c < C; ++c) {
            const double base = (src >= 0 && src < H) ? t[at3(spec.shape, src, w, c)] : 0.0;
            x[at3(spec.shape, h, w, c)] = g * base + 0.35 * spec.jitter * noise(rng);
          }
        }
      }
      append_sample(i < spec.samples_per_class - n_test ? out.train : out.test, std::move(x), k);
    }
  }
  return out;
}

namespace {

struct MachineSignature {
  double harmonic_period;  // rows
  double pulse_period;     // columns
};

std::vector<double> machine_sound(const MachineSignature& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double ph = phase(rng), pt = phase(rng);
  std::vector<double> x(32 * 32);
  for (int h = 0; h < 32; ++h) {
    for (int w = 0; w < 32; ++w) {
      const double harm = std::cos(2.0 * std::numbers::pi * h / m.harmonic_period + ph);
      const double pulse = 0.6 + 0.4 * std::cos(2.0 * std::numbers::pi * w / m.pulse_period + pt);
      x[h * 32 + w] = harm * pulse;
    }
  }
  return x;
}

}  // namespace

TaskData gen_synthetic_ad_task(const AdTaskSpec& spec) {
  if (spec.num_machine_ids < 2) throw ShapeError("anomaly task needs at least 2 machine IDs");
  if (spec.train_per_id < 1 || spec.test_normal_per_id < 1 || spec.test_anomalous_per_id < 0) {
    throw ShapeError("anomaly task sample counts must be positive");
  }
  if (spec.perturbation < 0.0) throw ShapeError("perturbation must be non-negative");

  std::mt19937_64 rng(spec.seed);
  std::vector<MachineSignature> sig;
  for (int k = 0; k < spec.num_machine_ids; ++k) {
    sig.push_back({3.0 + 1.6 * k, 4.0 + 2.5 * ((k * 3) % spec.num_machine_ids)});
  }
  TaskData out;
  for (const auto& s : sig) {
    // clean signature at zero phase, for reference only
    std::mt19937_64 fixed(0);
    out.templates.push_back(machine_sound(s, fixed));
  }
  for (auto* d : {&out.train, &out.test}) {
    d->sample_shape = {32, 32, 1};
    d->num_classes = spec.num_machine_ids;
  }
  out.train.split = "train";
  out.test.split = "test";

  std::normal_distribution<double> noise(0.0, 0.3);
  std::uniform_int_distribution<int> other(1, spec.num_machine_ids - 1);
  std::uniform_int_distribution<int> pos(0, 23);
  auto normal = [&](int k) {
    auto x = machine_sound(sig[k], rng);
    for (double& v : x) v += noise(rng);
    return x;
  };
  auto anomalous = [&](int k) {
    const int j = (k + other(rng)) % spec.num_machine_ids;
    auto a = machine_sound(sig[k], rng);
    auto b = machine_sound(sig[j], rng);
    const double m = 0.45 * spec.perturbation;
    const int h0 = pos(rng), w0 = pos(rng);
    std::vector<double> x(a.size());
    for (int h = 0; h < 32; ++h) {
      for (int w = 0; w < 32; ++w) {
        const bool burst = h >= h0 && h < h0 + 8 && w >= w0 && w < w0 + 8;
        const std::size_t i = h * 32 + w;
        x[i] = (1.0 - m) * a[i] + m * b[i] + (burst ? 0.8 * spec.perturbation : 0.0) + noise(rng);
      }
    }
    return x;
  };

  for (int i = 0; i < spec.train_per_id; ++i) {
    for (int k = 0; k < spec.num_machine_ids; ++k) append_sample(out.train, normal(k), k);
  }
  const int per_id = std::max(spec.test_normal_per_id, spec.test_anomalous_per_id);
  for (int i = 0; i < per_id; ++i) {
    for (int k = 0; k < spec.num_machine_ids; ++k) {
      if (i < spec.test_normal_per_id) append_sample(out.test, normal(k), k, 0);
      if (i < spec.test_anomalous_per_id) append_sample(out.test, anomalous(k), k, 1);
    }
  }
  return out;
}

double accuracy_from_logits(std::span<const double> logits, std::size_t num_classes, std::span<const int> labels) {
  if (num_classes == 0 || logits.size() != labels.size() * num_classes) {
    throw ShapeError("logit count does not match labels x classes");
  }
  if (labels.empty()) throw ShapeError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    auto row = logits.subspan(n * num_classes, num_classes);
    // max_element returns the first maximum, i.e. the lowest index on ties
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[n]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

namespace {

std::vector<double> all_logits(const SupernetModel& model, const LabeledDataset& data, const DecisionWeights& z,
                               std::size_t batch) {
  data.validate();
  const auto& in = model.spec().input_shape();
  if (in[0] != data.sample_shape[0] || in[1] != data.sample_shape[1] || in[2] != data.sample_shape[2]) {
    throw ShapeError("dataset samples do not match the network input shape");
  }
  std::vector<double> logits;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch); ++i) idx.push_back(i);
    auto y = model.forward(data.batch(idx), z);
    logits.insert(logits.end(), y.values().begin(), y.values().end());
  }
  return logits;
}

}  // namespace

double evaluate_accuracy(const SupernetModel& model, const LabeledDataset& data, const DecisionWeights& z,
                         std::size_t batch) {
  const auto logits = all_logits(model, data, z, batch);
  return accuracy_from_logits(logits, static_cast<std::size_t>(model.spec().num_classes()), data.labels);
}

std::vector<double> scores_from_logits(std::span<const double> logits, std::size_t num_ids,
                                       std::span<const int> machine_ids) {
  if (num_ids == 0 || logits.size() != machine_ids.size() * num_ids) {
    throw ShapeError("logit count does not match samples x machine IDs");
  }
  std::vector<double> out;
  out.reserve(machine_ids.size());
  for (std::size_t n = 0; n < machine_ids.size(); ++n) {
    const int id = machine_ids[n];
    if (id < 0 || static_cast<std::size_t>(id) >= num_ids) {
      throw ConfigError("unknown machine ID " + std::to_string(id) + " for sample " + std::to_string(n));
    }
    auto row = logits.subspan(n * num_ids, num_ids);
    const double mx = *std::max_element(row.begin(), row.end());
    double denom = 0.0;
    for (double v : row) denom += std::exp(v - mx);
    out.push_back(-std::exp(row[id] - mx) / denom);
  }
  return out;
}

std::vector<double> anomaly_scores(const SupernetModel& classifier, const LabeledDataset& eval_set, std::size_t batch) {
  const auto logits = all_logits(classifier, eval_set, {}, batch);
  return scores_from_logits(logits, static_cast<std::size_t>(classifier.spec().num_classes()), eval_set.labels);
}

namespace {

void check_auc_input(std::span<const double> scores, std::span<const int> flags) {
  if (scores.size() != flags.size()) throw ShapeError("scores and flags differ in length");
  bool pos = false, neg = false;
  for (int f : flags) {
    if (f != 0 && f != 1) throw ShapeError("anomaly flags must be 0 or 1");
    (f ? pos : neg) = true;
  }
  if (!pos || !neg) throw ShapeError("AUC needs both normal and anomalous samples");
}

}  // namespace

double auc_all_pairs(std::span<const double> scores, std::span<const int> is_anomalous) {
  check_auc_input(scores, is_anomalous);
  double credit = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!is_anomalous[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (is_anomalous[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        credit += 1.0;
      } else if (scores[i] == scores[j]) {
        credit += 0.5;
      }
    }
  }
  return credit / static_cast<double>(pairs);
}

double auc_rank(std::span<const double> scores, std::span<const int> is_anomalous) {
  check_auc_input(scores, is_anomalous);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // mid-ranks (1-based) for tied groups
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (is_anomalous[order[k]]) {
        rank_sum += mid;
        ++n_pos;
      }
    }
    i = j + 1;
  }
  const double p = static_cast<double>(n_pos);
  const double q = static_cast<double>(n - n_pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

double auc_roc(std::span<const double> scores, std::span<const int> is_anomalous) {
  return scores.size() <= 10000 ? auc_all_pairs(scores, is_anomalous) : auc_rank(scores, is_anomalous);
}

}  // namespace micronas
