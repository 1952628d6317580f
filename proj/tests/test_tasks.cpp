#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "micronas/dnas/search.hpp"
#include "micronas/errors.hpp"
#include "micronas/tasks/dataset_io.hpp"
#include "micronas/tasks/tasks.hpp"
#include "oracles.hpp"

using namespace micronas;

namespace {

// Nearest template under time shifts, gain-invariant (normalized correlation).
int nearest_template(std::span<const double> x, const TaskData& task, int max_shift) {
  const auto [H, W, C] = task.train.sample_shape;
  int best = 0;
  double best_score = -1e300;
  for (std::size_t k = 0; k < task.templates.size(); ++k) {
    const auto& t = task.templates[k];
    for (int s = -max_shift; s <= max_shift; ++s) {
      double dot = 0, tt = 0;
      for (int h = 0; h < H; ++h) {
        const int src = h - s;
        if (src < 0 || src >= H) continue;
        for (int w = 0; w < W * C; ++w) {
          const double tv = t[static_cast<std::size_t>(src * W * C + w)];
          dot += tv * x[static_cast<std::size_t>(h * W * C + w)];
          tt += tv * tv;
        }
      }
      const double score = tt > 0 ? dot / std::sqrt(tt) : -1e300;
      if (score > best_score) {
        best_score = score;
        best = static_cast<int>(k);
      }
    }
  }
  return best;
}

double template_accuracy(const TaskData& task, int max_shift) {
  int ok = 0;
  for (std::size_t i = 0; i < task.test.size(); ++i) {
    ok += nearest_template(task.test.sample(i), task, max_shift) == task.test.labels[i];
  }
  return static_cast<double>(ok) / static_cast<double>(task.test.size());
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("micronas_test_" + name)).string();
}

}  // namespace

TEST(Spectrogram, NearestTemplateOracleAbove90) {
  SpectrogramTaskSpec spec;
  spec.seed = 1;
  const auto task = gen_synthetic_spectrogram_task(spec);
  EXPECT_EQ(task.train.size(), 300u);
  EXPECT_EQ(task.test.size(), 100u);
  EXPECT_EQ(task.templates.size(), 4u);
  EXPECT_EQ(task.train.sample_shape, (std::array<int, 3>{49, 10, 1}));
  EXPECT_GT(template_accuracy(task, 2), 0.90);
}

TEST(Spectrogram, ZeroJitterTwoClassesFullySeparable) {
  SpectrogramTaskSpec spec;
  spec.num_classes = 2;
  spec.jitter = 0.0;
  spec.seed = 2;
  const auto task = gen_synthetic_spectrogram_task(spec);
  EXPECT_EQ(template_accuracy(task, 0), 1.0);
}

TEST(Spectrogram, SmallCnnLearnsTask) {
  SpectrogramTaskSpec spec;
  spec.seed = 3;
  const auto task = gen_synthetic_spectrogram_task(spec);
  auto net = std::make_shared<const Supernet>(Supernet::parse(R"({"input_shape": [49, 10, 1], "layers": [
      {"kind": "Conv2D", "kernel": 3, "stride": 2, "channels": 8},
      {"kind": "DepthwiseSeparableBlock", "kernel": 3, "stride": 2, "channels": 16}],
      "head": [{"kind": "GlobalAvgPool"}, {"kind": "FullyConnected", "channels": 4}]})"));
  SupernetModel m(net, 4);
  FinetuneConfig ft;
  ft.epochs = 10;
  ft.batch_size = 16;
  ft.lr_start = 0.5;
  ft.quant_bits = 0;
  EXPECT_GT(finetune(m, task.train, task.test, ft).test_accuracy, 0.90);
}

TEST(Spectrogram, DeterministicAndSplitsDisjoint) {
  SpectrogramTaskSpec spec;
  spec.seed = 5;
  const auto a = gen_synthetic_spectrogram_task(spec), b = gen_synthetic_spectrogram_task(spec);
  EXPECT_EQ(a.train.features, b.train.features);
  EXPECT_EQ(a.test.features, b.test.features);
  EXPECT_EQ(a.train.labels, b.train.labels);
  spec.seed = 6;
  EXPECT_NE(gen_synthetic_spectrogram_task(spec).train.features, a.train.features);
  // no test sample appears verbatim in train
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    const auto t = a.test.sample(i);
    for (std::size_t j = 0; j < a.train.size(); ++j) {
      const auto r = a.train.sample(j);
      ASSERT_FALSE(std::equal(t.begin(), t.end(), r.begin()));
    }
  }
}

TEST(Spectrogram, DegenerateSpecsRejected) {
  SpectrogramTaskSpec one_class;
  one_class.num_classes = 1;
  EXPECT_THROW(gen_synthetic_spectrogram_task(one_class), Error);
  SpectrogramTaskSpec flat;
  flat.shape = {0, 10, 1};
  EXPECT_THROW(gen_synthetic_spectrogram_task(flat), Error);
}

TEST(AnomalyTask, DefaultsAndTrainIsNormalOnly) {
  AdTaskSpec spec;
  spec.seed = 7;
  const auto task = gen_synthetic_ad_task(spec);
  EXPECT_EQ(task.train.num_classes, 4);
  EXPECT_EQ(task.train.sample_shape, (std::array<int, 3>{32, 32, 1}));
  EXPECT_EQ(task.train.size(), 4u * 120);
  for (int f : task.train.flags) EXPECT_EQ(f, 0);
  std::set<int> ids(task.train.labels.begin(), task.train.labels.end());
  EXPECT_EQ(ids.size(), 4u);
  ASSERT_EQ(task.test.flags.size(), task.test.size());
  EXPECT_EQ(std::count(task.test.flags.begin(), task.test.flags.end(), 1), 4 * 40);
  EXPECT_EQ(std::count(task.test.flags.begin(), task.test.flags.end(), 0), 4 * 40);
  const auto again = gen_synthetic_ad_task(spec);
  EXPECT_EQ(again.test.features, task.test.features);
  AdTaskSpec one;
  one.num_machine_ids = 1;
  EXPECT_THROW(gen_synthetic_ad_task(one), Error);
}

TEST(AnomalyTask, ZeroPerturbationIsIndistinguishable) {
  AdTaskSpec spec;
  spec.seed = 8;
  spec.perturbation = 0.0;
  spec.test_normal_per_id = 200;
  spec.test_anomalous_per_id = 200;
  const auto task = gen_synthetic_ad_task(spec);
  // scorer: distance to the per-ID training mean
  const std::size_t n = task.train.sample_size();
  std::vector<std::vector<double>> mean(4, std::vector<double>(n, 0.0));
  std::vector<int> count(4, 0);
  for (std::size_t i = 0; i < task.train.size(); ++i) {
    const auto s = task.train.sample(i);
    auto& m = mean[static_cast<std::size_t>(task.train.labels[i])];
    for (std::size_t k = 0; k < n; ++k) m[k] += s[k];
    ++count[static_cast<std::size_t>(task.train.labels[i])];
  }
  std::vector<double> scores;
  for (std::size_t i = 0; i < task.test.size(); ++i) {
    const auto id = static_cast<std::size_t>(task.test.labels[i]);
    const auto s = task.test.sample(i);
    double d = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const double e = s[k] - mean[id][k] / count[id];
      d += e * e;
    }
    scores.push_back(d);
  }
  EXPECT_NEAR(auc_roc(scores, task.test.flags), 0.5, 0.05);
}

TEST(Accuracy, Examples) {
  std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};
  std::vector<double> constant(8 * 4, 0.7);
  EXPECT_DOUBLE_EQ(accuracy_from_logits(constant, 4, labels), 0.25);
  std::vector<double> perfect(8 * 4, 0.0);
  for (std::size_t i = 0; i < 8; ++i) perfect[i * 4 + static_cast<std::size_t>(labels[i])] = 5.0;
  EXPECT_DOUBLE_EQ(accuracy_from_logits(perfect, 4, labels), 1.0);
  EXPECT_THROW(accuracy_from_logits(std::vector<double>(7), 4, labels), Error);

  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  std::vector<double> logits(20 * 3);
  std::vector<int> lab(20);
  for (auto& v : logits) v = n(rng);
  for (auto& l : lab) l = static_cast<int>(rng() % 3);
  int hand = 0;
  for (int i = 0; i < 20; ++i) {
    int arg = 0;
    for (int k = 1; k < 3; ++k) {
      if (logits[static_cast<std::size_t>(i * 3 + k)] > logits[static_cast<std::size_t>(i * 3 + arg)]) arg = k;
    }
    hand += arg == lab[static_cast<std::size_t>(i)];
  }
  EXPECT_DOUBLE_EQ(accuracy_from_logits(logits, 3, lab), hand / 20.0);
}

TEST(Scores, ExamplesAndShiftInvariance) {
  std::vector<double> certain{0, 1000, 0, 0};
  EXPECT_NEAR(scores_from_logits(certain, 4, std::vector<int>{1})[0], -1.0, 1e-12);
  std::vector<double> uniform(3 * 4, 2.0);
  for (double s : scores_from_logits(uniform, 4, std::vector<int>{0, 2, 3})) EXPECT_NEAR(s, -0.25, 1e-15);
  EXPECT_THROW(scores_from_logits(certain, 4, std::vector<int>{4}), ConfigError);

  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0, 2);
  std::vector<double> logits(30 * 4);
  std::vector<int> ids(30);
  for (auto& v : logits) v = n(rng);
  for (auto& id : ids) id = static_cast<int>(rng() % 4);
  const auto s = scores_from_logits(logits, 4, ids);
  auto shifted = logits;
  for (auto& v : shifted) v += 17.5;
  const auto s2 = scores_from_logits(shifted, 4, ids);
  for (std::size_t i = 0; i < 30; ++i) {
    double z = 0;
    for (std::size_t k = 0; k < 4; ++k) z += std::exp(logits[i * 4 + k]);
    EXPECT_NEAR(s[i], -std::exp(logits[i * 4 + static_cast<std::size_t>(ids[i])]) / z, 1e-6);
    EXPECT_NEAR(s2[i], s[i], 1e-12);
  }
}

TEST(Auc, Examples) {
  EXPECT_DOUBLE_EQ(auc_roc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(auc_roc(std::vector<double>{3, 3, 3, 3, 3}, std::vector<int>{0, 1, 0, 1, 1}), 0.5);
  EXPECT_THROW(auc_roc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), Error);
  EXPECT_THROW(auc_roc(std::vector<double>{1, 2}, std::vector<int>{0}), Error);
}

TEST(Auc, RankMatchesPairsAndInvariances) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> s(50);
    std::vector<int> f(50);
    for (std::size_t i = 0; i < 50; ++i) {
      s[i] = static_cast<double>(rng() % 20) / 4.0;  // coarse grid, plenty of ties
      f[i] = static_cast<int>(i % 3 == 0);
    }
    const double pairs = oracle::auc_pairs(s, f);
    EXPECT_NEAR(auc_rank(s, f), pairs, 1e-9);
    EXPECT_NEAR(auc_all_pairs(s, f), pairs, 1e-9);
    EXPECT_NEAR(auc_roc(s, f), pairs, 1e-9);
    std::vector<double> mono(s.size()), negated(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      mono[i] = std::exp(3 * s[i]) - 7;
      negated[i] = -s[i];
    }
    EXPECT_NEAR(auc_roc(mono, f), pairs, 1e-12);
    EXPECT_NEAR(auc_roc(negated, f), 1 - pairs, 1e-12);
  }
}

TEST(Auc, LargeInputsUseRankFormula) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n;
  std::vector<double> s(20000);
  std::vector<int> f(20000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    f[i] = static_cast<int>(i % 2);
    s[i] = n(rng) + 0.5 * f[i];
  }
  EXPECT_NEAR(auc_roc(s, f), auc_rank(s, f), 1e-12);
}

TEST(DatasetIo, RoundTripAndCorruption) {
  AdTaskSpec spec;
  spec.train_per_id = 5;
  spec.test_normal_per_id = 3;
  spec.test_anomalous_per_id = 2;
  const auto task = gen_synthetic_ad_task(spec);
  const auto path = tmp_path("set.bin");
  write_dataset(path, task.test);
  const auto back = read_dataset(path, "test");
  EXPECT_EQ(back.features, task.test.features);
  EXPECT_EQ(back.labels, task.test.labels);
  EXPECT_EQ(back.flags, task.test.flags);
  EXPECT_EQ(back.sample_shape, task.test.sample_shape);
  EXPECT_EQ(back.num_classes, task.test.num_classes);
  {
    std::ofstream bad(path, std::ios::binary);
    bad << "NOTADATASET";
  }
  EXPECT_THROW(read_dataset(path), Error);
  EXPECT_THROW(read_dataset(tmp_path("missing.bin")), Error);
  std::filesystem::remove(path);
}

TEST(DatasetIo, ScoresCsv) {
  const auto path = tmp_path("scores.csv");
  write_scores_csv(path, {-0.5, -0.25}, {0, 1});
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "sample_id,score,is_anomalous");
  EXPECT_EQ(first.substr(0, 2), "0,");
  EXPECT_EQ(first.back(), '0');
  std::filesystem::remove(path);
}
