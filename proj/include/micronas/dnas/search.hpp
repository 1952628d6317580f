#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "micronas/resources/resources.hpp"
#include "micronas/supernet/model.hpp"
#include "micronas/tasks/tasks.hpp"

namespace micronas {

struct PenaltyWeights {
  double size = 0.0;
  double mem = 0.0;
  double ops = 0.0;
};

struct SearchConfig {
  int epochs = 20;
  int batch_size = 32;
  double lr_start = 0.05;
  double lr_end = 1e-4;
  double weight_decay = 1e-3;
  /// Architecture logits use lr * arch_lr_scale.
  double arch_lr_scale = 1.0;
  /// Weight steps are rescaled so the global gradient L2 norm is at most
  /// this value; 0 disables clipping.
  double grad_clip = 5.0;
  double tau_start = 5.0;
  double tau_end = 0.5;
  PenaltyWeights lambda;
  Budget budget;
  bool gumbel_noise = true;
  BitWidths bits;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FinetuneConfig {
  int epochs = 10;
  int batch_size = 32;
  double lr_start = 0.05;
  double lr_end = 1e-4;
  double weight_decay = 1e-3;
  /// Global gradient-norm limit, applied separately to the weights and to
  /// the quantizer ranges; 0 disables clipping.
  double grad_clip = 5.0;
  int quant_bits = 8;  // 0 trains in float
  std::uint64_t seed = 0;

  void validate() const;
};

Json search_config_to_json(const SearchConfig& c);
/// Missing keys keep the defaults; unknown keys are rejected.
SearchConfig search_config_from_json(const Json& j, SearchConfig base = {});
Json finetune_config_to_json(const FinetuneConfig& c);
FinetuneConfig finetune_config_from_json(const Json& j, FinetuneConfig base = {});

/// Zero-initialised architecture logits, one trainable [K] leaf per decision.
DecisionWeights init_alpha(const Supernet& net);

/// softmax((alpha + g) / tau) for one decision; g is Gumbel noise when `rng`
/// is non-null.
ad::Tensor relax_row(const ad::Tensor& alpha, double tau, std::mt19937_64* rng);
DecisionWeights relax_decisions(const DecisionWeights& alpha, double tau, bool gumbel_noise, std::mt19937_64& rng);

/// task_loss + sum_r lambda_r * max(0, R_r / B_r - 1), with B the effective
/// flash (size), effective SRAM (mem) and op budgets. A non-zero lambda on a
/// resource without a positive budget is a ConfigError.
ad::Tensor total_objective(const ad::Tensor& task_loss, const ExpectedResources& resources, const Budget& budget,
                           const PenaltyWeights& lambda);

/// Cosine decay from lr_start at step 0 to lr_end at the final step.
double cosine_lr(double lr_start, double lr_end, std::int64_t step, std::int64_t total_steps);
/// Geometric anneal from tau_start at epoch 0 to tau_end at the last epoch.
double anneal_temperature(double tau_start, double tau_end, int epoch, int epochs);

struct SearchEpochLog {
  int epoch = 0;
  double lr = 0.0;
  double tau = 0.0;
  double loss = 0.0;
  double task_loss = 0.0;
  double penalty = 0.0;
  double expected_size_bytes = 0.0;
  double expected_ops = 0.0;
  double expected_working_bytes = 0.0;
  ArchSelection argmax;
  bool argmax_feasible = false;
};

struct SearchState {
  DecisionWeights alpha;
  std::vector<SearchEpochLog> history;
};

/// Joint single-level gradient descent on weights and architecture logits.
/// Weight decay applies to the weights only. Throws NumericError naming the
/// epoch and step when the loss stops being finite.
SearchState train_search(SupernetModel& model, const LabeledDataset& train, const SearchConfig& config);
/// Same, continuing from given logits.
SearchState train_search(SupernetModel& model, DecisionWeights alpha, const LabeledDataset& train,
                         const SearchConfig& config);

/// Per-decision arg-max; exact ties go to the lower index, which is the
/// narrower width or the skipped block.
ArchSelection discretize(const Supernet& net, const DecisionWeights& alpha);

struct FinetuneEpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double test_accuracy = 0.0;
};

struct FinetuneResult {
  double test_accuracy = 0.0;
  std::vector<FinetuneEpochLog> history;
};

/// Plain training of a decision-free network, with fake quantization at
/// `quant_bits` when non-zero (ranges calibrated on the first training batch
/// and trained alongside the weights).
FinetuneResult finetune(SupernetModel& network, const LabeledDataset& train, const LabeledDataset& test,
                        const FinetuneConfig& config);

struct SearchResult {
  ArchSelection selection;
  ResourceReport report;
  BudgetCheck check;
  Budget budget;
  std::vector<SearchEpochLog> search_history;
  std::vector<FinetuneEpochLog> finetune_history;
  double finetune_accuracy = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<double>> alpha;
};

/// Throws BudgetError naming the violated constraints when even the
/// smallest architecture of `net` does not fit.
void check_min_vertex(const Supernet& net, const Budget& budget, BitWidths bits = {});

struct SearchOutcome {
  SearchResult result;
  MaterializedNetwork network;
};

/// Minimum-vertex check, search, discretize, materialize, finetune.
SearchOutcome run_search(std::shared_ptr<const Supernet> net, const LabeledDataset& train, const LabeledDataset& test,
                         const SearchConfig& search, const FinetuneConfig& ft);

Json search_result_to_json(const SearchResult& r, const Supernet& net);

}  // namespace micronas
