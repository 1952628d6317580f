#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "micronas/supernet/model.hpp"
#include "micronas/supernet/supernet.hpp"

namespace micronas {

inline constexpr std::int64_t kKiB = 1024;

/// Deployment bit-widths. Biases are always stored at 32 bits.
struct BitWidths {
  int weight_bits = 8;
  int activation_bits = 8;
};

/// Bytes occupied by `elements` values of `bits` each, packed.
std::int64_t packed_bytes(std::int64_t elements, int bits);

// ---- per-layer primitives ----

/// Operation count (one MAC = 2 ops) of a primitive with concrete channels.
/// Pooling, add and the depth merge cost 0.
std::int64_t layer_ops(PrimKind kind, int kernel_h, int kernel_w, std::int64_t in_h, std::int64_t in_w,
                       std::int64_t in_c, std::int64_t out_h, std::int64_t out_w, std::int64_t out_c);

/// Weight and bias scalar counts of a primitive.
struct ParamCount {
  std::int64_t weights = 0;
  std::int64_t biases = 0;
  std::int64_t total() const { return weights + biases; }
};
ParamCount layer_params(PrimKind kind, int kernel_h, int kernel_w, std::int64_t in_h, std::int64_t in_w,
                        std::int64_t in_c, std::int64_t out_c);

/// weights at weight_bits, biases at 32 bits. weight_bits must be 8 or 4.
std::int64_t layer_param_bytes(const ParamCount& p, int weight_bits);

/// (sum of input elements + sum of output elements) at activation_bits.
std::int64_t node_working_bytes(const std::vector<std::int64_t>& input_elements,
                                const std::vector<std::int64_t>& output_elements, int activation_bits);

// ---- reports ----

struct NodeReport {
  std::string id;
  std::string kind;
  std::vector<std::int64_t> input_bytes;   // |x_n|
  std::vector<std::int64_t> output_bytes;  // |y_m|
  std::int64_t working_bytes = 0;
  std::int64_t ops = 0;
  std::int64_t param_count = 0;
  std::int64_t param_bytes = 0;
};

struct ResourceReport {
  std::int64_t total_ops = 0;
  std::int64_t param_count = 0;
  std::int64_t param_bytes = 0;
  std::int64_t peak_working_bytes = 0;
  std::string peak_node_id;
  BitWidths bits;
  std::vector<NodeReport> nodes;
};

Json report_to_json(const ResourceReport& r);

/// Exact resources of the network obtained by fixing `sel`.
ResourceReport discrete_resources(const Supernet& net, const ArchSelection& sel, BitWidths bits = {});
/// Resources of a decision-free network.
ResourceReport discrete_resources(const Supernet& net, BitWidths bits = {});

/// Decision-weighted resources, differentiable with respect to z.
struct ExpectedResources {
  ad::Tensor size_bytes;
  ad::Tensor ops;
  ad::Tensor working_bytes;
};

/// Rows of z must sum to 1 (within 1e-6). Layer costs use the expected
/// channel count of every tensor; nodes inside a depth-optional block are
/// weighted by the probability that the block runs (the shortcut pool by
/// the probability it is skipped).
ExpectedResources expected_resources(const Supernet& net, const DecisionWeights& z, BitWidths bits = {});

// ---- budgets ----

struct Budget {
  std::optional<std::int64_t> flash_bytes;
  std::optional<std::int64_t> sram_bytes;
  std::optional<std::int64_t> max_ops;
  std::int64_t interpreter_sram_overhead = 4 * kKiB;
  std::int64_t interpreter_flash_overhead = 37 * kKiB;
  std::int64_t persistent_buffer_bytes = 34 * kKiB;
  std::int64_t graph_metadata_bytes = 0;

  /// SRAM left for activations.
  std::optional<std::int64_t> effective_sram() const;
  /// Flash left for parameters.
  std::optional<std::int64_t> effective_flash() const;
  void validate() const;
};

struct BudgetCheck {
  bool pass = true;
  // signed margins (limit - usage); absent when the constraint is not set
  std::optional<std::int64_t> flash_margin;
  std::optional<std::int64_t> sram_margin;
  std::optional<std::int64_t> ops_margin;
  std::vector<std::string> violated;  // "flash", "sram", "ops"
};

/// Boundaries are inclusive: usage equal to a limit passes with margin 0.
BudgetCheck check_budget(const ResourceReport& report, const Budget& budget);

Json budget_check_to_json(const BudgetCheck& c);
Json budget_to_json(const Budget& b);

}  // namespace micronas
