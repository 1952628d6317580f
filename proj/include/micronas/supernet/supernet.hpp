#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "micronas/autodiff/ops.hpp"

namespace micronas {

using Json = nlohmann::ordered_json;

enum class LayerKind {
  Input,
  Conv2D,
  DepthwiseSeparableBlock,
  InvertedBottleneckBlock,
  FullyConnected,
  AvgPool,
  GlobalAvgPool,
  AddSkip,
};

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

/// Either a literal channel count or the option list of a width decision.
struct ChannelSpec {
  int fixed = 0;
  std::vector<int> options;

  bool is_decision() const { return !options.empty(); }
  int max() const { return is_decision() ? options.back() : fixed; }
  bool operator==(const ChannelSpec&) const = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::Conv2D;
  std::string name;  // optional label, used for decision ids
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  ad::Padding padding = ad::Padding::Same;
  ChannelSpec channels;   // output channels (Conv2D, blocks, FullyConnected)
  ChannelSpec expansion;  // InvertedBottleneckBlock only
  bool optional_depth = false;
  int from = -1;  // AddSkip: layer whose output is added; -1 is the network input

  bool operator==(const LayerSpec&) const = default;
};

enum class DecisionKind { Width, Depth };

/// Depth decisions always have two options, in this order.
inline constexpr int kSkipOption = 0;
inline constexpr int kBlockOption = 1;

struct DecisionNode {
  std::string id;
  DecisionKind kind = DecisionKind::Width;
  std::vector<int> options;  // channel widths, or {kSkipOption, kBlockOption}
  int layer = -1;

  std::size_t size() const { return options.size(); }
};

/// Total assignment decision id -> option index.
struct ArchSelection {
  std::map<std::string, int> choices;

  int at(const std::string& id) const;
  bool operator==(const ArchSelection&) const = default;
};

/// Channel count of a tensor as a function of the decisions.
struct ChannelExpr {
  enum class Kind { Fixed, Width, Mix };
  Kind kind = Kind::Fixed;
  int value = 0;      // Fixed
  int decision = -1;  // Width: width decision; Mix: depth decision
  int skip = -1;      // Mix: expr index taken when the block is skipped
  int block = -1;     // Mix: expr index taken when the block runs
};

struct TensorInfo {
  int h = 0;
  int w = 0;
  int c_max = 0;
  int channels = -1;  // index into Supernet::channel_exprs()
};

enum class PrimKind { Conv, Depthwise, Dense, AvgPool, Add, Select };

std::string to_string(PrimKind kind);

/// Primitive operator after block expansion. Select is the depth-decision
/// merge point and carries no cost.
struct PrimitiveOp {
  PrimKind kind = PrimKind::Conv;
  std::string name;  // parameter prefix, e.g. "L2.pw"
  int layer = -1;
  std::vector<int> inputs;  // tensor ids
  int output = -1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  ad::Padding padding = ad::Padding::Same;
  bool relu = false;
  int width_decision = -1;   // output channels masked by this decision
  int exists_decision = -1;  // node only exists when this decision ...
  int exists_option = -1;    // ... takes this option
  int select_decision = -1;  // Select: inputs = {skip, block}
};

class Supernet {
 public:
  /// Validates and expands a backbone or architecture document.
  static Supernet from_json(const Json& doc);
  static Supernet parse(const std::string& text);

  /// Canonical document; parse(to_json()) reproduces an equal supernet.
  Json to_json() const;

  const std::string& name() const { return name_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t head_start() const { return head_start_; }
  const std::vector<DecisionNode>& decisions() const { return decisions_; }
  const std::vector<ChannelExpr>& channel_exprs() const { return exprs_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const std::vector<PrimitiveOp>& ops() const { return ops_; }
  const std::array<int, 3>& input_shape() const { return input_shape_; }
  int channel_grid() const { return channel_grid_; }
  int num_classes() const { return num_classes_; }
  int output_tensor() const { return output_tensor_; }
  int layer_input(std::size_t layer) const { return layer_input_.at(layer); }
  int layer_output(std::size_t layer) const { return layer_output_.at(layer); }
  /// Opaque "search" section carried through from the document, if any.
  const Json& search_section() const { return search_; }

  int decision_index(const std::string& id) const;
  /// Product of option counts, saturating at UINT64_MAX.
  std::uint64_t num_architectures() const;

  /// Throws ConfigError unless `sel` assigns a valid option to every decision
  /// and nothing else.
  void validate(const ArchSelection& sel) const;
  /// Selection with every decision at option 0 (narrowest / skipped).
  ArchSelection min_selection() const;
  ArchSelection max_selection() const;

  int channels(int tensor, const ArchSelection& sel) const;
  bool exists(const PrimitiveOp& op, const ArchSelection& sel) const;

 private:
  int intern_expr(const ChannelExpr& e);
  int add_tensor(int h, int w, int c_max, int channels);
  void expand();

  std::string name_;
  std::array<int, 3> input_shape_{};
  int channel_grid_ = 1;
  std::vector<LayerSpec> layers_;
  std::size_t head_start_ = 0;
  Json search_;

  std::vector<DecisionNode> decisions_;
  std::vector<ChannelExpr> exprs_;
  std::vector<TensorInfo> tensors_;
  std::vector<PrimitiveOp> ops_;
  std::vector<int> layer_input_;   // tensor id consumed by each layer
  std::vector<int> layer_output_;  // tensor id produced by each layer
  int output_tensor_ = -1;
  int num_classes_ = 0;
};

/// Every total selection exactly once, first decision varying slowest.
/// Throws ConfigError when the space exceeds `cap`.
std::vector<ArchSelection> enumerate_architectures(const Supernet& net, std::uint64_t cap = 4096);

struct DiscreteSpec {
  Supernet spec;
  std::vector<int> origin_layer;  // supernet layer each kept layer came from
};

/// Fixes every decision: chosen widths become literals, skipped blocks are
/// removed (or replaced by their average-pool shortcut when they downsample).
DiscreteSpec resolve_selection(const Supernet& net, const ArchSelection& sel);

/// Layer listing with resolved dimensions in the h/w/c/s vocabulary.
Json export_layers(const Supernet& discrete);
/// Architecture document: the config of a decision-free network plus its
/// resolved layer listing.
Json architecture_document(const Supernet& discrete);

Json selection_to_json(const ArchSelection& sel);
ArchSelection selection_from_json(const Json& j);

}  // namespace micronas
