#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "micronas/autodiff/grad_check.hpp"
#include "micronas/autodiff/ops.hpp"
#include "micronas/supernet/supernet.hpp"

namespace micronas {

/// Relaxed decision weights z, one [K] tensor per decision id.
using DecisionWeights = std::map<std::string, ad::Tensor>;

/// One-hot z for a total selection.
DecisionWeights one_hot(const Supernet& net, const ArchSelection& sel);
/// Uniform z (every option 1/K).
DecisionWeights uniform_weights(const Supernet& net);

/// Named leaf tensors. Names are stable across supernet and materialized
/// networks: "<layer>.<role>.{w,b,gamma}" for weights, "quant/..." for
/// quantizer ranges.
class ParameterStore {
 public:
  ad::Tensor& add(const std::string& name, ad::Tensor t);
  const ad::Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  const std::map<std::string, ad::Tensor>& all() const { return params_; }
  std::size_t scalar_count() const;
  void zero_grad();
  /// Deep copy (fresh leaves, same values).
  ParameterStore clone() const;

 private:
  std::map<std::string, ad::Tensor> params_;
};

struct QuantSettings {
  int bits = 0;  // 0 disables fake quantization
  bool enabled() const { return bits != 0; }
};

/// Executable supernet (or plain network when it has no decisions). Width
/// decisions run the layer once at its maximum width and mix K channel masks
/// of that single output; depth decisions mix the skip branch with the block.
class SupernetModel {
 public:
  SupernetModel(std::shared_ptr<const Supernet> spec, std::uint64_t seed);
  SupernetModel(std::shared_ptr<const Supernet> spec, ParameterStore params);

  const Supernet& spec() const { return *spec_; }
  std::shared_ptr<const Supernet> spec_ptr() const { return spec_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// x is [N, H, W, C]; returns [N, num_classes] logits.
  ad::Tensor forward(const ad::Tensor& x, const DecisionWeights& z = {}) const;

  /// Network weights (excludes quantizer ranges).
  std::vector<ad::NamedParam> weight_params() const;
  /// Quantizer range parameters (empty unless quantization is enabled).
  std::vector<ad::NamedParam> quant_params() const;

  /// Turns on fake quantization. Activation ranges are initialised from the
  /// min/max observed on `calibration` (float forward), weight ranges from
  /// max |w|; all ranges are trainable afterwards.
  void enable_quantization(int bits, const ad::Tensor& calibration, const DecisionWeights& z = {});
  const QuantSettings& quantization() const { return quant_; }
  void disable_quantization() { quant_ = {}; }

 private:
  ad::Tensor run(const ad::Tensor& x, const DecisionWeights& z,
                 std::vector<std::pair<double, double>>* observed) const;
  ad::Tensor quant_act(const ad::Tensor& t, const std::string& site) const;
  ad::Tensor quant_weight(const std::string& name) const;

  std::shared_ptr<const Supernet> spec_;
  ParameterStore params_;
  QuantSettings quant_;
};

struct MaterializedNetwork {
  std::shared_ptr<const Supernet> spec;
  std::vector<int> origin_layer;
  SupernetModel model;
};

/// Standalone network for `sel` with physically truncated weights.
MaterializedNetwork materialize(const SupernetModel& supernet, const ArchSelection& sel);

/// Number of weight scalars a network holds at its maximum widths (conv,
/// depthwise, dense weights and biases; normalization scales excluded).
std::int64_t max_parameter_count(const Supernet& net);

}  // namespace micronas
