#pragma once

#include <functional>
#include <string>
#include <vector>

#include "micronas/autodiff/tensor.hpp"

namespace micronas::ad {

struct ParamGradError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParamGradError> params;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  /// The graph contains straight-through estimators, whose gradient is not
  /// the analytic derivative; such graphs are reported but never passed.
  bool ste_approximate = false;
  bool passed = false;
};

struct NamedParam {
  std::string name;
  Tensor tensor;  // leaf with requires_grad
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose gradient is
/// numerically zero from dominating the report.
double relative_error(double analytic, double numeric, double floor = 1e-8);

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// for every entry of every parameter. `loss_fn` must rebuild the graph from
/// the current parameter values on each call.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, const std::vector<NamedParam>& params,
                           double tolerance, double epsilon = 1e-3);

/// True when any node reachable from `root` is a fake_quant.
bool contains_ste(const Tensor& root);

}  // namespace micronas::ad
