#include "micronas/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "micronas/errors.hpp"

namespace micronas::ad {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

bool contains_ste(const Tensor& root) {
  for (const auto& n : topo_order(root)) {
    if (n->op == "fake_quant") return true;
  }
  return false;
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, const std::vector<NamedParam>& params,
                           double tolerance, double epsilon) {
  GradCheckReport report;
  report.tolerance = tolerance;
  for (const auto& p : params) p.tensor.node()->grad.clear();
  Tensor loss = loss_fn();
  report.ste_approximate = contains_ste(loss);
  backward(loss);

  for (const auto& p : params) {
    ParamGradError pe;
    pe.name = p.name;
    const auto analytic = p.tensor.grad();
    auto& values = p.tensor.node()->value;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + epsilon;
      const double up = loss_fn().item();
      values[i] = orig - epsilon;
      const double down = loss_fn().item();
      values[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: non-finite loss while perturbing " + p.name);
      }
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err = relative_error(analytic[i], numeric);
      if (i == 0 || err > pe.max_rel_error) {
        pe.max_rel_error = err;
        pe.worst_index = i;
        pe.analytic = analytic[i];
        pe.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, pe.max_rel_error);
    report.params.push_back(pe);
  }
  report.passed = !report.ste_approximate && report.max_rel_error <= tolerance;
  return report;
}

}  // namespace micronas::ad
