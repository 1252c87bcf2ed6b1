#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "riskrank/autograd.hpp"
#include "riskrank/common.hpp"
#include "riskrank/tensor.hpp"

namespace riskrank {

// Central-difference gradient estimate of a pure scalar function.
inline Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  if (eps <= 0.0) throw numeric_error("finite_diff: eps must be positive");
  Tensor grad = Tensor::zeros_like(x);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.at(i);
    probe.at(i) = orig + eps;
    const double hi = f(probe);
    probe.at(i) = orig - eps;
    const double lo = f(probe);
    probe.at(i) = orig;
    if (!std::isfinite(hi) || !std::isfinite(lo)) {
      throw numeric_error("finite_diff: function returned non-finite value");
    }
    grad.at(i) = (hi - lo) / (2.0 * eps);
  }
  return grad;
}

// Relative error with a floor on the denominator so that near-zero gradient
// entries compare on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / denom;
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t entries = 0;
};

// Compares already-accumulated analytic gradients in the parameters against
// central differences of loss_value. loss_value must rebuild the forward pass
// from the parameters' current values on every call.
inline GradCheckReport compare_gradients(const std::vector<Parameter*>& params,
                                         const std::function<double()>& loss_value,
                                         double eps = 1e-5) {
  GradCheckReport report;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.at(i);
      p->value.at(i) = orig + eps;
      const double hi = loss_value();
      p->value.at(i) = orig - eps;
      const double lo = loss_value();
      p->value.at(i) = orig;
      const double numeric = (hi - lo) / (2.0 * eps);
      const double err = relative_error(p->grad.at(i), numeric);
      ++report.entries;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_parameter = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

}  // namespace riskrank
