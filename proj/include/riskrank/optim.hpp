#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "riskrank/autograd.hpp"
#include "riskrank/common.hpp"
#include "riskrank/tensor.hpp"

namespace riskrank {

// Adaptive-moment state. Moments are kept positionally aligned with the
// parameter list they were initialised for.
struct OptimizerState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  static OptimizerState create(const std::vector<Parameter*>& params, double lr = 1e-4) {
    OptimizerState st;
    st.learning_rate = lr;
    st.first_moment.reserve(params.size());
    st.second_moment.reserve(params.size());
    for (const Parameter* p : params) {
      st.first_moment.push_back(Tensor::zeros_like(p->value));
      st.second_moment.push_back(Tensor::zeros_like(p->value));
    }
    return st;
  }
};

// One Adam update with bias correction, reading each parameter's accumulated
// gradient. Gradients are left untouched; callers zero them between steps.
inline void adam_step(const std::vector<Parameter*>& params, OptimizerState& state) {
  if (params.size() != state.first_moment.size()) {
    throw numeric_error("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    if (!m.same_shape(p.value) || !p.grad.same_shape(p.value)) {
      throw numeric_error("adam_step: shape mismatch for parameter " + p.name);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.at(i);
      m.at(i) = b1 * m.at(i) + (1.0 - b1) * g;
      v.at(i) = b2 * v.at(i) + (1.0 - b2) * g * g;
      const double m_hat = m.at(i) / bias1;
      const double v_hat = v.at(i) / bias2;
      p.value.at(i) -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
    if (checked_mode()) p.value.ensure_finite("adam update of " + p.name);
  }
}

// Scales all gradients so the global L2 norm does not exceed max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(const std::vector<Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    for (std::size_t i = 0; i < p->grad.size(); ++i) {
      sq += p->grad.at(i) * p->grad.at(i);
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Parameter* p : params) {
      for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad.at(i) *= s;
    }
  }
  return norm;
}

inline void zero_gradients(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace riskrank
