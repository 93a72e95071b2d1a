#include "smartsense/adam.hpp"

#include <cmath>

namespace smartsense {

AdamState AdamState::zeros_like(const std::vector<Matrix*>& params) {
  AdamState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const Matrix* p : params) {
    state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
    state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
  return state;
}

void adam_step(const std::vector<Matrix*>& params,
               const std::vector<Matrix>& grads, AdamState& state,
               const AdamOptions& options) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw UsageError("adam_step: parameter/gradient/state sizes disagree");
  }
  ++state.step;
  const double correction1 = 1.0 - std::pow(options.beta1, state.step);
  const double correction2 = 1.0 - std::pow(options.beta2, state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& theta = *params[i];
    const Matrix g = grads[i] + options.l2 * theta;
    state.m[i] = options.beta1 * state.m[i] + (1.0 - options.beta1) * g;
    state.v[i] =
        options.beta2 * state.v[i] + (1.0 - options.beta2) * g.cwiseProduct(g);
    const Matrix m_hat = state.m[i] / correction1;
    const Matrix v_hat = state.v[i] / correction2;
    theta.array() -=
        options.lr * m_hat.array() / (v_hat.array().sqrt() + options.eps);
  }
}

}  // namespace smartsense
