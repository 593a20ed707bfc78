#include "petri/grad/adam.hpp"

#include <cmath>

#include "petri/common.hpp"

namespace petri::grad {

AdamState AdamState::for_params(std::span<const Tensor> params) {
  AdamState s;
  for (const Tensor& p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state, double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error("adam_step: learning rate must be positive and finite");
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw ShapeError("adam_step: parameter/gradient/state count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
    if (!grads[i].all_finite()) throw NonFiniteError("adam_step: non-finite gradient");
  }

  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(b1, t);
  const double bc2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = static_cast<float>(b1 * m[k] + (1.0 - b1) * g[k]);
      v[k] = static_cast<float>(b2 * v[k] + (1.0 - b2) * static_cast<double>(g[k]) * g[k]);
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] = static_cast<float>(p[k] - lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
}

}  // namespace petri::grad
