#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "petri/grad/tensor.hpp"

namespace petri::grad {

struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;

  /// Zero moments shaped like `params`.
  static AdamState for_params(std::span<const Tensor> params);
};

/// One bias-corrected Adam update in place. Throws NonFiniteError (leaving
/// params and state untouched) if any gradient is NaN/Inf; throws Error if
/// lr <= 0 or shapes disagree.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state, double lr);

}  // namespace petri::grad
