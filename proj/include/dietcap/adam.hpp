#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dietcap/tensor.hpp"

namespace dietcap {

struct AdamOptions {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment buffers are laid out in the order of the parameter list passed to
// adam_step; that list must keep the same order across steps.
template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  AdamOptions options;

  explicit AdamState(AdamOptions opts = {}) : options(opts) {}
};

// One bias-corrected Adam update over `params`, reading each parameter's grad.
// A parameter without a grad is a usage error (backward has not reached it).
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state);

}  // namespace dietcap
