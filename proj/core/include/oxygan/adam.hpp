#pragma once

#include <cstdint>

#include "oxygan/tensor.hpp"

namespace oxygan {

struct AdamConfig {
  float lr = 2e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// First/second moment buffers for one set of parameters, in parameter
// order. step_count advances once per adam_step over the whole set.
struct AdamState {
  AdamConfig cfg;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step_count = 0;

  static AdamState init(const AdamConfig& cfg, const std::vector<const Tensor*>& params);
};

// Bias-corrected Adam update applied in place.
void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state);

}  // namespace oxygan
