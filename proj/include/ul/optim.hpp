#pragma once

#include <vector>

#include "ul/param.hpp"

namespace ul {

// theta -= lr * g. lr == 0 leaves parameters bit-identical.
void sgd_step(ParamSet& params, const GradSet& grads, double lr);

struct AdamState {
  std::vector<Tensor> m, v;
  long t = 0;

  static AdamState init(const ParamSet& params);
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update; advances state.t by one.
void adam_step(ParamSet& params, const GradSet& grads, AdamState& state,
               const AdamConfig& cfg);

}  // namespace ul
