#include "ul/optim.hpp"

#include <cmath>

namespace ul {

void sgd_step(ParamSet& params, const GradSet& grads, double lr) {
  UL_CHECK(std::isfinite(lr) && lr >= 0.0, "contract", "sgd_step: bad lr");
  UL_CHECK(grads.aligned_with(params), "contract",
           "sgd_step: gradient layout does not match parameters");
  if (lr == 0.0) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.entry(i).value.data;
    const auto& g = grads.grad(i).data;
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
    require_finite(params.entry(i).value, "sgd_step");
  }
}

AdamState AdamState::init(const ParamSet& params) {
  AdamState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.push_back(Tensor::zeros(params.entry(i).value.shape));
    s.v.push_back(Tensor::zeros(params.entry(i).value.shape));
  }
  return s;
}

void adam_step(ParamSet& params, const GradSet& grads, AdamState& state,
               const AdamConfig& cfg) {
  UL_CHECK(grads.aligned_with(params), "contract",
           "adam_step: gradient layout does not match parameters");
  UL_CHECK(state.m.size() == params.size() && state.v.size() == params.size(),
           "contract", "adam_step: state layout does not match parameters");
  state.t += 1;
  double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.entry(i).value.data;
    const auto& g = grads.grad(i).data;
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    UL_CHECK(m.size() == p.size(), "contract", "adam_step: state shape mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      double mhat = m[j] / c1;
      double vhat = v[j] / c2;
      p[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    require_finite(params.entry(i).value, "adam_step");
  }
}

}  // namespace ul
