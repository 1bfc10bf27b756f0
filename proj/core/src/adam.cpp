#include "oxygan/adam.hpp"

#include <cmath>

namespace oxygan {

AdamState AdamState::init(const AdamConfig& cfg, const std::vector<const Tensor*>& params) {
  if (cfg.lr < 0) throw InvalidArgument("adam: lr must be non-negative");
  if (cfg.beta1 <= 0 || cfg.beta1 >= 1 || cfg.beta2 <= 0 || cfg.beta2 >= 1)
    throw InvalidArgument("adam: betas must be in (0, 1)");
  if (cfg.eps <= 0) throw InvalidArgument("adam: eps must be positive");
  AdamState s;
  s.cfg = cfg;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const Tensor* p : params) {
    s.m.push_back(Tensor::zeros(p->dims));
    s.v.push_back(Tensor::zeros(p->dims));
  }
  return s;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params vs " +
                     std::to_string(grads.size()) + " grads vs " +
                     std::to_string(state.m.size()) + " state slots");
  state.step_count += 1;
  const float b1 = state.cfg.beta1;
  const float b2 = state.cfg.beta2;
  const float corr1 =
      1.0f - std::pow(b1, static_cast<float>(state.step_count));
  const float corr2 =
      1.0f - std::pow(b2, static_cast<float>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    if (!p.same_shape(g)) throw_shape_mismatch("adam_step", p.dims, g.dims);
    if (!p.same_shape(m)) throw_shape_mismatch("adam_step state", p.dims, m.dims);
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      m.data[j] = b1 * m.data[j] + (1.0f - b1) * g.data[j];
      v.data[j] = b2 * v.data[j] + (1.0f - b2) * g.data[j] * g.data[j];
      const float mhat = m.data[j] / corr1;
      const float vhat = v.data[j] / corr2;
      p.data[j] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
    }
  }
}

}  // namespace oxygan
