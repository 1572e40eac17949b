#include "tribert/numerics/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace tribert {

void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, const AdamState& state,
                 double lr) {
  if (param.shape != grad.shape || param.shape != m.shape || param.shape != v.shape)
    throw std::invalid_argument("adam_update: shape mismatch " + shape_str(param.shape) + " / " +
                                shape_str(grad.shape));
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.data[i];
    m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * g;
    v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * g * g;
    const double mhat = m.data[i] / c1;
    const double vhat = v.data[i] / c2;
    param.data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

void adam_step(ParameterStore& params, AdamState& state, double lr) {
  ++state.step;
  for (auto& [name, p] : params) {
    auto [mit, m_new] = state.first_moment.try_emplace(name, p.value.shape);
    auto [vit, v_new] = state.second_moment.try_emplace(name, p.value.shape);
    adam_update(p.value, p.grad, mit->second, vit->second, state, lr);
  }
}

}  // namespace tribert
