#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "tribert/numerics/tape.hpp"

namespace tribert {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

/// Bias-corrected Adam over every parameter in the store, using Parameter::grad.
/// Moment buffers are created on first sight of a parameter name.
void adam_step(ParameterStore& params, AdamState& state, double lr);

/// Single-tensor form, used by tests and by adam_step.
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, const AdamState& state,
                 double lr);

}  // namespace tribert
