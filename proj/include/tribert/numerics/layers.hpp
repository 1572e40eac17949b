#pragma once

// Named-parameter helpers: `<name>.w` / `<name>.b` in a ParameterStore.

#include <string>

#include "tribert/model_config.hpp"
#include "tribert/numerics/ops.hpp"
#include "tribert/numerics/random.hpp"

namespace tribert {

/// w [in x out] Xavier-uniform, b zeros.
void add_linear(ParameterStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out);
/// w [out x in x k x k].
void add_conv(ParameterStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
              std::size_t k);
/// w [in x out x k x k].
void add_conv_transpose(ParameterStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                        std::size_t k);
/// gamma ones, beta zeros.
void add_layer_norm(ParameterStore& store, const std::string& name, std::size_t width);

Var apply_linear(Tape& tape, ParameterStore& store, const std::string& name, Var x);
Var apply_conv(Tape& tape, ParameterStore& store, const std::string& name, Var x, Conv2dOptions opt = {});
Var apply_conv_transpose(Tape& tape, ParameterStore& store, const std::string& name, Var x, std::size_t stride,
                         std::size_t pad);
Var apply_layer_norm(Tape& tape, ParameterStore& store, const std::string& name, Var x);

/// Stable 64-bit id for a dropout site name.
std::uint64_t site_id(const std::string& name);
/// Dropout key for one site within the scene slot of a run context.
DropoutKey dropout_key(const RunContext& ctx, const std::string& site);

}  // namespace tribert
