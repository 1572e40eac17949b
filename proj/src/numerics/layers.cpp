#include "tribert/numerics/layers.hpp"

namespace tribert {

void add_linear(ParameterStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out) {
  store.add(name + ".w", xavier_uniform(rng, {in, out}, in, out));
  store.add(name + ".b", Tensor({out}));
}

void add_conv(ParameterStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
              std::size_t k) {
  store.add(name + ".w", xavier_uniform(rng, {out, in, k, k}, in * k * k, out * k * k));
  store.add(name + ".b", Tensor({out}));
}

void add_conv_transpose(ParameterStore& store, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                        std::size_t k) {
  store.add(name + ".w", xavier_uniform(rng, {in, out, k, k}, in * k * k, out * k * k));
  store.add(name + ".b", Tensor({out}));
}

void add_layer_norm(ParameterStore& store, const std::string& name, std::size_t width) {
  store.add(name + ".gamma", Tensor({width}, 1.0));
  store.add(name + ".beta", Tensor({width}));
}

Var apply_linear(Tape& tape, ParameterStore& store, const std::string& name, Var x) {
  return linear(x, tape.param(store.at(name + ".w")), tape.param(store.at(name + ".b")));
}

Var apply_conv(Tape& tape, ParameterStore& store, const std::string& name, Var x, Conv2dOptions opt) {
  return conv2d(x, tape.param(store.at(name + ".w")), tape.param(store.at(name + ".b")), opt);
}

Var apply_conv_transpose(Tape& tape, ParameterStore& store, const std::string& name, Var x, std::size_t stride,
                         std::size_t pad) {
  return conv_transpose2d(x, tape.param(store.at(name + ".w")), tape.param(store.at(name + ".b")), stride, pad);
}

Var apply_layer_norm(Tape& tape, ParameterStore& store, const std::string& name, Var x) {
  return layer_norm(x, tape.param(store.at(name + ".gamma")), tape.param(store.at(name + ".beta")));
}

std::uint64_t site_id(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

DropoutKey dropout_key(const RunContext& ctx, const std::string& site) {
  return {ctx.seed, hash_combine(site_id(site), ctx.slot), ctx.step};
}

}  // namespace tribert
