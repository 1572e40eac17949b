#include <stdexcept>

#include "tribert/encoders/encoders.hpp"

namespace tribert::encoders {

void init_audio(ParameterStore& store, Rng& rng, const ModelConfig& cfg) {
  std::size_t in = 1;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t out = cfg.audio_width << i;
    add_conv(store, rng, "aud.conv" + std::to_string(i), in, out, 3);
    in = out;
  }
  add_linear(store, rng, "aud.out", in, cfg.d_a);
}

Var audio_encode(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var spec) {
  if (spec.value().rank() != 3 || spec.dim(0) != 1 || spec.dim(1) != cfg.spec_rows || spec.dim(2) != cfg.spec_cols)
    throw std::invalid_argument("audio_encode: expected [1, " + std::to_string(cfg.spec_rows) + ", " +
                                std::to_string(cfg.spec_cols) + "], got " + shape_str(spec.shape()));
  Var x = spec;
  for (std::size_t i = 0; i < 3; ++i)
    x = avg_pool2d(relu(apply_conv(tape, store, "aud.conv" + std::to_string(i), x, {1, 1})), 2);
  const std::size_t c = x.dim(0);
  Var pooled = mean_axis(reshape(x, {c, x.dim(1) * x.dim(2)}), 1);
  return reshape(apply_linear(tape, store, "aud.out", reshape(pooled, {1, c})), {cfg.d_a});
}

}  // namespace tribert::encoders
