#include <cmath>
#include <numbers>
#include <stdexcept>

#include "tribert/numerics/random.hpp"
#include "tribert/synthdata/synthdata.hpp"

namespace tribert::synth {

std::vector<InstrumentSpec> instrument_table(std::size_t classes) {
  if (classes < 1 || classes > kMaxClasses)
    throw std::invalid_argument("instrument_table: classes must be in 1.." + std::to_string(kMaxClasses));
  static const std::array<std::array<std::uint8_t, 3>, kMaxClasses> palette{{{220, 40, 40},
                                                                             {40, 200, 60},
                                                                             {50, 80, 230},
                                                                             {230, 210, 40},
                                                                             {210, 50, 200},
                                                                             {40, 210, 210},
                                                                             {240, 140, 30},
                                                                             {235, 235, 235}}};
  std::vector<InstrumentSpec> out;
  for (std::size_t c = 0; c < classes; ++c) {
    InstrumentSpec s;
    s.class_id = c;
    s.f_lo = 110.0 * std::pow(1.4, static_cast<double>(c));
    s.f_hi = 1.15 * s.f_lo;
    const double decay = 0.4 + 0.3 * static_cast<double>(c % 4);
    double total = 0;
    for (int h = 1; h <= 4; ++h) {
      s.harmonic_weights.push_back(std::pow(static_cast<double>(h), -decay));
      total += s.harmonic_weights.back();
    }
    for (auto& w : s.harmonic_weights) w /= total;
    s.env_lo = 2.0 + 0.75 * static_cast<double>(c);
    s.env_hi = s.env_lo + 0.5;
    s.glyph = static_cast<GlyphShape>(c);
    s.color = palette[c];
    out.push_back(std::move(s));
  }
  return out;
}

InstrumentDraw draw_instrument(const InstrumentSpec& spec, std::uint64_t seed) {
  Rng rng(hash_combine(seed, spec.class_id));
  InstrumentDraw d;
  d.f0 = rng.uniform(spec.f_lo, spec.f_hi);
  d.env_rate = rng.uniform(spec.env_lo, spec.env_hi);
  d.env_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t h = 0; h < spec.harmonic_weights.size(); ++h)
    d.harmonic_phases.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
  return d;
}

double envelope(const InstrumentDraw& d, double t) {
  return 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * d.env_rate * t + d.env_phase);
}

dsp::Waveform synth_instrument(const InstrumentSpec& spec, std::uint64_t seed, std::size_t num_samples,
                               int sample_rate, std::size_t min_samples) {
  if (spec.harmonic_weights.empty()) throw std::invalid_argument("synth_instrument: empty harmonic list");
  if (num_samples < min_samples)
    throw std::invalid_argument("synth_instrument: duration shorter than one analysis window");
  const InstrumentDraw d = draw_instrument(spec, seed);
  dsp::Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(num_samples, 0.0);
  const double nyquist_guard = 0.45 * sample_rate;
  double power = 0;
  for (std::size_t n = 0; n < num_samples; ++n) {
    const double t = static_cast<double>(n) / sample_rate;
    double v = 0;
    for (std::size_t h = 0; h < spec.harmonic_weights.size(); ++h) {
      const double f = d.f0 * static_cast<double>(h + 1);
      if (f >= nyquist_guard) break;
      v += spec.harmonic_weights[h] * std::sin(2.0 * std::numbers::pi * f * t + d.harmonic_phases[h]);
    }
    w.samples[n] = 0.45 * envelope(d, t) * v;
    power += w.samples[n] * w.samples[n];
  }
  const double noise_std = 0.01 * std::sqrt(power / static_cast<double>(num_samples));
  Rng noise(hash_combine(seed, 0x6e6f697365ULL));
  for (auto& v : w.samples) v += noise_std * noise.normal();
  dsp::quantize_pcm16(w);
  return w;
}

}  // namespace tribert::synth
