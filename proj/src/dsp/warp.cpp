#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tribert/dsp/signal.hpp"

namespace tribert::dsp {

std::vector<double> warp_map(std::size_t freqs, std::size_t rows) {
  if (freqs < 3 || rows < 2) throw std::invalid_argument("warp_map: need freqs >= 3 and rows >= 2");
  std::vector<double> m(rows);
  const double top = static_cast<double>(freqs - 1);
  for (std::size_t r = 0; r < rows; ++r) m[r] = std::pow(top, static_cast<double>(r) / (rows - 1));
  m.front() = 1.0;
  m.back() = top;
  return m;
}

LogSpectrogram log_freq_warp(const Tensor& mag, std::size_t rows, std::size_t cols) {
  if (mag.rank() != 2) throw std::invalid_argument("log_freq_warp: expected F×T magnitude, got " + shape_str(mag.shape));
  const std::size_t F = mag.dim(0), T = mag.dim(1);
  if (T < 1) throw std::invalid_argument("log_freq_warp: T < 1");
  LogSpectrogram out;
  out.warp_map = warp_map(F, rows);
  out.magnitude = Tensor({rows, cols});
  const std::size_t tn = std::min(T, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double pos = out.warp_map[r];
    const auto lo = std::min(static_cast<std::size_t>(pos), F - 2);
    const double frac = pos - static_cast<double>(lo);
    for (std::size_t t = 0; t < tn; ++t)
      out.magnitude.at(r, t) = (1.0 - frac) * mag.at(lo, t) + frac * mag.at(lo + 1, t);
  }
  return out;
}

Tensor log_freq_unwarp(const LogSpectrogram& log, std::size_t freqs, std::size_t frames) {
  const Tensor& m = log.magnitude;
  if (m.rank() != 2) throw std::invalid_argument("log_freq_unwarp: expected rows×cols grid");
  const std::size_t R = m.dim(0), C = m.dim(1);
  if (frames < 1) throw std::invalid_argument("log_freq_unwarp: T < 1");
  if (frames > C)
    throw std::invalid_argument("log_freq_unwarp: " + std::to_string(frames) + " frames exceed the " +
                                std::to_string(C) + "-column grid");
  if (R < 2 || freqs < 3) throw std::invalid_argument("log_freq_unwarp: degenerate geometry");
  if (!log.warp_map.empty() &&
      (log.warp_map.size() != R || std::abs(log.warp_map.back() - static_cast<double>(freqs - 1)) > 1e-9))
    throw std::invalid_argument("log_freq_unwarp: warp map does not match " + std::to_string(freqs) + " bins");
  Tensor out({freqs, frames});
  const double denom = std::log(static_cast<double>(freqs - 1));
  for (std::size_t k = 0; k < freqs; ++k) {
    const double pos = k == 0 ? 0.0 : (R - 1) * std::log(static_cast<double>(k)) / denom;
    const auto lo = std::min(static_cast<std::size_t>(pos), R - 2);
    const double frac = std::clamp(pos - static_cast<double>(lo), 0.0, 1.0);
    for (std::size_t t = 0; t < frames; ++t) out.at(k, t) = (1.0 - frac) * m.at(lo, t) + frac * m.at(lo + 1, t);
  }
  return out;
}

Waveform mix(const Waveform& a, const Waveform& b) { return mix(std::vector<Waveform>{a, b}); }

Waveform mix(const std::vector<Waveform>& parts) {
  if (parts.empty()) throw std::invalid_argument("mix: no inputs");
  Waveform out;
  out.sample_rate = parts[0].sample_rate;
  out.samples.assign(parts[0].size(), 0.0);
  for (const auto& p : parts) {
    if (p.size() != out.size()) throw std::invalid_argument("mix: length mismatch");
    if (p.sample_rate != out.sample_rate) throw std::invalid_argument("mix: sample rate mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) out.samples[i] += p.samples[i];
  }
  for (auto& v : out.samples) v = std::clamp(v, -4.0, 4.0);
  return out;
}

double energy(const Waveform& w) {
  double e = 0.0;
  for (double v : w.samples) e += v * v;
  return e;
}

std::vector<Tensor> ground_truth_masks(const std::vector<Tensor>& mags) {
  if (mags.size() < 2) throw std::invalid_argument("ground_truth_masks: need at least 2 sources");
  for (const auto& m : mags)
    if (m.shape != mags[0].shape) throw std::invalid_argument("ground_truth_masks: shape mismatch");
  std::vector<Tensor> masks(mags.size(), Tensor(mags[0].shape));
  for (std::size_t i = 0; i < mags[0].size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < mags.size(); ++j)
      if (mags[j][i] > mags[best][i]) best = j;
    masks[best][i] = 1.0;
  }
  return masks;
}

Waveform apply_mask_and_reconstruct(const Tensor& mask, const Spectrogram& mix_spec) {
  if (mask.rank() != 2) throw std::invalid_argument("apply_mask_and_reconstruct: mask must be 2-D");
  if (mix_spec.frames > mask.dim(1))
    throw std::invalid_argument("apply_mask_and_reconstruct: mixture has " + std::to_string(mix_spec.frames) +
                                " frames but the mask only " + std::to_string(mask.dim(1)));
  LogSpectrogram lm{mask, {}};
  const Tensor lin = log_freq_unwarp(lm, mix_spec.freqs, mix_spec.frames);
  Spectrogram s = mix_spec;
  for (std::size_t i = 0; i < lin.size(); ++i) {
    s.re[i] *= lin[i];
    s.im[i] *= lin[i];
  }
  return istft(s);
}

Tensor network_input(const Waveform& w, const AudioProfile& p) {
  const Spectrogram s = stft(w, p.window_len, p.hop);
  Tensor g = log_freq_warp(s.magnitude(), p.rows, p.cols).magnitude;
  for (auto& v : g.data) v = std::log1p(v);
  return g;
}

}  // namespace tribert::dsp
