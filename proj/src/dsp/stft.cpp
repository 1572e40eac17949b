#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

#include "tribert/dsp/signal.hpp"

namespace tribert::dsp {
namespace {

// Planner calls are not thread-safe in FFTW; execution on distinct buffers is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct R2C {
  std::size_t n;
  double* in;
  fftw_complex* out;
  fftw_plan plan;

  explicit R2C(std::size_t n_) : n(n_) {
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  ~R2C() {
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
  }
  R2C(const R2C&) = delete;
  R2C& operator=(const R2C&) = delete;
};

struct C2R {
  std::size_t n;
  fftw_complex* in;
  double* out;
  fftw_plan plan;

  explicit C2R(std::size_t n_) : n(n_) {
    in = fftw_alloc_complex(n / 2 + 1);
    out = fftw_alloc_real(n);
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_c2r_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  ~C2R() {
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
  }
  C2R(const C2R&) = delete;
  C2R& operator=(const C2R&) = delete;
};

}  // namespace

AudioProfile AudioProfile::desk() { return {}; }

AudioProfile AudioProfile::paper() {
  AudioProfile p;
  p.window_len = 1022;
  p.hop = 256;
  p.rows = p.cols = 256;
  p.num_samples = 1022 + 255 * 256;
  return p;
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

Tensor Spectrogram::magnitude() const {
  Tensor m({freqs, frames});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::hypot(re[i], im[i]);
  return m;
}

Spectrogram stft(const Waveform& w, std::size_t window_len, std::size_t hop) {
  if (window_len < 2 || hop == 0) throw std::invalid_argument("stft: window_len must be >= 2 and hop > 0");
  if (w.size() < window_len)
    throw std::invalid_argument("stft: input of " + std::to_string(w.size()) + " samples is shorter than one window (" +
                                std::to_string(window_len) + ")");
  Spectrogram s;
  s.window_len = window_len;
  s.hop = hop;
  s.sample_rate = w.sample_rate;
  s.freqs = window_len / 2 + 1;
  s.frames = 1 + (w.size() - window_len) / hop;
  s.re.assign(s.freqs * s.frames, 0.0);
  s.im.assign(s.freqs * s.frames, 0.0);
  const auto win = hann_window(window_len);
  R2C fft(window_len);
  for (std::size_t t = 0; t < s.frames; ++t) {
    const double* x = w.samples.data() + t * hop;
    for (std::size_t n = 0; n < window_len; ++n) fft.in[n] = x[n] * win[n];
    fftw_execute(fft.plan);
    for (std::size_t f = 0; f < s.freqs; ++f) {
      s.real(f, t) = fft.out[f][0];
      s.imag(f, t) = fft.out[f][1];
    }
  }
  return s;
}

Waveform istft(const Spectrogram& s) {
  const std::size_t n = s.window_len;
  if (n < 2 || s.hop == 0 || s.freqs != n / 2 + 1 || s.re.size() != s.freqs * s.frames ||
      s.im.size() != s.re.size())
    throw std::invalid_argument("istft: inconsistent spectrogram metadata");
  Waveform out;
  out.sample_rate = s.sample_rate;
  if (s.frames == 0) return out;
  const std::size_t len = (s.frames - 1) * s.hop + n;
  out.samples.assign(len, 0.0);
  std::vector<double> wsum(len, 0.0);
  const auto win = hann_window(n);
  C2R ifft(n);
  for (std::size_t t = 0; t < s.frames; ++t) {
    for (std::size_t f = 0; f < s.freqs; ++f) {
      ifft.in[f][0] = s.real(f, t);
      ifft.in[f][1] = s.imag(f, t);
    }
    fftw_execute(ifft.plan);
    const std::size_t off = t * s.hop;
    for (std::size_t i = 0; i < n; ++i) {
      out.samples[off + i] += ifft.out[i] / static_cast<double>(n) * win[i];
      wsum[off + i] += win[i] * win[i];
    }
  }
  const double floor = kWindowSumFloor * *std::max_element(wsum.begin(), wsum.end());
  for (std::size_t i = 0; i < len; ++i)
    out.samples[i] = wsum[i] < 1e-8 ? 0.0 : out.samples[i] / std::max(wsum[i], floor);
  return out;
}

}  // namespace tribert::dsp
