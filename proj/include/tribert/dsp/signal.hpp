#pragma once

#include <cstddef>
#include <vector>

#include "tribert/numerics/tensor.hpp"

namespace tribert::dsp {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 11025;

  std::size_t size() const { return samples.size(); }
};

/// One-sided complex STFT, row-major F×T (re[f * frames + t]).
struct Spectrogram {
  std::size_t freqs = 0, frames = 0;
  std::size_t window_len = 0, hop = 0;
  int sample_rate = 11025;
  std::vector<double> re, im;

  double& real(std::size_t f, std::size_t t) { return re[f * frames + t]; }
  double& imag(std::size_t f, std::size_t t) { return im[f * frames + t]; }
  double real(std::size_t f, std::size_t t) const { return re[f * frames + t]; }
  double imag(std::size_t f, std::size_t t) const { return im[f * frames + t]; }
  Tensor magnitude() const;
};

struct LogSpectrogram {
  Tensor magnitude;               // rows × cols, rows ordered by increasing frequency
  std::vector<double> warp_map;   // fractional source bin per row
};

/// Analysis geometry. `num_samples` is chosen so the STFT has exactly `cols` frames.
struct AudioProfile {
  int sample_rate = 11025;
  std::size_t window_len = 510, hop = 128;
  std::size_t rows = 128, cols = 128;
  std::size_t num_samples = 16766;

  std::size_t freqs() const { return window_len / 2 + 1; }
  double duration_s() const { return static_cast<double>(num_samples) / sample_rate; }

  static AudioProfile desk();
  static AudioProfile paper();
};

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

Spectrogram stft(const Waveform& w, std::size_t window_len, std::size_t hop);
/// Normalizer floor for istft, relative to the largest window-sum.
inline constexpr double kWindowSumFloor = 0.1;

/// Weighted overlap-add divided by max(Σw², kWindowSumFloor · max Σw²);
/// samples whose window-sum is below 1e-8 are zero. Exact away from the first
/// and last window. Output length (frames - 1) * hop + window_len.
Waveform istft(const Spectrogram& s);

/// Source bin index sampled by each of `rows` warped rows: (F-1)^(r/(rows-1)).
std::vector<double> warp_map(std::size_t freqs, std::size_t rows);
/// F×T magnitude → rows×cols, geometric rows from bin 1 to bin F-1, first
/// `cols` frames (zero-padded if T < cols).
LogSpectrogram log_freq_warp(const Tensor& mag, std::size_t rows, std::size_t cols);
/// rows×cols → F×T by linear interpolation over log-bin position. Requires T ≤ cols.
Tensor log_freq_unwarp(const LogSpectrogram& log, std::size_t freqs, std::size_t frames);

/// Sample-wise sum, clamped to ±4.
Waveform mix(const Waveform& a, const Waveform& b);
Waveform mix(const std::vector<Waveform>& parts);

/// One-hot dominance masks: mask_i = 1 where source i has the largest
/// magnitude, ties to the lowest index.
std::vector<Tensor> ground_truth_masks(const std::vector<Tensor>& source_mags);

/// Unwarps a rows×cols mask in [0,1], scales the mixture's complex bins and inverts.
Waveform apply_mask_and_reconstruct(const Tensor& mask, const Spectrogram& mix_spec);

/// log1p of the warped mixture magnitude, the network-facing input grid.
Tensor network_input(const Waveform& w, const AudioProfile& p);

double energy(const Waveform& w);

}  // namespace tribert::dsp
