#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tribert/dsp/signal.hpp"

namespace tribert::dsp {

/// PCM 16-bit mono little-endian. Samples are clamped to [-1, 32767/32768].
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform read_wav(const std::filesystem::path& path);
/// Rounds samples onto the 16-bit grid so a WAV round trip is exact.
void quantize_pcm16(Waveform& w);

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  bool operator==(const GrayImage&) const = default;
};

void write_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);

/// log1p-compressed, max-normalized 8-bit rendering; row 0 is drawn at the bottom.
GrayImage grid_to_image(const Tensor& grid);

/// Full-precision CSV, one grid row per line.
void write_csv_grid(const std::filesystem::path& path, const Tensor& grid);
Tensor read_csv_grid(const std::filesystem::path& path);

}  // namespace tribert::dsp
