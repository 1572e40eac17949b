#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace tribert {

/// Train/eval switch plus the keys that make dropout and token masking replayable.
struct RunContext {
  bool train = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t slot = 0;  // distinguishes scenes within one step
};

struct ModelConfig {
  std::size_t classes = 4;

  // Visual stream.
  std::size_t frame_size = 64;
  std::size_t backbone_width = 16;  // widths w, 2w, 4w, 4w at strides 2, 2, 2, 1

  // Pose stream.
  std::size_t gcn_hidden = 32;
  std::size_t gcn_layers = 3;

  // Audio stream.
  std::size_t audio_width = 8;  // widths w, 2w, 4w
  std::size_t spec_rows = 128, spec_cols = 128;

  // Transformer.
  std::size_t d_v = 64, d_a = 32;
  std::size_t heads = 8;
  std::size_t layers = 2;
  std::size_t ffn_mult = 2;
  double dropout = 0.1;
  double mask_prob = 0.15;
  bool positional = true;

  // Separation head.
  std::size_t unet_levels = 5;
  std::size_t unet_base = 16;
  std::size_t fusion_dim = 64;
  std::size_t fusion_heads = 4;
  std::size_t mask_channels = 2;

  // Loss weights.
  double w_mask = 1.0, w_cls = 0.1;

  std::size_t sos_width() const { return 2 * d_v + d_a; }
  std::size_t region_tokens() const { return 6; }
  std::size_t seq_len() const { return 7; }

  /// Throws std::invalid_argument on inconsistent dimensions.
  void validate() const;

  std::map<std::string, std::string> to_map() const;
  /// Unknown keys are an error; missing keys keep their defaults.
  static ModelConfig from_map(const std::map<std::string, std::string>& m);

  static ModelConfig desk();
  static ModelConfig paper();
};

}  // namespace tribert
