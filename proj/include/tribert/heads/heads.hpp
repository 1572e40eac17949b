#pragma once

#include <string>
#include <vector>

#include "tribert/model_config.hpp"
#include "tribert/numerics/attention.hpp"
#include "tribert/numerics/layers.hpp"

namespace tribert::heads {

// ---- Weakly supervised region classification --------------------------------

struct RegionScores {
  Var beta_r;        // [C, R]
  Var video_scores;  // [C]
};

/// β_class = softmax over classes, β_det = softmax over regions; both [C, R].
RegionScores weak_scores_from_logits(Var h_c, Var h_d);

/// `prefix` names two linear maps `<prefix>_cls` and `<prefix>_det` (D -> C).
void init_weak_head(ParameterStore& store, Rng& rng, const std::string& prefix, std::size_t width,
                    std::size_t classes);
RegionScores weak_scores(Tape& tape, ParameterStore& store, const std::string& prefix, Var hidden);

/// Mean BCE of (0, 1) scores against multi-hot labels.
Var weak_bce_loss(Var video_scores, const Tensor& labels);

// ---- Audio classification ---------------------------------------------------

void init_audio_classifier(ParameterStore& store, Rng& rng, std::size_t width, std::size_t classes);

struct AudioClassification {
  Var logits;  // [C]
  Var loss;
};
AudioClassification audio_classify(Tape& tape, ParameterStore& store, Var h_a, const Tensor& labels);

// ---- Attention gate ---------------------------------------------------------

void init_attention_gate(ParameterStore& store, Rng& rng, const std::string& name, std::size_t gate_channels,
                         std::size_t skip_channels, std::size_t inner);
/// g [C_g, H, W], x [C_x, H, W] -> α ⊙ x with α = σ(ψ(relu(W_g g + W_x x + b))).
Var attention_gate(Tape& tape, ParameterStore& store, const std::string& name, Var g, Var x);
/// The α map [1, H, W] alone.
Var gate_coefficients(Tape& tape, ParameterStore& store, const std::string& name, Var g, Var x);

// ---- Attention U-Net --------------------------------------------------------

/// Channels at encoder level i (0-based): unet_base · 2^i.
std::size_t unet_channels(const ModelConfig& cfg, std::size_t level);

void init_unet(ParameterStore& store, Rng& rng, const ModelConfig& cfg);

/// Encoder outputs e_0 .. e_{L-1}; e_{L-1} is the bottleneck.
std::vector<Var> unet_encode(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var spec);

/// Bottleneck fusion with sos_fused, then the gated decoder. Returns
/// [mask_channels, rows, cols] logits.
Var unet_decode(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const std::vector<Var>& skips,
                Var sos_fused);

Var attention_unet_forward(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var spec, Var sos_fused);

/// Mean sigmoid BCE over every bin of every supervised mask.
Var mask_bce_loss(Var logits, const Tensor& gt);

}  // namespace tribert::heads
