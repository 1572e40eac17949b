#pragma once

#include <array>
#include <vector>

#include "tribert/model_config.hpp"
#include "tribert/numerics/attention.hpp"
#include "tribert/numerics/layers.hpp"

namespace tribert::transformer {

enum Stream : std::size_t { kVision = 0, kPose = 1, kAudio = 2 };
inline constexpr std::array<const char*, 3> kStreamNames{"v", "p", "a"};

/// Stream inputs: vision and pose are [7, d_v] with SOS at row 0, audio is
/// [7, d_a] (the clip token repeated). `masked[s][i]` marks zeroed tokens.
struct TokenSet {
  std::array<Var, 3> streams;
  std::array<std::vector<bool>, 3> masked;
};

struct TriHiddenStates {
  std::array<Var, 3> h;
  Var sos_fused;  // [2·d_v + d_a]
};

std::size_t stream_width(const ModelConfig& cfg, std::size_t s);

void init_tribert(ParameterStore& store, Rng& rng, const ModelConfig& cfg);

/// Prepends the learned SOS tokens and repeats the audio token seq_len() times.
TokenSet assemble_tokens(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var vision_regions,
                         Var pose_tokens, Var audio_token);

/// Per-token masking decisions for one stream; row 0 (SOS) is never masked.
std::vector<bool> mask_flags(double p, const RunContext& ctx, std::size_t stream, std::size_t count);

/// Zeroes masked vision/pose content (training only), then adds positional
/// (when enabled) and modality embeddings.
TokenSet embed_and_mask(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const TokenSet& tokens,
                        const RunContext& ctx);

/// One co-attention layer: each stream attends over the concatenated tokens
/// of the other two, followed by the usual residual/LN/FFN/residual/LN.
std::array<Var, 3> tri_co_attention_layer(Tape& tape, ParameterStore& store, const ModelConfig& cfg,
                                          std::size_t layer, const std::array<Var, 3>& h, const RunContext& ctx);

TriHiddenStates tribert_forward(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const TokenSet& embedded,
                                const RunContext& ctx);

}  // namespace tribert::transformer
