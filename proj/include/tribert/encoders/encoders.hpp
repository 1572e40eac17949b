#pragma once

#include <array>
#include <vector>

#include "tribert/model_config.hpp"
#include "tribert/numerics/layers.hpp"
#include "tribert/synthdata/synthdata.hpp"

namespace tribert::encoders {

// ---- Visual segmentation network --------------------------------------------

/// Backbone ("vis.*") plus both attention branches ("head.vis_*").
void init_visual(ParameterStore& store, Rng& rng, const ModelConfig& cfg);
void init_visual_backbone(ParameterStore& store, Rng& rng, const ModelConfig& cfg);
void init_visual_attention(ParameterStore& store, Rng& rng, const ModelConfig& cfg);

/// [3, 3, H, W] RGB in [-0.5, 0.5].
Tensor frames_tensor(const std::array<synth::RgbImage, synth::kFramesPerScene>& frames);

/// frames [N, 3, H, W] -> V_e [N, d_v, H/8, W/8]; reflect padding throughout.
Var visual_backbone(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var frames);

/// λ = softplus(1×1 conv(dropout(V_e))), normalized to unit sum per class plane.
Var expansive_attention(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var v_e, const RunContext& ctx);
/// sigmoid(1×1 conv(dropout(V_e))), no spatial normalization.
Var discriminative_attention(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var v_e,
                             const RunContext& ctx);

/// Spatial normalization of a non-negative [N, C, h, w] map over (h, w).
Var spatial_normalize(Var lambda);

struct RegionPool {
  Var tokens;                                     // [2N, D], frame-major, best class first
  Tensor frame_scores;                            // [N, C], spatial mean of the fused map
  std::vector<std::array<std::size_t, 2>> top2;   // per frame
};

/// Per frame: top-2 classes by mean fused score; each token is the fused-map
/// weighted mean of V_e columns.
RegionPool pool_regions(Var fused, Var v_e);

struct VisualOutput {
  Var v_e, s_e, s_d, fused;
  RegionPool regions;
};
VisualOutput encode_frames(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const Tensor& frames,
                           const RunContext& ctx);

// ---- Pose graph network -----------------------------------------------------

inline constexpr std::size_t kPoseFeatures = 5;

void init_pose(ParameterStore& store, Rng& rng, const ModelConfig& cfg);

/// Â = D^-1/2 (A + I) D^-1/2 over joints × frames, with skeleton edges inside
/// each frame and joint-to-itself edges between consecutive frames.
SparseMatrix space_time_adjacency(const std::vector<synth::Edge>& edges, std::size_t joints, std::size_t frames);
/// Throws std::invalid_argument unless a == aᵀ exactly.
void check_symmetric(const SparseMatrix& a);

/// [T, J, 3] track -> [T·J, 5] node features: x/size, y/size, confidence and the
/// joint's displacement from its clip mean (in units of size/16).
Tensor pose_features(const Tensor& pose, std::size_t frame_size);

/// K layers of relu(Â H W + b), mean over joints within three time segments,
/// linear to d_v. Returns [6, d_v] tokens (segment-major, person slot 1 zero).
Var pose_graph_encode(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var features,
                      const SparseMatrix& a_hat, std::size_t frames, std::size_t joints);

// ---- Audio network ----------------------------------------------------------

void init_audio(ParameterStore& store, Rng& rng, const ModelConfig& cfg);

/// [1, rows, cols] log spectrogram -> [d_a].
Var audio_encode(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var spec);

}  // namespace tribert::encoders
