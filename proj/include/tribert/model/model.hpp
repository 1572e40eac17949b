#pragma once

#include <map>
#include <string>
#include <vector>

#include "tribert/dsp/signal.hpp"
#include "tribert/encoders/encoders.hpp"
#include "tribert/heads/heads.hpp"
#include "tribert/numerics/adam.hpp"
#include "tribert/numerics/checkpoint.hpp"
#include "tribert/synthdata/synthdata.hpp"
#include "tribert/transformer/tribert.hpp"

namespace tribert::model {

/// Per-scene network inputs, computed once per dataset.
struct SceneInputs {
  Tensor frames;         // [3, 3, S, S]
  Tensor pose_features;  // [T·J, 5]
  Tensor labels;         // [C]
};
SceneInputs scene_inputs(const synth::SceneSample& scene, const ModelConfig& cfg);
std::vector<SceneInputs> dataset_inputs(const synth::Dataset& ds, const ModelConfig& cfg);

struct Model {
  ModelConfig cfg;
  dsp::AudioProfile profile;
  std::size_t pose_frames = 0;
  ParameterStore params;
  SparseMatrix a_hat;
};

Model create_model(const ModelConfig& cfg, const dsp::AudioProfile& profile, std::size_t pose_frames,
                   std::uint64_t seed);

/// Class-dependent parameters all live under "head.".
bool is_class_head(const std::string& name);
/// Drops and re-initializes every class-dependent layer for `classes` outputs.
void rebuild_class_heads(Model& m, std::size_t classes, std::uint64_t seed);

/// Model config, audio profile and pose length as checkpoint config entries.
std::map<std::string, std::string> model_manifest(const Model& m);
/// Rebuilds the architecture described by a checkpoint and restores its weights.
Model model_from_checkpoint(const Checkpoint& ckpt);

struct SceneForward {
  encoders::VisualOutput visual;
  Var pose_tokens;
  transformer::TokenSet tokens;  // before embedding
  transformer::TriHiddenStates hidden;
  heads::RegionScores vision_scores, pose_scores;
};

SceneForward forward_scene(Tape& tape, Model& m, const SceneInputs& in, Var audio_token, const RunContext& ctx);

struct LossBundle {
  double mask_bce = 0, cls_vision = 0, cls_pose = 0, cls_audio = 0, total = 0;
};

struct PairGraph {
  Var total, mask_bce, cls_vision, cls_pose, cls_audio;
  std::vector<Var> mask_logits;  // one [mask_channels, rows, cols] grid per scene (a, b)
};

/// Mixture audio feeds the audio stream of both scenes; each scene's decoder
/// pass supervises its own sources on channels 0.. in class order.
PairGraph pair_forward(Tape& tape, Model& m, const synth::MixPair& pair, const std::vector<SceneInputs>& inputs,
                       const RunContext& ctx);

/// One optimizer step over a batch of pairs (mean loss). Throws on a non-finite loss.
LossBundle joint_step(Model& m, AdamState& adam, const std::vector<synth::MixPair>& batch,
                      const std::vector<SceneInputs>& inputs, double lr, const RunContext& ctx);

struct SceneScores {
  std::vector<double> vision, pose, audio;  // per-class probabilities
};
/// Video-level class scores of one scene heard through `audio`.
SceneScores classify_scene(Model& m, const SceneInputs& in, const dsp::Waveform& audio);

/// Soft masks in [0, 1], one per pair source in pair order.
std::vector<Tensor> predict_masks(Model& m, const synth::MixPair& pair, const std::vector<SceneInputs>& inputs);

}  // namespace tribert::model
