#include "tribert/model/model.hpp"

#include <cmath>
#include <stdexcept>

#include "tribert/synthdata/skeleton.hpp"

namespace tribert::model {
namespace {

using transformer::kAudio;
using transformer::kPose;
using transformer::kVision;

void init_class_heads(Model& m, Rng& rng) {
  const auto& c = m.cfg;
  encoders::init_visual_attention(m.params, rng, c);
  heads::init_weak_head(m.params, rng, "head.vis", c.d_v, c.classes);
  heads::init_weak_head(m.params, rng, "head.pose", c.d_v, c.classes);
  heads::init_audio_classifier(m.params, rng, c.d_a, c.classes);
}

std::size_t parse_size(const std::map<std::string, std::string>& cfg, const std::string& key) {
  auto it = cfg.find(key);
  if (it == cfg.end()) throw std::invalid_argument("checkpoint: missing config entry '" + key + "'");
  return std::stoull(it->second);
}

Tensor stack_masks(const std::vector<const Tensor*>& masks) {
  const Tensor& first = *masks.front();
  Tensor t({masks.size(), first.dim(0), first.dim(1)});
  for (std::size_t k = 0; k < masks.size(); ++k)
    std::copy(masks[k]->data.begin(), masks[k]->data.end(), t.data.begin() + k * first.size());
  return t;
}

}  // namespace

SceneInputs scene_inputs(const synth::SceneSample& scene, const ModelConfig& cfg) {
  if (scene.labels.size() != cfg.classes)
    throw std::invalid_argument("scene has " + std::to_string(scene.labels.size()) + " classes, model expects " +
                                std::to_string(cfg.classes));
  if (scene.frames[0].width != cfg.frame_size)
    throw std::invalid_argument("scene frame size " + std::to_string(scene.frames[0].width) + " vs model " +
                                std::to_string(cfg.frame_size));
  return {encoders::frames_tensor(scene.frames), encoders::pose_features(scene.pose, cfg.frame_size), scene.labels};
}

std::vector<SceneInputs> dataset_inputs(const synth::Dataset& ds, const ModelConfig& cfg) {
  std::vector<SceneInputs> out;
  out.reserve(ds.scenes.size());
  for (const auto& r : ds.scenes) out.push_back(scene_inputs(r.scene, cfg));
  return out;
}

Model create_model(const ModelConfig& cfg, const dsp::AudioProfile& profile, std::size_t pose_frames,
                   std::uint64_t seed) {
  cfg.validate();
  if (profile.rows != cfg.spec_rows || profile.cols != cfg.spec_cols)
    throw std::invalid_argument("audio profile grid " + std::to_string(profile.rows) + "x" +
                                std::to_string(profile.cols) + " does not match the model's spectrogram grid");
  Model m;
  m.cfg = cfg;
  m.profile = profile;
  m.pose_frames = pose_frames;
  m.a_hat = encoders::space_time_adjacency(synth::skeleton_edges(), synth::kJoints, pose_frames);
  auto stream = [&](std::uint64_t k) { return Rng(hash_combine(seed, k)); };
  Rng r_vis = stream(1), r_pose = stream(2), r_aud = stream(3), r_tb = stream(4), r_unet = stream(5),
      r_head = stream(6);
  encoders::init_visual_backbone(m.params, r_vis, cfg);
  encoders::init_pose(m.params, r_pose, cfg);
  encoders::init_audio(m.params, r_aud, cfg);
  transformer::init_tribert(m.params, r_tb, cfg);
  heads::init_unet(m.params, r_unet, cfg);
  init_class_heads(m, r_head);
  return m;
}

bool is_class_head(const std::string& name) { return name.rfind("head.", 0) == 0; }

void rebuild_class_heads(Model& m, std::size_t classes, std::uint64_t seed) {
  std::vector<std::string> names;
  for (const auto& [n, p] : m.params)
    if (is_class_head(n)) names.push_back(n);
  for (const auto& n : names) m.params.erase(n);
  m.cfg.classes = classes;
  m.cfg.validate();
  Rng rng(hash_combine(seed, 6));
  init_class_heads(m, rng);
}

std::map<std::string, std::string> model_manifest(const Model& m) {
  auto out = m.cfg.to_map();
  std::map<std::string, std::string> r;
  for (auto& [k, v] : out) r["model." + k] = v;
  r["audio.sample_rate"] = std::to_string(m.profile.sample_rate);
  r["audio.window_len"] = std::to_string(m.profile.window_len);
  r["audio.hop"] = std::to_string(m.profile.hop);
  r["audio.rows"] = std::to_string(m.profile.rows);
  r["audio.cols"] = std::to_string(m.profile.cols);
  r["audio.num_samples"] = std::to_string(m.profile.num_samples);
  r["pose.frames"] = std::to_string(m.pose_frames);
  return r;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, std::string> mc;
  for (const auto& [k, v] : ckpt.config)
    if (k.rfind("model.", 0) == 0) mc[k.substr(6)] = v;
  const ModelConfig cfg = ModelConfig::from_map(mc);
  dsp::AudioProfile p;
  p.sample_rate = static_cast<double>(parse_size(ckpt.config, "audio.sample_rate"));
  p.window_len = parse_size(ckpt.config, "audio.window_len");
  p.hop = parse_size(ckpt.config, "audio.hop");
  p.rows = parse_size(ckpt.config, "audio.rows");
  p.cols = parse_size(ckpt.config, "audio.cols");
  p.num_samples = parse_size(ckpt.config, "audio.num_samples");
  Model m = create_model(cfg, p, parse_size(ckpt.config, "pose.frames"), 0);
  const std::size_t n = restore_parameters(ckpt, m.params);
  if (n != m.params.size())
    throw std::invalid_argument("checkpoint restores " + std::to_string(n) + " of " +
                                std::to_string(m.params.size()) + " parameters");
  return m;
}

SceneForward forward_scene(Tape& tape, Model& m, const SceneInputs& in, Var audio_token, const RunContext& ctx) {
  SceneForward f;
  f.visual = encoders::encode_frames(tape, m.params, m.cfg, in.frames, ctx);
  f.pose_tokens = encoders::pose_graph_encode(tape, m.params, m.cfg, tape.constant(in.pose_features), m.a_hat,
                                              m.pose_frames, synth::kJoints);
  f.tokens = transformer::assemble_tokens(tape, m.params, m.cfg, f.visual.regions.tokens, f.pose_tokens, audio_token);
  f.hidden = transformer::tribert_forward(tape, m.params, m.cfg,
                                          transformer::embed_and_mask(tape, m.params, m.cfg, f.tokens, ctx), ctx);
  f.vision_scores = heads::weak_scores(tape, m.params, "head.vis", slice(f.hidden.h[kVision], 0, 1, 6));
  f.pose_scores = heads::weak_scores(tape, m.params, "head.pose", slice(f.hidden.h[kPose], 0, 1, 6));
  return f;
}

PairGraph pair_forward(Tape& tape, Model& m, const synth::MixPair& pair, const std::vector<SceneInputs>& inputs,
                       const RunContext& ctx) {
  const auto& cfg = m.cfg;
  Tensor spec = dsp::network_input(pair.mixture, m.profile);
  spec.shape = {1, spec.dim(0), spec.dim(1)};
  Var spec_v = tape.constant(spec);
  Var audio_token = encoders::audio_encode(tape, m.params, cfg, spec_v);
  const auto skips = heads::unet_encode(tape, m.params, cfg, spec_v);

  Tensor union_labels({cfg.classes});
  for (auto c : pair.source_class) union_labels[c] = 1.0;

  PairGraph g;
  std::vector<Var> mask_terms, cls_v, cls_p, cls_a;
  double supervised = 0;
  const std::size_t scenes[2] = {pair.scene_a, pair.scene_b};
  for (std::size_t k = 0; k < 2; ++k) {
    RunContext sc = ctx;
    sc.slot = hash_combine(ctx.slot, k);
    const SceneInputs& in = inputs.at(scenes[k]);
    SceneForward f = forward_scene(tape, m, in, audio_token, sc);
    cls_v.push_back(heads::weak_bce_loss(f.vision_scores.video_scores, in.labels));
    cls_p.push_back(heads::weak_bce_loss(f.pose_scores.video_scores, in.labels));
    cls_a.push_back(heads::audio_classify(tape, m.params, f.hidden.h[kAudio], union_labels).loss);

    Var logits = heads::unet_decode(tape, m.params, cfg, skips, f.hidden.sos_fused);
    g.mask_logits.push_back(logits);
    std::vector<const Tensor*> own;
    for (std::size_t s = 0; s < pair.sources.size(); ++s)
      if (pair.source_scene[s] == scenes[k]) own.push_back(&pair.gt_masks[s]);
    if (own.size() > cfg.mask_channels)
      throw std::invalid_argument("scene has " + std::to_string(own.size()) + " sources but only " +
                                  std::to_string(cfg.mask_channels) + " mask channels");
    const double n = static_cast<double>(own.size());
    mask_terms.push_back(scale(heads::mask_bce_loss(slice(logits, 0, 0, own.size()), stack_masks(own)), n));
    supervised += n;
  }
  auto mean_of = [](const std::vector<Var>& v) { return scale(add(v[0], v[1]), 0.5); };
  g.mask_bce = scale(add(mask_terms[0], mask_terms[1]), 1.0 / supervised);
  g.cls_vision = mean_of(cls_v);
  g.cls_pose = mean_of(cls_p);
  g.cls_audio = mean_of(cls_a);
  g.total = add(scale(g.mask_bce, cfg.w_mask), scale(add(add(g.cls_vision, g.cls_pose), g.cls_audio), cfg.w_cls));
  return g;
}

LossBundle joint_step(Model& m, AdamState& adam, const std::vector<synth::MixPair>& batch,
                      const std::vector<SceneInputs>& inputs, double lr, const RunContext& ctx) {
  if (batch.empty()) throw std::invalid_argument("joint_step: empty batch");
  m.params.zero_grad();
  LossBundle l;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    RunContext pc = ctx;
    pc.train = true;
    pc.slot = b;
    Tape tape;
    PairGraph g = pair_forward(tape, m, batch[b], inputs, pc);
    l.mask_bce += w * g.mask_bce.value()[0];
    l.cls_vision += w * g.cls_vision.value()[0];
    l.cls_pose += w * g.cls_pose.value()[0];
    l.cls_audio += w * g.cls_audio.value()[0];
    l.total += w * g.total.value()[0];
    tape.backward(scale(g.total, w));
  }
  if (!std::isfinite(l.total))
    throw std::runtime_error("non-finite loss at step " + std::to_string(ctx.step));
  adam_step(m.params, adam, lr);
  return l;
}

SceneScores classify_scene(Model& m, const SceneInputs& in, const dsp::Waveform& audio) {
  Tape tape(false);
  Tensor spec = dsp::network_input(audio, m.profile);
  spec.shape = {1, spec.dim(0), spec.dim(1)};
  Var token = encoders::audio_encode(tape, m.params, m.cfg, tape.constant(spec));
  SceneForward f = forward_scene(tape, m, in, token, RunContext{});
  SceneScores s;
  s.vision = f.vision_scores.video_scores.value().data;
  s.pose = f.pose_scores.video_scores.value().data;
  Var logits = heads::audio_classify(tape, m.params, f.hidden.h[kAudio], Tensor({m.cfg.classes})).logits;
  for (double z : logits.value().data) s.audio.push_back(1.0 / (1.0 + std::exp(-z)));
  return s;
}

std::vector<Tensor> predict_masks(Model& m, const synth::MixPair& pair, const std::vector<SceneInputs>& inputs) {
  Tape tape(false);
  PairGraph g = pair_forward(tape, m, pair, inputs, RunContext{});
  std::vector<Tensor> masks;
  const std::size_t scenes[2] = {pair.scene_a, pair.scene_b};
  for (std::size_t k = 0; k < 2; ++k) {
    const Tensor& logits = g.mask_logits[k].value();
    const std::size_t plane = logits.dim(1) * logits.dim(2);
    std::size_t channel = 0;
    for (std::size_t s = 0; s < pair.sources.size(); ++s) {
      if (pair.source_scene[s] != scenes[k]) continue;
      Tensor mask({logits.dim(1), logits.dim(2)});
      for (std::size_t i = 0; i < plane; ++i) mask[i] = 1.0 / (1.0 + std::exp(-logits[channel * plane + i]));
      masks.push_back(std::move(mask));
      ++channel;
    }
  }
  std::vector<Tensor> ordered(pair.sources.size());
  std::size_t next = 0;
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t s = 0; s < pair.sources.size(); ++s)
      if (pair.source_scene[s] == scenes[k]) ordered[s] = std::move(masks[next++]);
  return ordered;
}

}  // namespace tribert::model
