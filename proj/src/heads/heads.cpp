#include "tribert/heads/heads.hpp"

#include <stdexcept>

namespace tribert::heads {
namespace {

void require_binary(const Tensor& t, const char* what) {
  for (double v : t.data)
    if (v != 0.0 && v != 1.0) throw std::invalid_argument(std::string(what) + ": targets must be 0 or 1");
}

}  // namespace

RegionScores weak_scores_from_logits(Var h_c, Var h_d) {
  if (h_c.shape() != h_d.shape() || h_c.value().rank() != 2)
    throw std::invalid_argument("weak_scores: stream shapes " + shape_str(h_c.shape()) + " and " +
                                shape_str(h_d.shape()));
  if (h_c.dim(0) < 2) throw std::invalid_argument("weak_scores: need at least 2 classes");
  RegionScores r;
  r.beta_r = mul(softmax(h_c, 0), softmax(h_d, 1));
  r.video_scores = sum_axis(r.beta_r, 1);
  return r;
}

void init_weak_head(ParameterStore& store, Rng& rng, const std::string& prefix, std::size_t width,
                    std::size_t classes) {
  add_linear(store, rng, prefix + "_cls", width, classes);
  add_linear(store, rng, prefix + "_det", width, classes);
}

RegionScores weak_scores(Tape& tape, ParameterStore& store, const std::string& prefix, Var hidden) {
  return weak_scores_from_logits(transpose(apply_linear(tape, store, prefix + "_cls", hidden)),
                                 transpose(apply_linear(tape, store, prefix + "_det", hidden)));
}

Var weak_bce_loss(Var video_scores, const Tensor& labels) {
  require_binary(labels, "weak_bce_loss");
  if (labels.size() != video_scores.size()) throw std::invalid_argument("weak_bce_loss: label count mismatch");
  return bce_probs(video_scores, labels);
}

void init_audio_classifier(ParameterStore& store, Rng& rng, std::size_t width, std::size_t classes) {
  add_linear(store, rng, "head.aud_cls", width, classes);
}

AudioClassification audio_classify(Tape& tape, ParameterStore& store, Var h_a, const Tensor& labels) {
  require_binary(labels, "audio_classify");
  AudioClassification r;
  Var pooled = mean_axis(h_a, 0, true);
  r.logits = reshape(apply_linear(tape, store, "head.aud_cls", pooled), {labels.size()});
  r.loss = bce_with_logits(r.logits, labels);
  return r;
}

void init_attention_gate(ParameterStore& store, Rng& rng, const std::string& name, std::size_t gate_channels,
                         std::size_t skip_channels, std::size_t inner) {
  add_conv(store, rng, name + ".wg", gate_channels, inner, 1);
  add_conv(store, rng, name + ".wx", skip_channels, inner, 1);
  add_conv(store, rng, name + ".psi", inner, 1, 1);
}

Var gate_coefficients(Tape& tape, ParameterStore& store, const std::string& name, Var g, Var x) {
  if (g.value().rank() != 3 || x.value().rank() != 3 || g.dim(1) != x.dim(1) || g.dim(2) != x.dim(2))
    throw std::invalid_argument("attention_gate: gate " + shape_str(g.shape()) + " and skip " + shape_str(x.shape()) +
                                " are not spatially aligned");
  Var a = relu(add(apply_conv(tape, store, name + ".wg", g), apply_conv(tape, store, name + ".wx", x)));
  return sigmoid(apply_conv(tape, store, name + ".psi", a));
}

Var attention_gate(Tape& tape, ParameterStore& store, const std::string& name, Var g, Var x) {
  Var alpha = gate_coefficients(tape, store, name, g, x);
  return mul(x, broadcast_to(alpha, x.shape()));
}

std::size_t unet_channels(const ModelConfig& cfg, std::size_t level) { return cfg.unet_base << level; }

void init_unet(ParameterStore& store, Rng& rng, const ModelConfig& cfg) {
  const std::size_t L = cfg.unet_levels;
  std::size_t in = 1;
  for (std::size_t i = 0; i < L; ++i) {
    add_conv(store, rng, "unet.enc" + std::to_string(i), in, unet_channels(cfg, i), 4);
    in = unet_channels(cfg, i);
  }
  const std::size_t cb = unet_channels(cfg, L - 1), width = cb + cfg.fusion_dim;
  add_linear(store, rng, "unet.fuse_in", cfg.sos_width(), cfg.fusion_dim);
  init_projection_set(store, rng, "unet.fuse_attn", width, width);
  add_linear(store, rng, "unet.fuse_out", width, cb);
  for (std::size_t i = L; i-- > 0;) {
    const std::size_t dec_in = i == L - 1 ? cb : 2 * unet_channels(cfg, i);
    const std::size_t dec_out = i == 0 ? cfg.unet_base : unet_channels(cfg, i - 1);
    add_conv_transpose(store, rng, "unet.dec" + std::to_string(i), dec_in, dec_out, 4);
    if (i > 0) {
      const std::size_t c = unet_channels(cfg, i - 1);
      init_attention_gate(store, rng, "unet.gate" + std::to_string(i - 1), c, c, std::max<std::size_t>(1, c / 2));
    }
  }
  add_conv(store, rng, "unet.out", cfg.unet_base, cfg.mask_channels, 1);
}

std::vector<Var> unet_encode(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var spec) {
  const std::size_t div = std::size_t{1} << cfg.unet_levels;
  if (spec.value().rank() != 3 || spec.dim(0) != 1 || spec.dim(1) % div != 0 || spec.dim(2) % div != 0 ||
      spec.dim(1) < div || spec.dim(2) < div)
    throw std::invalid_argument("attention U-Net: grid " + shape_str(spec.shape()) + " is not divisible by 2^" +
                                std::to_string(cfg.unet_levels));
  std::vector<Var> skips;
  Var x = spec;
  for (std::size_t i = 0; i < cfg.unet_levels; ++i) {
    x = relu(apply_conv(tape, store, "unet.enc" + std::to_string(i), x, {2, 1}));
    skips.push_back(x);
  }
  return skips;
}

Var unet_decode(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const std::vector<Var>& skips,
                Var sos_fused) {
  const std::size_t L = cfg.unet_levels;
  if (skips.size() != L) throw std::invalid_argument("unet_decode: expected one skip per level");
  if (sos_fused.shape() != Shape{cfg.sos_width()})
    throw std::invalid_argument("unet_decode: sos_fused has shape " + shape_str(sos_fused.shape()));
  Var b = skips.back();
  const std::size_t cb = b.dim(0), h = b.dim(1), w = b.dim(2), cells = h * w;
  Var cells_x = transpose(reshape(b, {cb, cells}));
  Var cond = apply_linear(tape, store, "unet.fuse_in", reshape(sos_fused, {1, cfg.sos_width()}));
  Var joint = concat({cells_x, broadcast_to(cond, {cells, cfg.fusion_dim})}, 1);
  Var attended = multi_head_attention(joint, joint, bind_projection_set(tape, store, "unet.fuse_attn"),
                                      cfg.fusion_heads);
  Var fused = add(cells_x, apply_linear(tape, store, "unet.fuse_out", attended));
  Var d = reshape(transpose(fused), {cb, h, w});
  for (std::size_t i = L; i-- > 0;) {
    d = relu(apply_conv_transpose(tape, store, "unet.dec" + std::to_string(i), d, 2, 1));
    if (i > 0) d = concat({d, attention_gate(tape, store, "unet.gate" + std::to_string(i - 1), d, skips[i - 1])}, 0);
  }
  return apply_conv(tape, store, "unet.out", d);
}

Var attention_unet_forward(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var spec, Var sos_fused) {
  return unet_decode(tape, store, cfg, unet_encode(tape, store, cfg, spec), sos_fused);
}

Var mask_bce_loss(Var logits, const Tensor& gt) {
  if (logits.shape() != gt.shape)
    throw std::invalid_argument("mask_bce_loss: logits " + shape_str(logits.shape()) + " vs masks " +
                                shape_str(gt.shape));
  require_binary(gt, "mask_bce_loss");
  return bce_with_logits(logits, gt);
}

}  // namespace tribert::heads
