#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "tribert/encoders/encoders.hpp"

namespace tribert::encoders {
namespace {

constexpr std::array<std::size_t, 4> kStrides{2, 2, 2, 1};

std::array<std::size_t, 4> widths(const ModelConfig& cfg) {
  const std::size_t w = cfg.backbone_width;
  return {w, 2 * w, 4 * w, 4 * w};
}

}  // namespace

void init_visual(ParameterStore& store, Rng& rng, const ModelConfig& cfg) {
  init_visual_backbone(store, rng, cfg);
  init_visual_attention(store, rng, cfg);
}

void init_visual_backbone(ParameterStore& store, Rng& rng, const ModelConfig& cfg) {
  std::size_t in = 3;
  const auto w = widths(cfg);
  for (std::size_t i = 0; i < w.size(); ++i) {
    add_conv(store, rng, "vis.conv" + std::to_string(i), in, w[i], 3);
    in = w[i];
  }
  add_conv(store, rng, "vis.feat", in, cfg.d_v, 3);
}

void init_visual_attention(ParameterStore& store, Rng& rng, const ModelConfig& cfg) {
  add_conv(store, rng, "head.vis_expansive", cfg.d_v, cfg.classes, 1);
  add_conv(store, rng, "head.vis_discriminative", cfg.d_v, cfg.classes, 1);
}

Tensor frames_tensor(const std::array<synth::RgbImage, synth::kFramesPerScene>& frames) {
  const std::size_t H = frames[0].height, W = frames[0].width;
  Tensor t({frames.size(), 3, H, W});
  for (std::size_t f = 0; f < frames.size(); ++f) {
    if (frames[f].height != H || frames[f].width != W) throw std::invalid_argument("frames_tensor: extents differ");
    for (std::size_t i = 0; i < 3 * H * W; ++i) t[f * 3 * H * W + i] = frames[f].planes[i] / 255.0 - 0.5;
  }
  return t;
}

Var visual_backbone(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var frames) {
  if (frames.value().rank() != 4 || frames.dim(1) != 3 || frames.dim(2) != cfg.frame_size ||
      frames.dim(3) != cfg.frame_size)
    throw std::invalid_argument("visual_backbone: expected [N, 3, " + std::to_string(cfg.frame_size) + ", " +
                                std::to_string(cfg.frame_size) + "] frames, got " + shape_str(frames.shape()));
  Var x = frames;
  for (std::size_t i = 0; i < kStrides.size(); ++i)
    x = relu(apply_conv(tape, store, "vis.conv" + std::to_string(i), x, {kStrides[i], 1, PadMode::reflect}));
  return apply_conv(tape, store, "vis.feat", x, {1, 1, PadMode::reflect});
}

Var spatial_normalize(Var lambda) {
  const Shape s = lambda.shape();
  Var flat = reshape(lambda, {s[0], s[1], s[2] * s[3]});
  Var total = broadcast_to(sum_axis(flat, 2, true), flat.shape());
  return reshape(div(flat, total), s);
}

Var expansive_attention(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var v_e, const RunContext& ctx) {
  Var x = dropout(v_e, cfg.dropout, ctx.train, dropout_key(ctx, "vis.expansive"));
  return spatial_normalize(softplus(apply_conv(tape, store, "head.vis_expansive", x)));
}

Var discriminative_attention(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var v_e,
                             const RunContext& ctx) {
  Var x = dropout(v_e, cfg.dropout, ctx.train, dropout_key(ctx, "vis.discriminative"));
  return sigmoid(apply_conv(tape, store, "head.vis_discriminative", x));
}

RegionPool pool_regions(Var fused, Var v_e) {
  const Shape fs = fused.shape(), vs = v_e.shape();
  if (fs.size() != 4 || vs.size() != 4 || fs[0] != vs[0] || fs[2] != vs[2] || fs[3] != vs[3])
    throw std::invalid_argument("pool_regions: fused " + shape_str(fs) + " does not match V_e " + shape_str(vs));
  const std::size_t N = fs[0], C = fs[1], D = vs[1], HW = fs[2] * fs[3];
  if (C < 2) throw std::invalid_argument("pool_regions: need at least 2 classes");
  RegionPool out;
  out.frame_scores = Tensor({N, C});
  const Tensor& fv = fused.value();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < HW; ++i) s += fv[(n * C + c) * HW + i];
      out.frame_scores.at(n, c) = s / static_cast<double>(HW);
    }
  Var f3 = reshape(fused, {N, C, HW});
  Var v3 = reshape(v_e, {N, D, HW});
  std::vector<Var> tokens;
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<std::size_t> order(C);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return out.frame_scores.at(n, a) > out.frame_scores.at(n, b); });
    out.top2.push_back({order[0], order[1]});
    Var w = index_select(reshape(slice(f3, 0, n, 1), {C, HW}), 0, {order[0], order[1]});
    w = div(w, broadcast_to(sum_axis(w, 1, true), w.shape()));
    Var feats = transpose(reshape(slice(v3, 0, n, 1), {D, HW}));
    tokens.push_back(matmul(w, feats));
  }
  out.tokens = concat(tokens, 0);
  return out;
}

VisualOutput encode_frames(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const Tensor& frames,
                           const RunContext& ctx) {
  VisualOutput o;
  o.v_e = visual_backbone(tape, store, cfg, tape.constant(frames));
  o.s_e = expansive_attention(tape, store, cfg, o.v_e, ctx);
  o.s_d = discriminative_attention(tape, store, cfg, o.v_e, ctx);
  o.fused = mul(o.s_e, o.s_d);
  o.regions = pool_regions(o.fused, o.v_e);
  return o;
}

}  // namespace tribert::encoders
