#include "tribert/transformer/tribert.hpp"

#include <stdexcept>

namespace tribert::transformer {
namespace {

std::string layer_prefix(std::size_t layer, std::size_t s) {
  return "tb.l" + std::to_string(layer) + "." + kStreamNames[s];
}

std::string context_proj(std::size_t layer, std::size_t s, std::size_t from) {
  return layer_prefix(layer, s) + ".from_" + kStreamNames[from];
}

Tensor embedding_init(Rng& rng, std::size_t rows, std::size_t width) {
  return xavier_uniform(rng, {rows, width}, width, width);
}

}  // namespace

std::size_t stream_width(const ModelConfig& cfg, std::size_t s) { return s == kAudio ? cfg.d_a : cfg.d_v; }

void init_tribert(ParameterStore& store, Rng& rng, const ModelConfig& cfg) {
  const std::size_t L = cfg.seq_len();
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string n = kStreamNames[s];
    const std::size_t w = stream_width(cfg, s);
    if (s != kAudio) store.add("tb.sos_" + n, embedding_init(rng, 1, w));
    store.add("tb.pos_" + n, embedding_init(rng, L, w));
    store.add("tb.mod_" + n, embedding_init(rng, 1, w));
  }
  for (std::size_t l = 0; l < cfg.layers; ++l)
    for (std::size_t s = 0; s < 3; ++s) {
      const std::size_t w = stream_width(cfg, s);
      const std::string p = layer_prefix(l, s);
      for (std::size_t o = 0; o < 3; ++o)
        if (o != s && stream_width(cfg, o) != w) add_linear(store, rng, context_proj(l, s, o), stream_width(cfg, o), w);
      init_projection_set(store, rng, p + ".attn", w, w);
      add_layer_norm(store, p + ".ln1", w);
      add_linear(store, rng, p + ".ffn1", w, w * cfg.ffn_mult);
      add_linear(store, rng, p + ".ffn2", w * cfg.ffn_mult, w);
      add_layer_norm(store, p + ".ln2", w);
    }
}

TokenSet assemble_tokens(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var vision_regions,
                         Var pose_tokens, Var audio_token) {
  const std::size_t R = cfg.region_tokens();
  if (vision_regions.shape() != Shape{R, cfg.d_v} || pose_tokens.shape() != Shape{R, cfg.d_v} ||
      audio_token.shape() != Shape{cfg.d_a})
    throw std::invalid_argument("assemble_tokens: expected vision/pose [" + std::to_string(R) + ", " +
                                std::to_string(cfg.d_v) + "] and audio [" + std::to_string(cfg.d_a) + "], got " +
                                shape_str(vision_regions.shape()) + ", " + shape_str(pose_tokens.shape()) + ", " +
                                shape_str(audio_token.shape()));
  TokenSet t;
  t.streams[kVision] = concat({tape.param(store.at("tb.sos_v")), vision_regions}, 0);
  t.streams[kPose] = concat({tape.param(store.at("tb.sos_p")), pose_tokens}, 0);
  t.streams[kAudio] = broadcast_to(reshape(audio_token, {1, cfg.d_a}), {cfg.seq_len(), cfg.d_a});
  for (auto& m : t.masked) m.assign(cfg.seq_len(), false);
  return t;
}

std::vector<bool> mask_flags(double p, const RunContext& ctx, std::size_t stream, std::size_t count) {
  std::vector<bool> flags(count, false);
  if (!ctx.train || stream == kAudio) return flags;
  const std::uint64_t key = hash_combine(site_id("tb.mask"), hash_combine(stream, ctx.slot));
  for (std::size_t i = 1; i < count; ++i) flags[i] = counter_uniform(ctx.seed, key, ctx.step, i) < p;
  return flags;
}

TokenSet embed_and_mask(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const TokenSet& tokens,
                        const RunContext& ctx) {
  TokenSet out;
  for (std::size_t s = 0; s < 3; ++s) {
    Var x = tokens.streams[s];
    const std::size_t L = x.dim(0), w = x.dim(1);
    if (L != cfg.seq_len() || w != stream_width(cfg, s))
      throw std::invalid_argument("embed_and_mask: stream " + std::string(kStreamNames[s]) + " has shape " +
                                  shape_str(x.shape()));
    out.masked[s] = mask_flags(cfg.mask_prob, ctx, s, L);
    bool any = false;
    for (bool m : out.masked[s]) any = any || m;
    if (any) {
      Tensor keep({L, w}, 1.0);
      for (std::size_t i = 0; i < L; ++i)
        if (out.masked[s][i])
          for (std::size_t j = 0; j < w; ++j) keep.at(i, j) = 0.0;
      x = mul(x, tape.constant(std::move(keep)));
    }
    const std::string n = kStreamNames[s];
    if (cfg.positional) x = add(x, tape.param(store.at("tb.pos_" + n)));
    x = add(x, broadcast_to(tape.param(store.at("tb.mod_" + n)), {L, w}));
    out.streams[s] = x;
  }
  return out;
}

std::array<Var, 3> tri_co_attention_layer(Tape& tape, ParameterStore& store, const ModelConfig& cfg,
                                          std::size_t layer, const std::array<Var, 3>& h, const RunContext& ctx) {
  std::array<Var, 3> out;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t w = stream_width(cfg, s);
    if (h[s].value().rank() != 2 || h[s].dim(1) != w)
      throw std::invalid_argument("tri_co_attention_layer: stream " + std::string(kStreamNames[s]) + " has shape " +
                                  shape_str(h[s].shape()));
    const std::string p = layer_prefix(layer, s);
    std::vector<Var> context;
    for (std::size_t o = 0; o < 3; ++o) {
      if (o == s) continue;
      context.push_back(stream_width(cfg, o) == w ? h[o] : apply_linear(tape, store, context_proj(layer, s, o), h[o]));
    }
    Var attended = multi_head_attention(h[s], concat(context, 0), bind_projection_set(tape, store, p + ".attn"),
                                        cfg.heads);
    attended = dropout(attended, cfg.dropout, ctx.train, dropout_key(ctx, p + ".attn"));
    Var x = apply_layer_norm(tape, store, p + ".ln1", add(h[s], attended));
    Var f = apply_linear(tape, store, p + ".ffn2", relu(apply_linear(tape, store, p + ".ffn1", x)));
    f = dropout(f, cfg.dropout, ctx.train, dropout_key(ctx, p + ".ffn"));
    out[s] = apply_layer_norm(tape, store, p + ".ln2", add(x, f));
  }
  return out;
}

TriHiddenStates tribert_forward(Tape& tape, ParameterStore& store, const ModelConfig& cfg, const TokenSet& embedded,
                                const RunContext& ctx) {
  TriHiddenStates r;
  r.h = embedded.streams;
  for (std::size_t l = 0; l < cfg.layers; ++l) r.h = tri_co_attention_layer(tape, store, cfg, l, r.h, ctx);
  r.sos_fused = concat({reshape(slice(r.h[kVision], 0, 0, 1), {cfg.d_v}), reshape(slice(r.h[kPose], 0, 0, 1), {cfg.d_v}),
                        mean_axis(r.h[kAudio], 0)},
                       0);
  return r;
}

}  // namespace tribert::transformer
