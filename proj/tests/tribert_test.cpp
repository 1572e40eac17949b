#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "tribert/transformer/tribert.hpp"

using namespace tribert;
using namespace tribert::transformer;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_v = 16;
  cfg.d_a = 8;
  cfg.heads = 4;
  cfg.layers = 2;
  return cfg;
}

struct Fixture {
  ModelConfig cfg;
  ParameterStore store;
  Tensor vision, pose, audio;

  explicit Fixture(ModelConfig c, std::uint64_t seed = 1) : cfg(c) {
    Rng rng(seed);
    init_tribert(store, rng, cfg);
    vision = rng.uniform_tensor({6, cfg.d_v}, -1, 1);
    pose = rng.uniform_tensor({6, cfg.d_v}, -1, 1);
    audio = rng.uniform_tensor({cfg.d_a}, -1, 1);
  }

  TokenSet tokens(Tape& tape, const Tensor& v, const Tensor& p, const Tensor& a) {
    return assemble_tokens(tape, store, cfg, tape.constant(v), tape.constant(p), tape.constant(a));
  }

  TriHiddenStates run(Tape& tape, const Tensor& v, const Tensor& p, const Tensor& a, RunContext ctx = {}) {
    return tribert_forward(tape, store, cfg, embed_and_mask(tape, store, cfg, tokens(tape, v, p, a), ctx), ctx);
  }
};

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& order) {
  Tensor out(t.shape);
  const std::size_t w = t.dim(1);
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = t.at(order[i], j);
  return out;
}

}  // namespace

TEST_CASE("token assembly and output shapes") {
  Fixture f(small_config());
  Tape tape(false);
  TokenSet t = f.tokens(tape, f.vision, f.pose, f.audio);
  CHECK(t.streams[kVision].shape() == Shape{7, 16});
  CHECK(t.streams[kAudio].shape() == Shape{7, 8});
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 8; ++j) CHECK(t.streams[kAudio].value().at(i, j) == f.audio[j]);
  TriHiddenStates h = f.run(tape, f.vision, f.pose, f.audio);
  CHECK(h.h[kVision].shape() == Shape{7, 16});
  CHECK(h.h[kPose].shape() == Shape{7, 16});
  CHECK(h.h[kAudio].shape() == Shape{7, 8});
  REQUIRE(h.sos_fused.shape() == Shape{40});
  for (std::size_t j = 0; j < 16; ++j) {
    CHECK(h.sos_fused.value()[j] == h.h[kVision].value().at(0, j));
    CHECK(h.sos_fused.value()[16 + j] == h.h[kPose].value().at(0, j));
  }
  for (std::size_t j = 0; j < 8; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < 7; ++i) m += h.h[kAudio].value().at(i, j) / 7.0;
    CHECK(h.sos_fused.value()[32 + j] == doctest::Approx(m).epsilon(1e-14));
  }
  CHECK_THROWS_AS(assemble_tokens(tape, f.store, f.cfg, tape.constant(Tensor({5, 16})), tape.constant(f.pose),
                                  tape.constant(f.audio)),
                  std::invalid_argument);
}

TEST_CASE("evaluation mode ignores the seed") {
  Fixture f(small_config());
  Tape a(false), b(false);
  const Tensor x = f.run(a, f.vision, f.pose, f.audio, {false, 1, 0, 0}).sos_fused.value();
  const Tensor y = f.run(b, f.vision, f.pose, f.audio, {false, 77, 5, 3}).sos_fused.value();
  CHECK(x == y);
}

TEST_CASE("full masking leaves only the embeddings") {
  ModelConfig cfg = small_config();
  cfg.mask_prob = 1.0;
  Fixture f(cfg);
  Tape tape(false);
  TokenSet e = embed_and_mask(tape, f.store, cfg, f.tokens(tape, f.vision, f.pose, f.audio), {true, 3, 0, 0});
  for (std::size_t s : {kVision, kPose}) {
    const std::string n = kStreamNames[s];
    const Tensor& pos = f.store.at("tb.pos_" + n).value;
    const Tensor& mod = f.store.at("tb.mod_" + n).value;
    const Tensor& sos = f.store.at("tb.sos_" + n).value;
    CHECK_FALSE(e.masked[s][0]);
    for (std::size_t i = 0; i < 7; ++i) {
      if (i > 0) CHECK(e.masked[s][i]);
      for (std::size_t j = 0; j < 16; ++j) {
        const double content = i == 0 ? sos[j] : 0.0;
        CHECK(e.streams[s].value().at(i, j) == doctest::Approx(content + pos.at(i, j) + mod[j]).epsilon(1e-15));
      }
    }
  }
  for (bool m : e.masked[kAudio]) CHECK_FALSE(m);
}

TEST_CASE("masking rate over 10k seeded draws") {
  std::size_t hits = 0, trials = 0;
  for (std::uint64_t step = 0; step < 10000; ++step)
    for (std::size_t s : {kVision, kPose}) {
      const auto flags = mask_flags(0.15, {true, 2024, step, 0}, s, 7);
      CHECK_FALSE(flags[0]);
      for (std::size_t i = 1; i < 7; ++i) hits += flags[i];
      trials += 6;
    }
  const double rate = static_cast<double>(hits) / static_cast<double>(trials);
  MESSAGE("mask rate " << rate);
  CHECK(std::abs(rate - 0.15) <= 0.01);
  for (bool m : mask_flags(0.15, {true, 2024, 1, 0}, kAudio, 7)) CHECK_FALSE(m);
  for (bool m : mask_flags(0.15, {false, 2024, 1, 0}, kVision, 7)) CHECK_FALSE(m);
}

TEST_CASE("zero value projections reduce each stream to its residual path") {
  ModelConfig cfg = small_config();
  cfg.layers = 1;
  Fixture f(cfg);
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string p = std::string("tb.l0.") + kStreamNames[s] + ".attn";
    for (const char* n : {".wv", ".bv"}) {
      Tensor& t = f.store.at(p + n).value;
      t = Tensor(t.shape);
    }
  }
  Rng rng(4);
  Tape tape(false);
  std::array<Var, 3> h{tape.constant(rng.uniform_tensor({7, 16}, -1, 1)),
                       tape.constant(rng.uniform_tensor({7, 16}, -1, 1)),
                       tape.constant(rng.uniform_tensor({7, 8}, -1, 1))};
  const auto out = tri_co_attention_layer(tape, f.store, cfg, 0, h, {});
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string p = std::string("tb.l0.") + kStreamNames[s];
    Var x = apply_layer_norm(tape, f.store, p + ".ln1", h[s]);
    Var ffn = apply_linear(tape, f.store, p + ".ffn2", relu(apply_linear(tape, f.store, p + ".ffn1", x)));
    Var expected = apply_layer_norm(tape, f.store, p + ".ln2", add(x, ffn));
    for (std::size_t i = 0; i < expected.size(); ++i)
      CHECK(out[s].value()[i] == doctest::Approx(expected.value()[i]).epsilon(1e-13));
  }
}

TEST_CASE("without positional embeddings each stream ignores the other streams' token order") {
  ModelConfig cfg = small_config();
  cfg.positional = false;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Fixture f(cfg, seed);
    Rng rng(seed + 100);
    std::vector<std::size_t> order{0, 1, 2, 3, 4, 5};
    for (std::size_t i = 5; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
    Tape a(false), b(false), c(false);
    const auto base = f.run(a, f.vision, f.pose, f.audio);
    const auto pose_perm = f.run(b, f.vision, permute_rows(f.pose, order), f.audio);
    const auto vis_perm = f.run(c, permute_rows(f.vision, order), f.pose, f.audio);
    CHECK(pose_perm.h[kVision].value() == base.h[kVision].value());
    CHECK(pose_perm.h[kAudio].value() == base.h[kAudio].value());
    CHECK(vis_perm.h[kPose].value() == base.h[kPose].value());
    CHECK(vis_perm.h[kAudio].value() == base.h[kAudio].value());
  }
}

TEST_CASE("cross-modal information flows into every stream") {
  Fixture f(small_config());
  SUBCASE("gradient of the vision output reaches the pose inputs") {
    Tape tape;
    Var pose = tape.input(f.pose, true);
    TokenSet t = assemble_tokens(tape, f.store, f.cfg, tape.constant(f.vision), pose, tape.constant(f.audio));
    auto h = tribert_forward(tape, f.store, f.cfg, embed_and_mask(tape, f.store, f.cfg, t, {}), {});
    tape.backward(sum(h.h[kVision]));
    double norm = 0;
    for (double g : tape.grad(pose).data) norm += g * g;
    CHECK(norm > 0.0);
  }
  SUBCASE("perturbing one pose token changes the vision states") {
    Tensor moved = f.pose;
    moved.at(3, 2) += 0.5;
    Tape a(false), b(false);
    const Tensor x = f.run(a, f.vision, f.pose, f.audio).h[kVision].value();
    const Tensor y = f.run(b, f.vision, moved, f.audio).h[kVision].value();
    double d = 0;
    for (std::size_t i = 0; i < x.size(); ++i) d += (x[i] - y[i]) * (x[i] - y[i]);
    CHECK(d > 0.0);
  }
  SUBCASE("no layers returns the embedded inputs") {
    ModelConfig cfg = small_config();
    cfg.layers = 0;
    Tape tape(false);
    TokenSet e = embed_and_mask(tape, f.store, cfg, f.tokens(tape, f.vision, f.pose, f.audio), {});
    auto h = tribert_forward(tape, f.store, cfg, e, {});
    for (std::size_t s = 0; s < 3; ++s) CHECK(h.h[s].value() == e.streams[s].value());
  }
}
