#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "gradient_suite.hpp"
#include "tribert/heads/heads.hpp"

using namespace tribert;
using namespace tribert::heads;

TEST_CASE("every model block passes the finite-difference check") {
  for (const auto& c : testing::block_gradient_cases()) {
    const auto r = c.run();
    INFO(c.name << ": " << r.worst);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.coords_checked > 0);
  }
}

TEST_CASE("weak region scores") {
  Tape tape(false);
  SUBCASE("zero logits give a doubly uniform distribution") {
    auto r = weak_scores_from_logits(tape.constant(Tensor({4, 6})), tape.constant(Tensor({4, 6})));
    for (double b : r.beta_r.value().data) CHECK(b == doctest::Approx(1.0 / 24.0).epsilon(1e-15));
    for (double v : r.video_scores.value().data) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("one dominant region for one class drives that class towards one") {
    Tensor hc({4, 6}), hd({4, 6});
    hc.at(2, 3) = 30.0;
    hd.at(2, 3) = 30.0;
    auto r = weak_scores_from_logits(tape.constant(hc), tape.constant(hd));
    // β_class(2,3) = e^30 / (e^30 + 3), β_det(2,3) = e^30 / (e^30 + 5).
    const double e = std::exp(30.0);
    const double expect = e / (e + 3) * e / (e + 5) + 5 * 0.25 * (1.0 / (e + 5));
    CHECK(r.video_scores.value()[2] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(r.video_scores.value()[2] > 0.999999);
  }
  SUBCASE("random logits keep detection sums at one and scores inside (0, 1)") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
      Tensor hc = rng.uniform_tensor({5, 6}, -20, 20), hd = rng.uniform_tensor({5, 6}, -20, 20);
      Var det = softmax(tape.constant(hd), 1);
      for (std::size_t c = 0; c < 5; ++c) {
        double s = 0;
        for (std::size_t j = 0; j < 6; ++j) s += det.value().at(c, j);
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
      auto r = weak_scores_from_logits(tape.constant(hc), tape.constant(hd));
      for (double v : r.video_scores.value().data) CHECK((v > 0.0 && v < 1.0));
    }
  }
  SUBCASE("fewer than two classes is rejected") {
    CHECK_THROWS_AS(weak_scores_from_logits(tape.constant(Tensor({1, 6})), tape.constant(Tensor({1, 6}))),
                    std::invalid_argument);
  }
}

TEST_CASE("weak BCE loss") {
  Tape tape(false);
  const Tensor labels({4}, {1, 0, 0, 1});
  SUBCASE("scores equal to labels") {
    const double l = weak_bce_loss(tape.constant(Tensor({4}, {0.999, 0.001, 0.001, 0.999})), labels).value()[0];
    CHECK(l < 0.01);
  }
  SUBCASE("confidently wrong scores") {
    const double l = weak_bce_loss(tape.constant(Tensor({4}, {0.0, 1.0, 1.0, 0.0})), labels).value()[0];
    CHECK(l > 4.0);
  }
  SUBCASE("uniform scores against a one-hot label match the closed form") {
    const double l = weak_bce_loss(tape.constant(Tensor({4}, 0.25)), Tensor({4}, {0, 1, 0, 0})).value()[0];
    const double expect = -(std::log(0.25) + 3 * std::log(0.75)) / 4;
    CHECK(l == doctest::Approx(expect).epsilon(1e-14));
    CHECK(l == doctest::Approx(0.5623).epsilon(1e-3));
  }
  SUBCASE("non-binary labels are rejected") {
    CHECK_THROWS_AS(weak_bce_loss(tape.constant(Tensor({4}, 0.5)), Tensor({4}, 0.5)), std::invalid_argument);
  }
}

TEST_CASE("audio classifier") {
  ParameterStore store;
  Rng rng(2);
  init_audio_classifier(store, rng, 6, 4);
  Tape tape(false);
  SUBCASE("zero weights give log 2") {
    store.at("head.aud_cls.w").value = Tensor({6, 4});
    auto r = audio_classify(tape, store, tape.constant(rng.uniform_tensor({7, 6}, -1, 1)), Tensor({4}, {0, 1, 0, 0}));
    CHECK(r.loss.value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("identical rows pool to any one row") {
    Tensor row = rng.uniform_tensor({1, 6}, -1, 1);
    Var rows = broadcast_to(tape.constant(row), {7, 6});
    auto a = audio_classify(tape, store, rows, Tensor({4}));
    auto b = audio_classify(tape, store, tape.constant(row), Tensor({4}));
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(a.logits.value()[c] == doctest::Approx(b.logits.value()[c]).epsilon(1e-14));
  }
}

TEST_CASE("attention gate") {
  ParameterStore store;
  Rng rng(6);
  init_attention_gate(store, rng, "g", 3, 4, 2);
  Tape tape(false);
  const Tensor g = rng.uniform_tensor({3, 5, 5}, -1, 1), x = rng.uniform_tensor({4, 5, 5}, -1, 1);
  SUBCASE("zero parameters halve the skip") {
    for (auto& [n, p] : store) p.value = Tensor(p.value.shape);
    Var y = attention_gate(tape, store, "g", tape.constant(g), tape.constant(x));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value()[i] == x[i] / 2);
  }
  SUBCASE("coefficients stay in (0, 1)") {
    for (int trial = 0; trial < 20; ++trial) {
      Var a = gate_coefficients(tape, store, "g", tape.constant(rng.uniform_tensor({3, 5, 5}, -5, 5)),
                                tape.constant(rng.uniform_tensor({4, 5, 5}, -5, 5)));
      for (double v : a.value().data) CHECK((v > 0.0 && v < 1.0));
    }
  }
  SUBCASE("a large psi bias passes the skip through") {
    store.at("g.psi.b").value[0] = 40.0;
    Var y = attention_gate(tape, store, "g", tape.constant(g), tape.constant(x));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y.value()[i] - x[i]) < 1e-12);
  }
  SUBCASE("misaligned inputs are rejected") {
    CHECK_THROWS_AS(attention_gate(tape, store, "g", tape.constant(Tensor({3, 4, 4})), tape.constant(x)),
                    std::invalid_argument);
  }
}

TEST_CASE("attention U-Net shapes and conditioning") {
  ModelConfig cfg;
  cfg.d_v = 8;
  cfg.d_a = 4;
  cfg.spec_rows = cfg.spec_cols = 32;
  cfg.unet_levels = 4;
  cfg.unet_base = 4;
  cfg.fusion_dim = 8;
  cfg.fusion_heads = 2;
  cfg.mask_channels = 3;
  ParameterStore store;
  Rng rng(11);
  init_unet(store, rng, cfg);
  CHECK(store.contains("unet.gate2.psi.w"));
  CHECK_FALSE(store.contains("unet.gate3.psi.w"));
  Tape tape(false);
  Var spec = tape.constant(rng.uniform_tensor({1, 32, 32}, 0, 2));
  Var a = attention_unet_forward(tape, store, cfg, spec, tape.constant(rng.uniform_tensor({20}, -1, 1)));
  Var b = attention_unet_forward(tape, store, cfg, spec, tape.constant(rng.uniform_tensor({20}, -1, 1)));
  CHECK(a.shape() == Shape{3, 32, 32});
  double linf = 0;
  for (std::size_t i = 0; i < a.size(); ++i) linf = std::max(linf, std::abs(a.value()[i] - b.value()[i]));
  CHECK(linf > 0.0);
  CHECK_THROWS_AS(attention_unet_forward(tape, store, cfg, tape.constant(Tensor({1, 24, 32})),
                                         tape.constant(Tensor({20}))),
                  std::invalid_argument);
}

TEST_CASE("mask BCE loss") {
  Rng rng(3);
  Tensor gt({2, 8, 8});
  for (auto& v : gt.data) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
  Tape tape(false);
  SUBCASE("saturated correct logits") {
    Tensor z(gt.shape);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = gt[i] > 0 ? 50.0 : -50.0;
    CHECK(mask_bce_loss(tape.constant(z), gt).value()[0] < 1e-10);
  }
  SUBCASE("zero logits") {
    CHECK(mask_bce_loss(tape.constant(Tensor(gt.shape)), gt).value()[0] == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("matches a per-pixel sum") {
    Tensor z = rng.uniform_tensor(gt.shape, -4, 4);
    double sum = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-z[i]));
      sum += -(gt[i] * std::log(p) + (1 - gt[i]) * std::log(1 - p));
    }
    CHECK(std::abs(mask_bce_loss(tape.constant(z), gt).value()[0] - sum / z.size()) < 1e-12);
  }
  SUBCASE("non-binary targets and shape mismatches are rejected") {
    Tensor soft = gt;
    soft[0] = 0.5;
    CHECK_THROWS_AS(mask_bce_loss(tape.constant(Tensor(gt.shape)), soft), std::invalid_argument);
    CHECK_THROWS_AS(mask_bce_loss(tape.constant(Tensor({1, 8, 8})), gt), std::invalid_argument);
  }
}
