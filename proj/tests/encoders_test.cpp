#include <doctest.h>

#include <chrono>
#include <cmath>

#include "tribert/encoders/encoders.hpp"
#include "tribert/synthdata/skeleton.hpp"
#include "tribert/synthdata/synthdata.hpp"

using namespace tribert;
using namespace tribert::encoders;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.backbone_width = 4;
  cfg.d_v = 16;
  cfg.d_a = 8;
  cfg.heads = 4;
  cfg.gcn_hidden = 6;
  cfg.audio_width = 2;
  cfg.spec_rows = cfg.spec_cols = 32;
  cfg.frame_size = 32;
  cfg.unet_levels = 3;
  return cfg;
}

ParameterStore visual_store(const ModelConfig& cfg, std::uint64_t seed = 1) {
  ParameterStore store;
  Rng rng(seed);
  init_visual(store, rng, cfg);
  return store;
}

// Dense D^-1/2 (A + I) D^-1/2 built from an adjacency matrix, independent of the CSR path.
std::vector<double> dense_normalized(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& links) {
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
  for (auto [i, j] : links) a[i * n + j] = a[j * n + i] = 1.0;
  std::vector<double> d(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i] += a[i * n + j];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] /= std::sqrt(d[i] * d[j]);
  return a;
}

}  // namespace

TEST_CASE("constant colour frames give spatially constant features") {
  const ModelConfig cfg = small_config();
  ParameterStore store = visual_store(cfg);
  Tensor frames({2, 3, cfg.frame_size, cfg.frame_size});
  const double colour[2][3] = {{0.3, -0.2, 0.1}, {-0.4, 0.4, 0.0}};
  const std::size_t hw = cfg.frame_size * cfg.frame_size;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < hw; ++i) frames[(n * 3 + c) * hw + i] = colour[n][c];
  Tape tape(false);
  Var v = visual_backbone(tape, store, cfg, tape.constant(frames));
  REQUIRE(v.shape() == Shape{2, cfg.d_v, cfg.frame_size / 8, cfg.frame_size / 8});
  const std::size_t cells = v.dim(2) * v.dim(3);
  for (std::size_t plane = 0; plane < 2 * cfg.d_v; ++plane)
    for (std::size_t i = 1; i < cells; ++i) CHECK(v.value()[plane * cells + i] == v.value()[plane * cells]);

  Var s_e = expansive_attention(tape, store, cfg, v, RunContext{});
  for (double x : s_e.value().data) CHECK(x == doctest::Approx(1.0 / static_cast<double>(cells)).epsilon(1e-12));
}

TEST_CASE("attention maps: expansive sums to one, discriminative lies in (0, 1)") {
  const ModelConfig cfg = small_config();
  ParameterStore store = visual_store(cfg, 4);
  Rng rng(9);
  Tape tape(false);
  Tensor frames = rng.uniform_tensor({3, 3, cfg.frame_size, cfg.frame_size}, -0.5, 0.5);
  VisualOutput out = encode_frames(tape, store, cfg, frames, RunContext{});
  const std::size_t cells = out.s_e.dim(2) * out.s_e.dim(3);
  for (std::size_t plane = 0; plane < 3 * cfg.classes; ++plane) {
    double s = 0;
    for (std::size_t i = 0; i < cells; ++i) {
      const double e = out.s_e.value()[plane * cells + i];
      CHECK(e > 0.0);
      s += e;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  for (double d : out.s_d.value().data) CHECK((d > 0.0 && d < 1.0));
  CHECK(out.regions.tokens.shape() == Shape{6, cfg.d_v});

  SUBCASE("evaluation mode is deterministic, training dropout depends on the step") {
    Tape again(false);
    VisualOutput repeat = encode_frames(again, store, cfg, frames, RunContext{});
    CHECK(repeat.regions.tokens.value() == out.regions.tokens.value());
    Tape t1(false), t2(false), t3(false);
    const auto a = encode_frames(t1, store, cfg, frames, {true, 5, 0, 0}).s_e.value();
    const auto b = encode_frames(t2, store, cfg, frames, {true, 5, 0, 0}).s_e.value();
    const auto c = encode_frames(t3, store, cfg, frames, {true, 5, 1, 0}).s_e.value();
    CHECK(a == b);
    CHECK_FALSE(a == c);
  }
}

TEST_CASE("region pooling against a hand-computed weighted mean") {
  const std::size_t N = 2, C = 3, D = 2, h = 2, w = 2;
  Tensor fused({N, C, h, w}), ve({N, D, h, w});
  Rng rng(12);
  for (auto& x : fused.data) x = rng.uniform(0.05, 1.0);
  for (auto& x : ve.data) x = rng.uniform(-1.0, 1.0);
  // Frame 0: class 2 dominant, class 0 second. Frame 1: class 1 then class 2.
  for (std::size_t i = 0; i < 4; ++i) {
    fused[(0 * C + 2) * 4 + i] += 3.0;
    fused[(0 * C + 0) * 4 + i] += 1.5;
    fused[(1 * C + 1) * 4 + i] += 3.0;
    fused[(1 * C + 2) * 4 + i] += 1.5;
  }
  Tape tape(false);
  RegionPool pool = pool_regions(tape.constant(fused), tape.constant(ve));
  CHECK(pool.top2[0] == std::array<std::size_t, 2>{2, 0});
  CHECK(pool.top2[1] == std::array<std::size_t, 2>{1, 2});
  REQUIRE(pool.tokens.shape() == Shape{4, D});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t c = pool.top2[n][k];
      for (std::size_t d = 0; d < D; ++d) {
        double num = 0, den = 0;
        for (std::size_t i = 0; i < 4; ++i) {
          num += fused[(n * C + c) * 4 + i] * ve[(n * D + d) * 4 + i];
          den += fused[(n * C + c) * 4 + i];
        }
        CHECK(pool.tokens.value().at(2 * n + k, d) == doctest::Approx(num / den).epsilon(1e-13));
      }
    }

  SUBCASE("a one-hot map selects that V_e column") {
    Tensor onehot({1, 2, 2, 2});
    onehot[0 * 4 + 3] = 1.0;
    onehot[1 * 4 + 1] = 0.5;
    Tensor v({1, D, 2, 2});
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
    Tape t(false);
    RegionPool p = pool_regions(t.constant(onehot), t.constant(v));
    CHECK(p.tokens.value().at(0, 0) == 3.0);
    CHECK(p.tokens.value().at(0, 1) == 7.0);
    CHECK(p.tokens.value().at(1, 0) == 1.0);
    CHECK(p.tokens.value().at(1, 1) == 5.0);
  }
  SUBCASE("mismatched extents are rejected") {
    Tape t(false);
    CHECK_THROWS_AS(pool_regions(t.constant(Tensor({1, 3, 2, 2})), t.constant(Tensor({1, 2, 4, 4}))),
                    std::invalid_argument);
  }
}

TEST_CASE("space-time adjacency matches a dense construction and is symmetric") {
  const std::vector<synth::Edge> edges{{0, 1}, {1, 2}, {1, 3}};
  const std::size_t J = 4, T = 3, n = J * T;
  const SparseMatrix a = space_time_adjacency(edges, J, T);
  std::vector<std::pair<std::size_t, std::size_t>> links;
  for (std::size_t t = 0; t < T; ++t) {
    for (auto [i, j] : edges) links.push_back({t * J + i, t * J + j});
    for (std::size_t j = 0; j < J && t + 1 < T; ++j) links.push_back({t * J + j, (t + 1) * J + j});
  }
  const auto expected = dense_normalized(n, links);
  const auto got = a.to_dense();
  for (std::size_t i = 0; i < n * n; ++i) CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-15));
  CHECK_NOTHROW(check_symmetric(a));

  SUBCASE("full skeleton graph is symmetric") {
    CHECK_NOTHROW(check_symmetric(space_time_adjacency(synth::skeleton_edges(), synth::kJoints, 45)));
  }
  SUBCASE("asymmetric matrices are rejected") {
    SparseMatrix bad = a;
    bad.values[1] += 1e-9;
    CHECK_THROWS_AS(check_symmetric(bad), std::invalid_argument);
  }
  SUBCASE("edges outside the joint range are rejected") {
    CHECK_THROWS_AS(space_time_adjacency({{0, 9}}, 4, 2), std::invalid_argument);
  }
}

TEST_CASE("pose features keep missing joints at zero") {
  Tensor pose({4, 2, 3});
  for (std::size_t t = 0; t < 4; ++t) {
    pose.at(t, 0, 0) = 10.0 + static_cast<double>(t);
    pose.at(t, 0, 1) = 20.0;
    pose.at(t, 0, 2) = 0.9;
  }
  const Tensor f = pose_features(pose, 64);
  REQUIRE(f.shape == Shape{8, kPoseFeatures});
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t k = 0; k < kPoseFeatures; ++k) CHECK(f.at(t * 2 + 1, k) == 0.0);
    CHECK(f.at(t * 2, 0) == doctest::Approx((10.0 + t) / 64.0));
    CHECK(f.at(t * 2, 3) == doctest::Approx((static_cast<double>(t) - 1.5) / 4.0));
    CHECK(f.at(t * 2, 4) == 0.0);
  }
}

TEST_CASE("identity graph and identity weights reduce to pooled inputs") {
  ModelConfig cfg = small_config();
  cfg.gcn_hidden = kPoseFeatures;
  cfg.gcn_layers = 2;
  cfg.d_v = 8;
  ParameterStore store;
  Rng rng(2);
  init_pose(store, rng, cfg);
  for (std::size_t l = 0; l < cfg.gcn_layers; ++l) {
    Tensor& w = store.at("pose.gcn" + std::to_string(l) + ".w").value;
    w = Tensor(w.shape);
    for (std::size_t i = 0; i < kPoseFeatures; ++i) w.at(i, i) = 1.0;
  }
  const std::size_t T = 7, J = 3;
  SparseMatrix eye;
  eye.rows = eye.cols = T * J;
  for (std::size_t i = 0; i < T * J; ++i) {
    eye.row_ptr.push_back(i);
    eye.col_idx.push_back(i);
    eye.values.push_back(1.0);
  }
  eye.row_ptr.push_back(T * J);
  Tensor x = rng.uniform_tensor({T * J, kPoseFeatures}, 0.0, 1.0);
  Tape tape(false);
  Var tokens = pose_graph_encode(tape, store, cfg, tape.constant(x), eye, T, J);
  REQUIRE(tokens.shape() == Shape{6, cfg.d_v});
  const Tensor& w = store.at("pose.out.w").value;
  const Tensor& b = store.at("pose.out.b").value;
  const std::size_t bounds[4] = {0, 2, 4, 7};
  for (std::size_t s = 0; s < 3; ++s) {
    std::vector<double> m(kPoseFeatures, 0.0);
    const double rows = static_cast<double>((bounds[s + 1] - bounds[s]) * J);
    for (std::size_t r = bounds[s] * J; r < bounds[s + 1] * J; ++r)
      for (std::size_t k = 0; k < kPoseFeatures; ++k) m[k] += x.at(r, k) / rows;
    for (std::size_t o = 0; o < cfg.d_v; ++o) {
      double e = b[o];
      for (std::size_t k = 0; k < kPoseFeatures; ++k) e += m[k] * w.at(k, o);
      CHECK(tokens.value().at(2 * s, o) == doctest::Approx(e).epsilon(1e-12));
      CHECK(tokens.value().at(2 * s + 1, o) == 0.0);
    }
  }
  CHECK_THROWS_AS(pose_graph_encode(tape, store, cfg, tape.constant(x), eye, T, J + 1), std::invalid_argument);
}

TEST_CASE("audio encoder shapes and input validation") {
  const ModelConfig cfg = small_config();
  ParameterStore store;
  Rng rng(5);
  init_audio(store, rng, cfg);
  Tape tape(false);
  Var y = audio_encode(tape, store, cfg, tape.constant(rng.uniform_tensor({1, 32, 32}, 0.0, 1.0)));
  CHECK(y.shape() == Shape{cfg.d_a});
  CHECK(y.value().all_finite());
  CHECK_THROWS_AS(audio_encode(tape, store, cfg, tape.constant(Tensor({1, 32, 16}))), std::invalid_argument);
}

TEST_CASE("desk-size visual forward and backward fit the time budget") {
  const ModelConfig cfg = ModelConfig::desk();
  ParameterStore store = visual_store(cfg);
  Rng rng(1);
  Tensor frames = rng.uniform_tensor({3, 3, cfg.frame_size, cfg.frame_size}, -0.5, 0.5);
  const auto t0 = std::chrono::steady_clock::now();
  Tape tape;
  VisualOutput out = encode_frames(tape, store, cfg, frames, {true, 1, 0, 0});
  tape.backward(sum(out.regions.tokens));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("visual forward+backward: " << secs << " s");
  CHECK(secs < 2.0);
}

TEST_CASE("spatial normalization of a single dominant location") {
  // With ratio r against cells-1 unit cells the peak holds r / (r + cells - 1).
  for (std::size_t side : {2, 4, 8})
    for (double r : {10.0, 100.0, 1000.0}) {
      const std::size_t cells = side * side;
      Tensor lambda({1, 1, side, side});
      for (auto& v : lambda.data) v = 1.0;
      lambda[cells / 3] = r;
      Tape tape(false);
      const double peak = spatial_normalize(tape.constant(lambda)).value()[cells / 3];
      CHECK(peak == doctest::Approx(r / (r + static_cast<double>(cells) - 1.0)).epsilon(1e-14));
    }
  // 90% of the mass on an 8x8 grid needs r >= 9 * 63.
  Tensor lambda({1, 1, 8, 8});
  for (auto& v : lambda.data) v = 1.0;
  lambda[0] = 9.0 * 63.0;
  Tape tape(false);
  CHECK(spatial_normalize(tape.constant(lambda)).value()[0] >= 0.9 - 1e-15);
  Tensor flat({2, 3, 4, 4});
  for (auto& v : flat.data) v = 2.5;
  for (double v : spatial_normalize(tape.constant(flat)).value().data) CHECK(v == doctest::Approx(1.0 / 16.0));
}

TEST_CASE("discriminative map with zero weights and the fused plane bound") {
  const ModelConfig cfg = small_config();
  ParameterStore store = visual_store(cfg, 3);
  Rng rng(13);
  const Tensor frames = rng.uniform_tensor({3, 3, cfg.frame_size, cfg.frame_size}, -0.5, 0.5);
  {
    Tape tape(false);
    const VisualOutput out = encode_frames(tape, store, cfg, frames, RunContext{});
    const std::size_t cells = out.fused.dim(2) * out.fused.dim(3);
    for (std::size_t plane = 0; plane < 3 * cfg.classes; ++plane) {
      double s = 0;
      for (std::size_t i = 0; i < cells; ++i) {
        CHECK(out.fused.value()[plane * cells + i] >= 0.0);
        s += out.fused.value()[plane * cells + i];
      }
      CHECK(s <= 1.0);
    }
  }
  for (auto& [name, p] : store)
    if (name.find("disc") != std::string::npos) p.value = Tensor(p.value.shape);
  Tape tape(false);
  const VisualOutput out = encode_frames(tape, store, cfg, frames, RunContext{});
  for (double d : out.s_d.value().data) CHECK(d == 0.5);
}

TEST_CASE("region pooling: uniform maps average V_e, top-2 matches a sort") {
  Rng rng(31);
  const std::size_t N = 3, C = 5, D = 4, h = 3, w = 3;
  Tensor ve = rng.uniform_tensor({N, D, h, w}, -1.0, 1.0);
  Tensor uniform({N, C, h, w});
  for (auto& v : uniform.data) v = 0.2;
  Tape tape(false);
  const RegionPool flat = pool_regions(tape.constant(uniform), tape.constant(ve));
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d) {
      double mean = 0;
      for (std::size_t i = 0; i < h * w; ++i) mean += ve[(n * D + d) * h * w + i] / static_cast<double>(h * w);
      CHECK(flat.tokens.value().at(2 * n, d) == doctest::Approx(mean).epsilon(1e-13));
      CHECK(flat.tokens.value().at(2 * n + 1, d) == doctest::Approx(mean).epsilon(1e-13));
    }

  for (int trial = 0; trial < 50; ++trial) {
    Tensor fused = rng.uniform_tensor({N, C, h, w}, 0.0, 1.0);
    const RegionPool p = pool_regions(tape.constant(fused), tape.constant(ve));
    for (std::size_t n = 0; n < N; ++n) {
      std::vector<std::pair<double, std::size_t>> scores;
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0;
        for (std::size_t i = 0; i < h * w; ++i) s += fused[(n * C + c) * h * w + i];
        scores.push_back({s / static_cast<double>(h * w), c});
      }
      std::sort(scores.begin(), scores.end(), [](auto a, auto b) { return a.first > b.first; });
      CHECK(p.top2[n][0] == scores[0].second);
      CHECK(p.top2[n][1] == scores[1].second);
      CHECK(p.frame_scores.at(n, scores[0].second) == doctest::Approx(scores[0].first).epsilon(1e-13));
    }
  }
  CHECK_THROWS_AS(pool_regions(tape.constant(Tensor({1, 1, 2, 2})), tape.constant(Tensor({1, 2, 2, 2}))),
                  std::invalid_argument);
}

TEST_CASE("pose encoder perturbations") {
  synth::SynthConfig sc;
  sc.num_scenes = 5;
  sc.seed = 17;
  const synth::Dataset ds = synth::generate_dataset(sc);
  const ModelConfig cfg = ModelConfig::desk();
  ParameterStore store;
  Rng rng(6);
  init_pose(store, rng, cfg);
  const std::size_t T = synth::pose_frames(ds.config);
  const SparseMatrix a_hat = space_time_adjacency(synth::skeleton_edges(), synth::kJoints, T);
  auto encode = [&](const Tensor& pose) {
    Tape tape(false);
    return pose_graph_encode(tape, store, cfg, tape.constant(pose_features(pose, cfg.frame_size)), a_hat, T,
                             synth::kJoints)
        .value();
  };
  auto rel = [](const Tensor& a, const Tensor& b) {
    double d = 0, n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]), n += b[i] * b[i];
    return std::sqrt(d / n);
  };
  for (const auto& scene : ds.scenes) {
    const Tensor& pose = scene.scene.pose;
    const Tensor base = encode(pose);
    CHECK(base.all_finite());

    Tensor moved = pose;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < synth::kJoints; ++j) {
        moved.at(t, j, 0) += 5.0;
        moved.at(t, j, 1) += 5.0;
      }
    CHECK(rel(encode(moved), base) > 1e-6);

    double worst = 0;
    for (std::size_t j = 0; j < synth::kJoints; ++j) {
      Tensor dropped = pose;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < 3; ++c) dropped.at(t, j, c) = 0.0;
      worst = std::max(worst, rel(encode(dropped), base));
    }
    MESSAGE("largest relative change from one missing joint: " << worst);
    CHECK(worst < 2.0 / 68.0);
  }
}

TEST_CASE("audio token: bias pathway on silence, bounded on noise") {
  const ModelConfig cfg = ModelConfig::desk();
  ParameterStore store;
  Rng rng(8);
  init_audio(store, rng, cfg);
  Tape tape(false);
  const Tensor silent({1, cfg.spec_rows, cfg.spec_cols});
  const Tensor noise = rng.uniform_tensor({1, cfg.spec_rows, cfg.spec_cols}, 0.0, 3.0);
  const Tensor token = audio_encode(tape, store, cfg, tape.constant(silent)).value();
  CHECK(token == audio_encode(tape, store, cfg, tape.constant(silent)).value());
  const Tensor noisy = audio_encode(tape, store, cfg, tape.constant(noise)).value();
  CHECK(noisy.all_finite());
  double norm = 0;
  for (double v : noisy.data) norm += v * v;
  CHECK(std::sqrt(norm) <= 1e3);
  CHECK_FALSE(noisy == token);

  // With the first convolution's kernel zeroed every input reduces to the bias pathway.
  Tensor& w = store.at("aud.conv0.w").value;
  w = Tensor(w.shape);
  Tape fresh(false);
  CHECK(audio_encode(fresh, store, cfg, fresh.constant(noise)).value() == token);
}
