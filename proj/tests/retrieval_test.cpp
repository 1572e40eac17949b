#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "tribert/retrieval/retrieval.hpp"

using namespace tribert;
using namespace tribert::retrieval;

namespace {

struct Fixture {
  synth::Dataset ds;
  model::Model model;
  std::vector<model::SceneInputs> inputs;
};

Fixture& small_fixture() {
  static Fixture f = [] {
    synth::SynthConfig sc;
    sc.num_scenes = 10;
    sc.seed = 11;
    Fixture x{synth::generate_dataset(sc), model::create_model(ModelConfig::desk(), sc.profile, synth::pose_frames(sc), 3),
              {}};
    x.inputs = model::dataset_inputs(x.ds, x.model.cfg);
    return x;
  }();
  return f;
}

std::vector<std::string> ids_of(const synth::Dataset& ds) {
  std::vector<std::string> ids;
  for (const auto& r : ds.scenes) ids.push_back(r.id);
  return ids;
}

EmbeddingStore random_store(std::size_t scenes, std::uint64_t seed, Source s = Source::post_transformer) {
  Rng rng(seed);
  EmbeddingStore st;
  const std::size_t widths[3] = {12, 10, 8};
  for (std::size_t i = 0; i < scenes; ++i)
    for (std::size_t m = 0; m < 3; ++m) {
      std::vector<double> v(widths[m]);
      for (auto& x : v) x = rng.normal();
      st.add({"s" + std::to_string(i), static_cast<Modality>(m), s, v});
    }
  return st;
}

std::vector<std::string> numbered(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("s" + std::to_string(i));
  return ids;
}

}  // namespace

TEST_CASE("embedding extraction covers every scene and modality, deterministically") {
  auto& f = small_fixture();
  const auto store = extract_embeddings(f.model, f.ds, f.inputs, {Source::post_transformer, Source::pre_transformer});
  CHECK(store.size() == f.ds.scenes.size() * 3 * 2);
  const auto& cfg = f.model.cfg;
  CHECK(store.width(Modality::vision, Source::post_transformer) == 4 * cfg.d_v);
  CHECK(store.width(Modality::pose, Source::pre_transformer) == 4 * cfg.d_v);
  CHECK(store.width(Modality::audio, Source::post_transformer) == 4 * cfg.d_a);

  const auto again = extract_embeddings(f.model, f.ds, f.inputs, {Source::post_transformer, Source::pre_transformer});
  CHECK(again.records() == store.records());

  double linf = 0;
  for (const auto& id : ids_of(f.ds))
    for (Modality m : {Modality::vision, Modality::pose, Modality::audio}) {
      const auto& a = store.at(id, m, Source::post_transformer).vector;
      const auto& b = store.at(id, m, Source::pre_transformer).vector;
      for (std::size_t i = 0; i < a.size(); ++i) linf = std::max(linf, std::abs(a[i] - b[i]));
    }
  CHECK(linf > 0);

  // Pre-transformer audio is the clip token repeated.
  const auto& pre_a = store.at(f.ds.scenes[0].id, Modality::audio, Source::pre_transformer).vector;
  for (std::size_t i = 0; i < cfg.d_a; ++i) CHECK(pre_a[i] == pre_a[3 * cfg.d_a + i]);
}

TEST_CASE("embedding store file round trip and corruption") {
  const auto store = random_store(5, 1);
  const auto path = std::filesystem::temp_directory_path() / "tribert_store_test.bin";
  write_store(path, store);
  CHECK(read_store(path).records() == store.records());

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 16);
  CHECK_THROWS(read_store(path));
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "NOTASTORE";
  }
  CHECK_THROWS(read_store(path));
  std::filesystem::remove(path);
}

TEST_CASE("store rejects width mismatches, duplicates and unknown keys") {
  EmbeddingStore st;
  st.add({"a", Modality::vision, Source::post_transformer, {1, 2, 3}});
  CHECK_THROWS_AS(st.add({"b", Modality::vision, Source::post_transformer, {1, 2}}), std::invalid_argument);
  CHECK_THROWS_AS(st.add({"a", Modality::vision, Source::post_transformer, {4, 5, 6}}), std::invalid_argument);
  st.add({"b", Modality::vision, Source::pre_transformer, {1, 2}});
  CHECK_THROWS_AS(st.at("c", Modality::vision, Source::post_transformer), std::out_of_range);
  CHECK_THROWS(parse_source("mid_transformer"));
  CHECK_THROWS(variant_by_name("a2x"));
}

TEST_CASE("standardization uses the fit scenes only") {
  const auto store = random_store(30, 2);
  const auto ids = numbered(30);
  const std::vector<std::string> fit(ids.begin(), ids.begin() + 20);
  const auto z = standardized(store, fit);
  const Tensor x = z.matrix(fit, Modality::pose, Source::post_transformer);
  for (std::size_t j = 0; j < x.dim(1); ++j) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 20; ++i) m += x.at(i, j) / 20;
    for (std::size_t i = 0; i < 20; ++i) v += (x.at(i, j) - m) * (x.at(i, j) - m) / 19;
    CHECK(std::abs(m) < 1e-12);
    CHECK(std::abs(v - 1) < 1e-12);
  }
  // Held-out rows are transformed with the same affine map.
  const double raw0 = store.at("s25", Modality::pose, Source::post_transformer).vector[0];
  const double raw1 = store.at("s26", Modality::pose, Source::post_transformer).vector[0];
  const double z0 = z.at("s25", Modality::pose, Source::post_transformer).vector[0];
  const double z1 = z.at("s26", Modality::pose, Source::post_transformer).vector[0];
  const double raw_fit = store.at("s0", Modality::pose, Source::post_transformer).vector[0];
  const double z_fit = z.at("s0", Modality::pose, Source::post_transformer).vector[0];
  CHECK((z0 - z_fit) / (raw0 - raw_fit) == doctest::Approx((z1 - z_fit) / (raw1 - raw_fit)).epsilon(1e-12));
}

TEST_CASE("zero query with zero input biases scores MLP(0) for any result") {
  Scorer sc = init_scorer(variant_by_name("a2v"), Source::post_transformer, {8}, 12, 6, 4);
  sc.params.at("ret.q.b").value.data.assign(6, 0.0);
  Rng rng(5);
  for (const char* n : {"ret.mlp0.b", "ret.mlp1.b", "ret.out.b"})
    for (auto& v : sc.params.at(n).value.data) v = rng.uniform(-0.5, 0.5);

  // Hand-rolled MLP(0).
  auto& p = sc.params;
  std::vector<double> h(6);
  for (std::size_t j = 0; j < 6; ++j) h[j] = std::max(0.0, p.at("ret.mlp0.b").value[j]);
  std::vector<double> h2(6);
  for (std::size_t j = 0; j < 6; ++j) {
    double s = p.at("ret.mlp1.b").value[j];
    for (std::size_t i = 0; i < 6; ++i) s += h[i] * p.at("ret.mlp1.w").value.at(i, j);
    h2[j] = std::max(0.0, s);
  }
  double expect = p.at("ret.out.b").value[0];
  for (std::size_t i = 0; i < 6; ++i) expect += h2[i] * p.at("ret.out.w").value.at(i, 0);

  const std::vector<double> zero(8, 0.0);
  for (int trial = 0; trial < 4; ++trial) {
    std::vector<double> r(12);
    for (auto& x : r) x = rng.normal();
    CHECK(fuse_and_score(sc, {zero}, r) == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("scores are not symmetric in query and result") {
  Scorer sc = init_scorer(variant_by_name("v2a"), Source::post_transformer, {6}, 6, 8, 9);
  Rng rng(3);
  std::vector<double> a(6), b(6);
  for (auto& x : a) x = rng.normal();
  for (auto& x : b) x = rng.normal();
  CHECK(fuse_and_score(sc, {a}, b) != fuse_and_score(sc, {b}, a));
}

TEST_CASE("scorer rejects inputs that do not match its configuration") {
  Scorer sc = init_scorer(variant_by_name("va2p"), Source::post_transformer, {6, 4}, 5, 8, 1);
  CHECK_THROWS_AS(fuse_and_score(sc, {std::vector<double>(6)}, std::vector<double>(5)), std::invalid_argument);
  CHECK_THROWS_AS(fuse_and_score(sc, {std::vector<double>(6), std::vector<double>(3)}, std::vector<double>(5)),
                  std::invalid_argument);
  CHECK_THROWS_AS(fuse_and_score(sc, {std::vector<double>(6), std::vector<double>(4)}, std::vector<double>(7)),
                  std::invalid_argument);
  CHECK_THROWS(init_scorer(variant_by_name("a2p"), Source::post_transformer, {3, 3}, 5, 8, 1));
}

TEST_CASE("choice sampling: one positive, distinct distractors, reproducible") {
  std::vector<std::size_t> q(40);
  std::iota(q.begin(), q.end(), 0);
  const auto a = sample_choices(q, 40, 4, 7, 3);
  const auto b = sample_choices(q, 40, 4, 7, 3);
  CHECK(a.candidates == b.candidates);
  CHECK(a.truth == b.truth);
  CHECK(sample_choices(q, 40, 4, 7, 4).candidates != a.candidates);
  std::vector<std::size_t> truth_pos(4, 0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto& c = a.candidates[i];
    REQUIRE(c.size() == 4);
    CHECK(c[a.truth[i]] == q[i]);
    CHECK(std::count(c.begin(), c.end(), q[i]) == 1);
    auto sorted = c;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    ++truth_pos[a.truth[i]];
  }
  for (auto n : truth_pos) CHECK(n > 0);
  CHECK_THROWS_AS(sample_choices(q, 40, 1, 7, 0), std::invalid_argument);
  NwayOptions bad;
  bad.n = 1;
  CHECK_THROWS_AS(nway_train(random_store(10, 1), numbered(10), variant_by_name("a2v"), Source::post_transformer, bad),
                  std::invalid_argument);
}

TEST_CASE("untrained scorer starts near log n") {
  const auto store = standardized(random_store(64, 3), numbered(64));
  for (const auto& v : variants()) {
    NwayOptions o;
    o.epochs = 1;
    o.lr = 0;
    double first = -1;
    nway_train(store, numbered(64), v, Source::post_transformer, o, [&](std::size_t step, double loss) {
      if (step == 0) first = loss;
    });
    CHECK(std::abs(first - std::log(static_cast<double>(v.n))) <= 0.2);
  }
}

TEST_CASE("a single batch can be memorized in 200 steps") {
  const auto store = standardized(random_store(64, 4), numbered(64));
  const auto& v = variant_by_name("va2p");
  NwayOptions o;
  o.epochs = 200;  // one batch per epoch
  o.lr = 1e-3;
  Scorer sc = nway_train(store, numbered(64), v, Source::post_transformer, o);
  std::vector<std::size_t> q(64);
  std::iota(q.begin(), q.end(), 0);
  const ChoiceBatch last = sample_choices(q, 64, v.n, o.seed, 199);
  std::vector<Tensor> qb{store.matrix(numbered(64), Modality::vision, Source::post_transformer),
                         store.matrix(numbered(64), Modality::audio, Source::post_transformer)};
  const Tensor rb = store.matrix(numbered(64), Modality::pose, Source::post_transformer);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < 64; ++i) {
    std::size_t best = 0;
    double best_s = -1e300;
    for (std::size_t c = 0; c < v.n; ++c) {
      const std::size_t r = last.candidates[i][c];
      std::vector<double> vq(qb[0].data.begin() + 12 * q[i], qb[0].data.begin() + 12 * (q[i] + 1));
      std::vector<double> aq(qb[1].data.begin() + 8 * q[i], qb[1].data.begin() + 8 * (q[i] + 1));
      std::vector<double> rr(rb.data.begin() + 10 * r, rb.data.begin() + 10 * (r + 1));
      const double s = fuse_and_score(sc, {vq, aq}, rr);
      if (s > best_s) best_s = s, best = c;
    }
    correct += best == last.truth[i];
  }
  CHECK(correct == 64);
}

TEST_CASE("top-k with an oracle scorer on duplicated vectors is perfect") {
  Rng rng(8);
  const std::size_t P = 30, D = 16;
  std::vector<std::vector<double>> x(P, std::vector<double>(D));
  for (auto& v : x) {
    double n = 0;
    for (auto& e : v) e = rng.normal(), n += e * e;
    for (auto& e : v) e /= std::sqrt(n);
  }
  Tensor s({P, P});
  for (std::size_t q = 0; q < P; ++q)
    for (std::size_t p = 0; p < P; ++p) s.at(q, p) = std::inner_product(x[q].begin(), x[q].end(), x[p].begin(), 0.0);
  const auto r = topk_accuracy(s, {1, 5, 10});
  CHECK(r[0].accuracy == 1.0);
  CHECK(r[0].random_baseline == doctest::Approx(1.0 / 30));
  CHECK(r[2].random_baseline == doctest::Approx(10.0 / 30));
}

TEST_CASE("random scorer hits k/pool within 3 sigma") {
  const std::size_t P = 50, seeds = 40;
  const std::vector<std::size_t> ks{1, 5, 10};
  std::vector<double> hits(3, 0);
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    Rng rng(1000 + seed);
    Tensor s({P, P});
    for (auto& v : s.data) v = rng.uniform();
    const auto r = topk_accuracy(s, ks);
    for (std::size_t i = 0; i < 3; ++i) hits[i] += r[i].accuracy * P;
  }
  const double trials = static_cast<double>(P * seeds);
  for (std::size_t i = 0; i < 3; ++i) {
    const double p = static_cast<double>(ks[i]) / P;
    const double sigma = std::sqrt(trials * p * (1 - p));
    CHECK(std::abs(hits[i] - trials * p) <= 3 * sigma);
  }
}

TEST_CASE("top-k is monotone in k and invariant to query order") {
  Rng rng(12);
  const std::size_t P = 20;
  Tensor s({P, P});
  for (auto& v : s.data) v = rng.normal();
  for (std::size_t i = 0; i < P; ++i) s.at(i, i) += 1.5;
  const auto r = topk_accuracy(s, {1, 5, 10});
  CHECK(r[0].accuracy <= r[1].accuracy);
  CHECK(r[1].accuracy <= r[2].accuracy);

  std::vector<std::size_t> perm(P);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = P - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
  Tensor t({P, P});
  for (std::size_t q = 0; q < P; ++q)
    for (std::size_t p = 0; p < P; ++p) t.at(q, p) = s.at(perm[q], perm[p]);
  const auto r2 = topk_accuracy(t, {1, 5, 10});
  for (std::size_t i = 0; i < 3; ++i) CHECK(r2[i].accuracy == r[i].accuracy);

  CHECK_THROWS_AS(topk_accuracy(s, {21}), std::invalid_argument);
  CHECK_THROWS_AS(topk_accuracy(s, {0}), std::invalid_argument);
}

TEST_CASE("score matrix is identical across job counts and matches single scores") {
  const auto store = random_store(12, 6);
  Scorer sc = init_scorer(variant_by_name("va2p"), Source::post_transformer, {12, 8}, 10, 8, 2);
  const auto ids = numbered(12);
  const Tensor a = score_matrix(sc, store, ids, 1);
  const Tensor b = score_matrix(sc, store, ids, 3);
  CHECK(a.data == b.data);
  const double single = fuse_and_score(sc,
                                       {store.at("s2", Modality::vision, Source::post_transformer).vector,
                                        store.at("s2", Modality::audio, Source::post_transformer).vector},
                                       store.at("s7", Modality::pose, Source::post_transformer).vector);
  CHECK(a.at(2, 7) == doctest::Approx(single).epsilon(1e-12));
  CHECK_THROWS_AS(evaluate_topk(sc, store, ids, {1, 13}), std::invalid_argument);
}

TEST_CASE("results CSV layout") {
  const auto path = std::filesystem::temp_directory_path() / "tribert_retrieval.csv";
  write_results_csv(path, {{"a2v", {{1, 0.5, 0.02}, {5, 0.75, 0.1}}}});
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "variant,k,accuracy,random_baseline");
  CHECK(row == "a2v,1,0.5,0.02");
  std::filesystem::remove(path);
}
