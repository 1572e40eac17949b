#include "tribert/retrieval/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace tribert::retrieval {
namespace {

static_assert(std::endian::native == std::endian::little, "embedding store IO assumes a little-endian host");

constexpr char kMagic[8] = {'T', 'R', 'I', 'B', 'E', 'M', 'B', '1'};

std::string key(const std::string& id, Modality m, Source s) { return id + '|' + to_string(m) + '|' + to_string(s); }

std::string block_key(Modality m, Source s) { return to_string(m) + '|' + to_string(s); }

// Row 0 followed by the means of rows (1,2), (3,4), (5,6).
std::vector<double> frame_rows(const Tensor& h) {
  const std::size_t D = h.dim(1);
  std::vector<double> out(4 * D);
  for (std::size_t d = 0; d < D; ++d) out[d] = h.at(0, d);
  for (std::size_t f = 0; f < 3; ++f)
    for (std::size_t d = 0; d < D; ++d) out[(1 + f) * D + d] = 0.5 * (h.at(1 + 2 * f, d) + h.at(2 + 2 * f, d));
  return out;
}

std::vector<double> leading_rows(const Tensor& h, std::size_t rows) {
  return {h.data.begin(), h.data.begin() + static_cast<std::ptrdiff_t>(rows * h.dim(1))};
}

Var mlp_tail(Tape& tape, ParameterStore& p, Var x) {
  x = relu(apply_linear(tape, p, "ret.mlp0", x));
  x = relu(apply_linear(tape, p, "ret.mlp1", x));
  return apply_linear(tape, p, "ret.out", x);
}

Var query_repr(Tape& tape, Scorer& sc, const std::vector<Var>& queries) {
  if (queries.size() != sc.query_widths.size())
    throw std::invalid_argument("scorer " + sc.variant.name + ": expected " + std::to_string(sc.query_widths.size()) +
                                " query blocks, got " + std::to_string(queries.size()));
  for (std::size_t i = 0; i < queries.size(); ++i)
    if (queries[i].value().rank() != 2 || queries[i].dim(1) != sc.query_widths[i])
      throw std::invalid_argument("scorer " + sc.variant.name + ": query block " + std::to_string(i) + " has shape " +
                                  shape_str(queries[i].shape()) + ", expected width " +
                                  std::to_string(sc.query_widths[i]));
  if (queries.size() == 1) return apply_linear(tape, sc.params, "ret.q", queries[0]);
  Var v = apply_linear(tape, sc.params, "ret.in_v", queries[0]);
  Var a = apply_linear(tape, sc.params, "ret.in_a", queries[1]);
  Var f = relu(apply_linear(tape, sc.params, "ret.fuse0", concat({v, a}, 1)));
  f = apply_linear(tape, sc.params, "ret.fuse1", f);
  return apply_linear(tape, sc.params, "ret.q", f);
}

std::vector<Tensor> query_blocks(const EmbeddingStore& store, const std::vector<std::string>& ids, const Variant& v,
                                 Source s) {
  std::vector<Tensor> out;
  for (Modality m : v.query) out.push_back(store.matrix(ids, m, s));
  return out;
}

Tensor gather_rows(const Tensor& block, const std::vector<std::size_t>& rows) {
  const std::size_t w = block.dim(1);
  Tensor t({rows.size(), w});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(block.data.begin() + static_cast<std::ptrdiff_t>(rows[i] * w), w,
                t.data.begin() + static_cast<std::ptrdiff_t>(i * w));
  return t;
}

}  // namespace

std::string to_string(Modality m) {
  switch (m) {
    case Modality::vision: return "vision";
    case Modality::pose: return "pose";
    case Modality::audio: return "audio";
  }
  return "?";
}

std::string to_string(Source s) { return s == Source::post_transformer ? "post_transformer" : "pre_transformer"; }

Modality parse_modality(const std::string& s) {
  if (s == "vision") return Modality::vision;
  if (s == "pose") return Modality::pose;
  if (s == "audio") return Modality::audio;
  throw std::invalid_argument("unknown modality '" + s + "'");
}

Source parse_source(const std::string& s) {
  if (s == "post_transformer") return Source::post_transformer;
  if (s == "pre_transformer") return Source::pre_transformer;
  throw std::invalid_argument("unknown embedding source '" + s + "' (post_transformer | pre_transformer)");
}

void EmbeddingStore::add(EmbeddingRecord r) {
  if (r.scene_id.empty() || r.scene_id.find_first_of(" \t\n|") != std::string::npos)
    throw std::invalid_argument("embedding store: bad scene id '" + r.scene_id + "'");
  const std::string k = key(r.scene_id, r.modality, r.source);
  if (index_.count(k)) throw std::invalid_argument("embedding store: duplicate record " + k);
  const auto [w, fresh] = widths_.emplace(block_key(r.modality, r.source), r.vector.size());
  if (!fresh && w->second != r.vector.size())
    throw std::invalid_argument("embedding store: width " + std::to_string(r.vector.size()) + " for " +
                                w->first + " differs from " + std::to_string(w->second));
  index_[k] = records_.size();
  records_.push_back(std::move(r));
}

bool EmbeddingStore::contains(const std::string& scene_id, Modality m, Source s) const {
  return index_.count(key(scene_id, m, s)) != 0;
}

const EmbeddingRecord& EmbeddingStore::at(const std::string& scene_id, Modality m, Source s) const {
  auto it = index_.find(key(scene_id, m, s));
  if (it == index_.end()) throw std::out_of_range("embedding store: no record " + key(scene_id, m, s));
  return records_[it->second];
}

std::size_t EmbeddingStore::width(Modality m, Source s) const {
  if (auto it = widths_.find(block_key(m, s)); it != widths_.end()) return it->second;
  throw std::out_of_range("embedding store: no " + block_key(m, s) + " records");
}

Tensor EmbeddingStore::matrix(const std::vector<std::string>& scene_ids, Modality m, Source s) const {
  const std::size_t w = width(m, s);
  Tensor t({scene_ids.size(), w});
  for (std::size_t i = 0; i < scene_ids.size(); ++i) {
    const auto& v = at(scene_ids[i], m, s).vector;
    std::copy(v.begin(), v.end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * w));
  }
  return t;
}

EmbeddingStore extract_embeddings(model::Model& m, const synth::Dataset& ds,
                                  const std::vector<model::SceneInputs>& inputs, const std::vector<Source>& sources) {
  if (inputs.size() != ds.scenes.size())
    throw std::invalid_argument("extract_embeddings: " + std::to_string(inputs.size()) + " inputs for " +
                                std::to_string(ds.scenes.size()) + " scenes");
  using transformer::kAudio;
  using transformer::kPose;
  using transformer::kVision;
  EmbeddingStore store;
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    Tape tape(false);
    Tensor spec = dsp::network_input(ds.scenes[i].scene.audio, m.profile);
    spec.shape = {1, spec.dim(0), spec.dim(1)};
    Var token = encoders::audio_encode(tape, m.params, m.cfg, tape.constant(spec));
    model::SceneForward f = model::forward_scene(tape, m, inputs[i], token, RunContext{});
    for (Source s : sources) {
      const bool post = s == Source::post_transformer;
      const auto& streams = post ? f.hidden.h : f.tokens.streams;
      const std::string& id = ds.scenes[i].id;
      store.add({id, Modality::vision, s, frame_rows(streams[kVision].value())});
      store.add({id, Modality::pose, s, frame_rows(streams[kPose].value())});
      store.add({id, Modality::audio, s, leading_rows(streams[kAudio].value(), 4)});
    }
  }
  return store;
}

EmbeddingStore standardized(const EmbeddingStore& store, const std::vector<std::string>& fit_ids) {
  if (fit_ids.size() < 2) throw std::invalid_argument("standardized: need at least 2 fit scenes");
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> stats;
  for (const auto& r : store.records()) {
    const std::string bk = block_key(r.modality, r.source);
    if (stats.count(bk)) continue;
    const Tensor x = store.matrix(fit_ids, r.modality, r.source);
    const std::size_t n = x.dim(0), w = x.dim(1);
    std::vector<double> mean(w, 0.0), sd(w, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) mean[j] += x.at(i, j) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) sd[j] += (x.at(i, j) - mean[j]) * (x.at(i, j) - mean[j]);
    for (auto& v : sd) {
      v = std::sqrt(v / static_cast<double>(n - 1));
      if (!(v > 1e-12)) v = 1.0;  // constant features stay centred at zero
    }
    stats[bk] = {std::move(mean), std::move(sd)};
  }
  EmbeddingStore out;
  for (auto r : store.records()) {
    const auto& [mean, sd] = stats.at(block_key(r.modality, r.source));
    for (std::size_t j = 0; j < r.vector.size(); ++j) r.vector[j] = (r.vector[j] - mean[j]) / sd[j];
    out.add(std::move(r));
  }
  return out;
}

void write_store(const std::filesystem::path& path, const EmbeddingStore& store) {
  std::ostringstream manifest;
  std::uint64_t offset = 0;
  for (const auto& r : store.records()) {
    manifest << r.scene_id << ' ' << to_string(r.modality) << ' ' << to_string(r.source) << ' ' << offset << ' '
             << r.vector.size() << '\n';
    offset += r.vector.size() * sizeof(double);
  }
  const std::string m = manifest.str();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("embedding store: cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = m.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const auto& r : store.records())
    out.write(reinterpret_cast<const char*>(r.vector.data()),
              static_cast<std::streamsize>(r.vector.size() * sizeof(double)));
  if (!out) throw std::runtime_error("embedding store: write failed for " + path.string());
}

EmbeddingStore read_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("embedding store: cannot open " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("embedding store: bad magic in " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1ULL << 32)) throw std::runtime_error("embedding store: corrupt manifest length");
  std::string m(len, '\0');
  in.read(m.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("embedding store: truncated manifest");
  const std::streamoff payload = in.tellg();
  in.seekg(0, std::ios::end);
  const auto payload_bytes = static_cast<std::uint64_t>(in.tellg() - payload);

  EmbeddingStore store;
  std::istringstream lines(m);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::string id, mod, src;
    std::uint64_t off = 0, width = 0;
    if (!(ls >> id >> mod >> src >> off >> width))
      throw std::runtime_error("embedding store: bad manifest line '" + line + "'");
    if (off + width * sizeof(double) > payload_bytes)
      throw std::runtime_error("embedding store: record " + id + " runs past the payload");
    EmbeddingRecord r{id, parse_modality(mod), parse_source(src), std::vector<double>(width)};
    in.seekg(payload + static_cast<std::streamoff>(off));
    in.read(reinterpret_cast<char*>(r.vector.data()), static_cast<std::streamsize>(width * sizeof(double)));
    if (!in) throw std::runtime_error("embedding store: short read for " + id);
    store.add(std::move(r));
  }
  return store;
}

std::vector<Variant> variants() {
  using M = Modality;
  return {{"a2v", {M::audio}, M::vision, 3},
          {"v2a", {M::vision}, M::audio, 3},
          {"a2p", {M::audio}, M::pose, 3},
          {"p2a", {M::pose}, M::audio, 3},
          {"va2p", {M::vision, M::audio}, M::pose, 4}};
}

const Variant& variant_by_name(const std::string& name) {
  static const std::vector<Variant> all = variants();
  for (const auto& v : all)
    if (v.name == name) return v;
  throw std::invalid_argument("unknown retrieval variant '" + name + "' (a2v, v2a, a2p, p2a, va2p)");
}

Scorer init_scorer(const Variant& v, Source s, const std::vector<std::size_t>& query_widths, std::size_t result_width,
                   std::size_t d_r, std::uint64_t seed) {
  if (query_widths.size() != v.query.size())
    throw std::invalid_argument("init_scorer: variant " + v.name + " takes " + std::to_string(v.query.size()) +
                                " query modalities");
  if (query_widths.size() > 2) throw std::invalid_argument("init_scorer: at most two query modalities");
  Scorer sc{v, s, query_widths, result_width, d_r, {}};
  Rng rng(seed);
  if (query_widths.size() == 2) {
    add_linear(sc.params, rng, "ret.in_v", query_widths[0], d_r);
    add_linear(sc.params, rng, "ret.in_a", query_widths[1], d_r);
    add_linear(sc.params, rng, "ret.fuse0", 2 * d_r, d_r);
    add_linear(sc.params, rng, "ret.fuse1", d_r, d_r);
    add_linear(sc.params, rng, "ret.q", d_r, d_r);
  } else {
    add_linear(sc.params, rng, "ret.q", query_widths[0], d_r);
  }
  add_linear(sc.params, rng, "ret.r", result_width, d_r);
  add_linear(sc.params, rng, "ret.mlp0", d_r, d_r);
  add_linear(sc.params, rng, "ret.mlp1", d_r, d_r);
  add_linear(sc.params, rng, "ret.out", d_r, 1);
  return sc;
}

Var score_batch(Tape& tape, Scorer& sc, const std::vector<Var>& queries, Var results) {
  Var q = query_repr(tape, sc, queries);
  if (results.value().rank() != 2 || results.dim(1) != sc.result_width || results.dim(0) != q.dim(0))
    throw std::invalid_argument("scorer " + sc.variant.name + ": results " + shape_str(results.shape()) +
                                " do not match width " + std::to_string(sc.result_width) + " and batch " +
                                std::to_string(q.dim(0)));
  Var r = apply_linear(tape, sc.params, "ret.r", results);
  return mlp_tail(tape, sc.params, mul(q, r));
}

double fuse_and_score(Scorer& sc, const std::vector<std::vector<double>>& query, const std::vector<double>& result) {
  Tape tape(false);
  std::vector<Var> qs;
  for (const auto& q : query) qs.push_back(tape.constant(Tensor({1, q.size()}, q)));
  return score_batch(tape, sc, qs, tape.constant(Tensor({1, result.size()}, result))).value()[0];
}

ChoiceBatch sample_choices(const std::vector<std::size_t>& queries, std::size_t pool, std::size_t n,
                           std::uint64_t seed, std::uint64_t step) {
  if (n < 2) throw std::invalid_argument("n-way training needs n >= 2, got " + std::to_string(n));
  if (pool < n) throw std::invalid_argument("pool of " + std::to_string(pool) + " is smaller than n = " +
                                            std::to_string(n));
  Rng rng(hash_combine(seed, step));
  ChoiceBatch b;
  for (std::size_t q : queries) {
    if (q >= pool) throw std::out_of_range("sample_choices: query index outside the pool");
    std::vector<std::size_t> c{q};
    while (c.size() < n) {
      const std::size_t d = rng.index(pool);
      if (std::find(c.begin(), c.end(), d) == c.end()) c.push_back(d);
    }
    for (std::size_t i = n - 1; i > 0; --i) std::swap(c[i], c[rng.index(i + 1)]);
    b.truth.push_back(static_cast<std::size_t>(std::find(c.begin(), c.end(), q) - c.begin()));
    b.query.push_back(q);
    b.candidates.push_back(std::move(c));
  }
  return b;
}

Var nway_loss(Tape& tape, Scorer& sc, const std::vector<Tensor>& query_blocks, const Tensor& result_block,
              const ChoiceBatch& batch) {
  const std::size_t B = batch.query.size();
  if (B == 0) throw std::invalid_argument("nway_loss: empty batch");
  const std::size_t n = batch.candidates.front().size();
  std::vector<std::size_t> q_rows, r_rows;
  for (std::size_t i = 0; i < B; ++i) {
    if (batch.candidates[i].size() != n) throw std::invalid_argument("nway_loss: ragged candidate lists");
    for (std::size_t c : batch.candidates[i]) {
      q_rows.push_back(batch.query[i]);
      r_rows.push_back(c);
    }
  }
  std::vector<Var> qs;
  for (const auto& blk : query_blocks) qs.push_back(tape.constant(gather_rows(blk, q_rows)));
  Var logits = score_batch(tape, sc, qs, tape.constant(gather_rows(result_block, r_rows)));
  return softmax_cross_entropy(reshape(logits, {B, n}), batch.truth);
}

Scorer nway_train(const EmbeddingStore& store, const std::vector<std::string>& scene_ids, const Variant& v, Source s,
                  const NwayOptions& opts, const NwayCallback& cb) {
  const std::size_t n = opts.n ? opts.n : v.n;
  if (n < 2) throw std::invalid_argument("n-way training needs n >= 2, got " + std::to_string(n));
  if (opts.batch == 0) throw std::invalid_argument("nway_train: batch must be positive");
  const auto qb = query_blocks(store, scene_ids, v, s);
  const Tensor rb = store.matrix(scene_ids, v.result, s);
  std::vector<std::size_t> widths;
  for (const auto& b : qb) widths.push_back(b.dim(1));
  Scorer sc = init_scorer(v, s, widths, rb.dim(1), opts.d_r, hash_combine(opts.seed, site_id(v.name)));
  AdamState adam;
  std::vector<std::size_t> order(scene_ids.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle(hash_combine(opts.seed, 0x5f));
  std::size_t step = 0;
  for (std::size_t e = 0; e < opts.epochs; ++e) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle.index(i + 1)]);
    for (std::size_t start = 0; start < order.size(); start += opts.batch) {
      const std::vector<std::size_t> qs(order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + opts.batch)));
      const ChoiceBatch batch = sample_choices(qs, scene_ids.size(), n, opts.seed, step);
      sc.params.zero_grad();
      Tape tape;
      Var loss = nway_loss(tape, sc, qb, rb, batch);
      tape.backward(loss);
      adam_step(sc.params, adam, opts.lr);
      if (cb) cb(step, loss.value()[0]);
      ++step;
    }
  }
  return sc;
}

std::vector<TopK> topk_accuracy(const Tensor& scores, const std::vector<std::size_t>& ks) {
  if (scores.rank() != 2 || scores.dim(0) != scores.dim(1))
    throw std::invalid_argument("topk_accuracy: expected a square score matrix, got " + shape_str(scores.shape));
  const std::size_t Q = scores.dim(0), P = scores.dim(1);
  std::vector<std::size_t> rank(Q, 0);
  for (std::size_t q = 0; q < Q; ++q)
    for (std::size_t p = 0; p < P; ++p)
      if (p != q && scores.at(q, p) >= scores.at(q, q)) ++rank[q];
  std::vector<TopK> out;
  for (std::size_t k : ks) {
    if (k == 0 || k > P)
      throw std::invalid_argument("top-" + std::to_string(k) + " requested for a pool of " + std::to_string(P));
    const auto hits = std::count_if(rank.begin(), rank.end(), [k](std::size_t r) { return r < k; });
    out.push_back({k, static_cast<double>(hits) / static_cast<double>(Q), static_cast<double>(k) / static_cast<double>(P)});
  }
  return out;
}

Tensor score_matrix(Scorer& sc, const EmbeddingStore& store, const std::vector<std::string>& scene_ids,
                    std::size_t jobs) {
  const auto qb = query_blocks(store, scene_ids, sc.variant, sc.source);
  const Tensor rb = store.matrix(scene_ids, sc.variant.result, sc.source);
  const std::size_t P = scene_ids.size();
  Tensor scores({P, P});
  std::vector<std::size_t> all(P);
  std::iota(all.begin(), all.end(), 0);
  auto row = [&](std::size_t q) {
    Tape tape(false);
    std::vector<Var> qs;
    for (const auto& blk : qb) qs.push_back(tape.constant(gather_rows(blk, std::vector<std::size_t>(P, q))));
    const Tensor s = score_batch(tape, sc, qs, tape.constant(rb)).value();
    std::copy(s.data.begin(), s.data.end(), scores.data.begin() + static_cast<std::ptrdiff_t>(q * P));
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, P));
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j)
    pool.emplace_back([&, j] {
      for (std::size_t q = j; q < P; q += jobs) row(q);
    });
  for (auto& t : pool) t.join();
  return scores;
}

std::vector<TopK> evaluate_topk(Scorer& sc, const EmbeddingStore& store, const std::vector<std::string>& scene_ids,
                                const std::vector<std::size_t>& ks, std::size_t jobs) {
  for (std::size_t k : ks)
    if (k > scene_ids.size())
      throw std::invalid_argument("top-" + std::to_string(k) + " requested for a pool of " +
                                  std::to_string(scene_ids.size()));
  return topk_accuracy(score_matrix(sc, store, scene_ids, jobs), ks);
}

void write_results_csv(const std::filesystem::path& path, const std::vector<VariantResult>& results) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.precision(10);
  out << "variant,k,accuracy,random_baseline\n";
  for (const auto& r : results)
    for (const auto& t : r.topk) out << r.variant << ',' << t.k << ',' << t.accuracy << ',' << t.random_baseline << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace tribert::retrieval
