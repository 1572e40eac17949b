#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tribert/model/model.hpp"

namespace tribert::retrieval {

enum class Modality { vision, pose, audio };
enum class Source { post_transformer, pre_transformer };

std::string to_string(Modality m);
std::string to_string(Source s);
Modality parse_modality(const std::string& s);
Source parse_source(const std::string& s);

struct EmbeddingRecord {
  std::string scene_id;
  Modality modality = Modality::vision;
  Source source = Source::post_transformer;
  std::vector<double> vector;

  bool operator==(const EmbeddingRecord&) const = default;
};

class EmbeddingStore {
 public:
  /// Throws if the width disagrees with earlier records of the same (modality, source)
  /// or the key is already present.
  void add(EmbeddingRecord r);

  const std::vector<EmbeddingRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool contains(const std::string& scene_id, Modality m, Source s) const;
  const EmbeddingRecord& at(const std::string& scene_id, Modality m, Source s) const;
  std::size_t width(Modality m, Source s) const;

  /// Rows of `scene_ids` stacked into [n, width].
  Tensor matrix(const std::vector<std::string>& scene_ids, Modality m, Source s) const;

 private:
  std::vector<EmbeddingRecord> records_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::size_t> widths_;
};

/// One eval-mode forward per scene, hearing the scene's own audio.
/// post: hidden states of token 0 and the three per-frame means (the mean of
/// that frame's two region rows); audio uses rows 0..3. pre: the same rows of
/// the transformer input tokens.
EmbeddingStore extract_embeddings(model::Model& m, const synth::Dataset& ds,
                                  const std::vector<model::SceneInputs>& inputs, const std::vector<Source>& sources);

/// Per-feature z-scoring of every (modality, source) block using statistics of `fit_ids` only.
EmbeddingStore standardized(const EmbeddingStore& store, const std::vector<std::string>& fit_ids);

/// Binary layout: "TRIBEMB1", u64 manifest length, manifest lines
/// `<scene_id> <modality> <source> <byte offset> <width>`, little-endian float64 payload.
void write_store(const std::filesystem::path& path, const EmbeddingStore& store);
EmbeddingStore read_store(const std::filesystem::path& path);

struct Variant {
  std::string name;
  std::vector<Modality> query;  // two entries means a fused query
  Modality result = Modality::vision;
  std::size_t n = 3;            // choices per training item
};
/// a->v, v->a, a->p, p->a, v+a->p.
std::vector<Variant> variants();
const Variant& variant_by_name(const std::string& name);

struct Scorer {
  Variant variant;
  Source source = Source::post_transformer;
  std::vector<std::size_t> query_widths;
  std::size_t result_width = 0;
  std::size_t d_r = 64;
  ParameterStore params;
};

Scorer init_scorer(const Variant& v, Source s, const std::vector<std::size_t>& query_widths, std::size_t result_width,
                   std::size_t d_r, std::uint64_t seed);

/// logit = MLP(linear_q(q) ⊙ linear_r(r)); a fused query first passes
/// linear_v / linear_a and a fusion MLP. queries[i] is [B, query_widths[i]],
/// results [B, result_width]; returns [B, 1].
Var score_batch(Tape& tape, Scorer& sc, const std::vector<Var>& queries, Var results);
double fuse_and_score(Scorer& sc, const std::vector<std::vector<double>>& query, const std::vector<double>& result);

struct ChoiceBatch {
  std::vector<std::size_t> query;                    // pool indices
  std::vector<std::vector<std::size_t>> candidates;  // n pool indices each
  std::vector<std::size_t> truth;                    // position of the positive within candidates
};

/// Distractors uniformly from the other pool entries, positions shuffled.
/// A pure function of (seed, step).
ChoiceBatch sample_choices(const std::vector<std::size_t>& queries, std::size_t pool, std::size_t n,
                           std::uint64_t seed, std::uint64_t step);

struct NwayOptions {
  std::size_t n = 0;  // 0: the variant's default
  std::size_t epochs = 40;
  std::size_t batch = 64;
  double lr = 2e-5;
  std::size_t d_r = 64;
  std::uint64_t seed = 1;
};

/// Mean softmax cross-entropy over the n candidate logits of each item.
Var nway_loss(Tape& tape, Scorer& sc, const std::vector<Tensor>& query_blocks, const Tensor& result_block,
              const ChoiceBatch& batch);

using NwayCallback = std::function<void(std::size_t step, double loss)>;

/// Adam over shuffled mini-batches of `scene_ids`.
Scorer nway_train(const EmbeddingStore& store, const std::vector<std::string>& scene_ids, const Variant& v, Source s,
                  const NwayOptions& opts, const NwayCallback& cb = {});

struct TopK {
  std::size_t k = 0;
  double accuracy = 0, random_baseline = 0;
};

/// scores[q, p]: query q against pool entry p, truth on the diagonal. A tie
/// with the truth counts against it.
std::vector<TopK> topk_accuracy(const Tensor& scores, const std::vector<std::size_t>& ks);

/// Every query against the full pool of `scene_ids`.
Tensor score_matrix(Scorer& sc, const EmbeddingStore& store, const std::vector<std::string>& scene_ids,
                    std::size_t jobs = 1);
std::vector<TopK> evaluate_topk(Scorer& sc, const EmbeddingStore& store, const std::vector<std::string>& scene_ids,
                                const std::vector<std::size_t>& ks = {1, 5, 10}, std::size_t jobs = 1);

struct VariantResult {
  std::string variant;
  std::vector<TopK> topk;
};
/// Columns: variant, k, accuracy, random_baseline.
void write_results_csv(const std::filesystem::path& path, const std::vector<VariantResult>& results);

}  // namespace tribert::retrieval
