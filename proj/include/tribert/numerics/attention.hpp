#pragma once

#include <string>

#include "tribert/numerics/ops.hpp"
#include "tribert/numerics/random.hpp"

namespace tribert {

/// Projection matrices of one attention block. Queries have width D, keys and
/// values enter with width D_kv and are projected to D.
struct ProjectionSet {
  Var wq, bq;  // [D x D], [D]
  Var wk, bk;  // [D_kv x D], [D]
  Var wv, bv;  // [D_kv x D], [D]
  Var wo, bo;  // [D x D], [D]
};

void init_projection_set(ParameterStore& store, Rng& rng, const std::string& prefix,
                         std::size_t d_model, std::size_t d_kv);
ProjectionSet bind_projection_set(Tape& tape, ParameterStore& store, const std::string& prefix);

/// Single-head scaled dot-product attention: softmax(q k^T * scale) v.
/// Reductions over the key axis run in sorted order, so the output is
/// bit-identical under any permutation of the key/value rows.
Var attention_core(Var q, Var k, Var v, double scale);

/// queries [Lq x D], keys_values [Lkv x D_kv] -> [Lq x D]. Scale 1/sqrt(D/heads).
/// Residual and layer norm are the caller's responsibility.
Var multi_head_attention(Var queries, Var keys_values, const ProjectionSet& params,
                         std::size_t heads);

}  // namespace tribert
