#include "tribert/numerics/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tribert {
namespace {

// Summation whose result depends only on the multiset of terms.
double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

}  // namespace

void init_projection_set(ParameterStore& store, Rng& rng, const std::string& prefix,
                         std::size_t d_model, std::size_t d_kv) {
  store.add(prefix + ".wq", xavier_uniform(rng, {d_model, d_model}, d_model, d_model));
  store.add(prefix + ".bq", Tensor({d_model}));
  store.add(prefix + ".wk", xavier_uniform(rng, {d_kv, d_model}, d_kv, d_model));
  store.add(prefix + ".bk", Tensor({d_model}));
  store.add(prefix + ".wv", xavier_uniform(rng, {d_kv, d_model}, d_kv, d_model));
  store.add(prefix + ".bv", Tensor({d_model}));
  store.add(prefix + ".wo", xavier_uniform(rng, {d_model, d_model}, d_model, d_model));
  store.add(prefix + ".bo", Tensor({d_model}));
}

ProjectionSet bind_projection_set(Tape& tape, ParameterStore& store, const std::string& prefix) {
  auto p = [&](const char* n) { return tape.param(store.at(prefix + n)); };
  return {p(".wq"), p(".bq"), p(".wk"), p(".bk"), p(".wv"), p(".bv"), p(".wo"), p(".bo")};
}

Var attention_core(Var q, Var k, Var v, double scale) {
  if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2)
    throw std::invalid_argument("attention_core: operands must be rank 2");
  const std::size_t lq = q.dim(0), dh = q.dim(1), lk = k.dim(0), dv = v.dim(1);
  if (k.dim(1) != dh || v.dim(0) != lk || lk == 0)
    throw std::invalid_argument("attention_core: shape mismatch q" + shape_str(q.shape()) + " k" +
                                shape_str(k.shape()) + " v" + shape_str(v.shape()));
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();

  std::vector<double> attn(lq * lk);
  std::vector<double> terms(lk);
  for (std::size_t i = 0; i < lq; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < lk; ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < dh; ++d) s += qv.data[i * dh + d] * kv.data[j * dh + d];
      attn[i * lk + j] = s * scale;
      mx = std::max(mx, attn[i * lk + j]);
    }
    for (std::size_t j = 0; j < lk; ++j) {
      attn[i * lk + j] = std::exp(attn[i * lk + j] - mx);
      terms[j] = attn[i * lk + j];
    }
    const double z = sorted_sum(terms);
    for (std::size_t j = 0; j < lk; ++j) attn[i * lk + j] /= z;
  }
  Tensor out({lq, dv});
  for (std::size_t i = 0; i < lq; ++i)
    for (std::size_t d = 0; d < dv; ++d) {
      for (std::size_t j = 0; j < lk; ++j) terms[j] = attn[i * lk + j] * vv.data[j * dv + d];
      out.data[i * dv + d] = sorted_sum(terms);
    }

  Tape& tape = q.tape();
  const auto qid = q.id(), kid = k.id(), vid = v.id();
  return tape.record(std::move(out), {q, k, v},
                     [&tape, qid, kid, vid, lq, lk, dh, dv, scale, attn = std::move(attn)](const Tensor& g) {
                       const Tensor& qv = tape.value(qid);
                       const Tensor& kv = tape.value(kid);
                       const Tensor& vv = tape.value(vid);
                       if (Tensor* gv = tape.grad_buffer(vid))
                         for (std::size_t i = 0; i < lq; ++i)
                           for (std::size_t j = 0; j < lk; ++j)
                             for (std::size_t d = 0; d < dv; ++d)
                               gv->data[j * dv + d] += attn[i * lk + j] * g.data[i * dv + d];
                       Tensor* gq = tape.grad_buffer(qid);
                       Tensor* gk = tape.grad_buffer(kid);
                       if (!gq && !gk) return;
                       std::vector<double> gs(lk);
                       for (std::size_t i = 0; i < lq; ++i) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < lk; ++j) {
                           double ga = 0.0;
                           for (std::size_t d = 0; d < dv; ++d) ga += g.data[i * dv + d] * vv.data[j * dv + d];
                           gs[j] = ga;
                           dot += attn[i * lk + j] * ga;
                         }
                         for (std::size_t j = 0; j < lk; ++j) {
                           const double s = attn[i * lk + j] * (gs[j] - dot) * scale;
                           for (std::size_t d = 0; d < dh; ++d) {
                             if (gq) gq->data[i * dh + d] += s * kv.data[j * dh + d];
                             if (gk) gk->data[j * dh + d] += s * qv.data[i * dh + d];
                           }
                         }
                       }
                     });
}

Var multi_head_attention(Var queries, Var keys_values, const ProjectionSet& params, std::size_t heads) {
  if (heads == 0) throw std::invalid_argument("multi_head_attention: heads must be > 0");
  if (queries.shape().size() != 2 || keys_values.shape().size() != 2)
    throw std::invalid_argument("multi_head_attention: inputs must be rank 2");
  const std::size_t d = queries.dim(1);
  if (d % heads != 0)
    throw std::invalid_argument("multi_head_attention: width " + std::to_string(d) +
                                " not divisible by " + std::to_string(heads) + " heads");
  if (params.wq.shape() != Shape{d, d} || params.wk.dim(0) != keys_values.dim(1) || params.wk.dim(1) != d ||
      params.wv.dim(0) != keys_values.dim(1) || params.wv.dim(1) != d || params.wo.shape() != Shape{d, d})
    throw std::invalid_argument("multi_head_attention: projection shapes incompatible with inputs " +
                                shape_str(queries.shape()) + ", " + shape_str(keys_values.shape()));
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Var q = linear(queries, params.wq, params.bq);
  Var k = linear(keys_values, params.wk, params.bk);
  Var v = linear(keys_values, params.wv, params.bv);
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h)
    outs.push_back(attention_core(slice(q, 1, h * dh, dh), slice(k, 1, h * dh, dh), slice(v, 1, h * dh, dh), sc));
  Var joined = heads == 1 ? outs[0] : concat(outs, 1);
  return linear(joined, params.wo, params.bo);
}

}  // namespace tribert
