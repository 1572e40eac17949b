#pragma once

#include <cstdint>
#include <vector>

#include "tribert/numerics/tape.hpp"

namespace tribert {

// Elementwise. Binary ops require identical shapes; use broadcast_to or
// add_bias for broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);

/// Same-rank broadcast: every axis of `a` must equal the target extent or be 1.
Var broadcast_to(Var a, const Shape& shape);
/// Adds a vector `b` (length x.shape[axis]) along `axis`.
Var add_bias(Var x, Var b, std::size_t axis);

Var relu(Var x);
Var sigmoid(Var x);
Var softplus(Var x);
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);

/// Numerically stable softmax along `axis` (max-subtracted).
Var softmax(Var x, std::size_t axis);

/// Layer norm over the last axis with affine gain/shift.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

/// Dropout mask entries are a pure function of (seed, instance, step, index),
/// so masks replay bit-exactly.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t instance = 0;
  std::uint64_t step = 0;
};
Var dropout(Var x, double p, bool train, DropoutKey key);

Var matmul(Var a, Var b);
Var transpose(Var a);
/// x[N x in] * w[in x out] + b[out]
Var linear(Var x, Var w, Var b);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);
Var reshape(Var x, Shape shape);
Var permute(Var x, const std::vector<std::size_t>& perm);
Var index_select(Var x, std::size_t axis, const std::vector<std::size_t>& indices);

Var sum(Var x);
Var mean(Var x);
Var sum_axis(Var x, std::size_t axis, bool keepdim = false);
Var mean_axis(Var x, std::size_t axis, bool keepdim = false);

enum class PadMode { zeros, reflect };

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
  PadMode mode = PadMode::zeros;
};

/// x: [C,H,W] or [N,C,H,W]; w: [O,C,kh,kw]; b: [O] or an invalid Var.
Var conv2d(Var x, Var w, Var b, Conv2dOptions opt = {});
/// Adjoint geometry of conv2d. x: [C_in,H,W] or [N,C_in,H,W];
/// w: [C_in,C_out,kh,kw]; output extent (H-1)*stride - 2*pad + kh.
Var conv_transpose2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad);
/// Non-overlapping k x k mean pool over the last two axes.
Var avg_pool2d(Var x, std::size_t k);

/// Constant CSR matrix for graph message passing.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::size_t> col_idx;
  std::vector<double> values;

  std::vector<double> to_dense() const;
};
/// A[rows x cols] * x[cols x C]
Var spmm(const SparseMatrix& a, Var x);

/// Mean sigmoid cross-entropy of logits against {0,1} targets.
Var bce_with_logits(Var logits, const Tensor& targets);
/// Mean binary cross-entropy of probabilities, clamped to [eps, 1-eps].
Var bce_probs(Var probs, const Tensor& targets, double clamp_eps = 1e-7);
/// Mean softmax cross-entropy; logits [N x n], one target index per row.
Var softmax_cross_entropy(Var logits, const std::vector<std::size_t>& targets);

}  // namespace tribert
