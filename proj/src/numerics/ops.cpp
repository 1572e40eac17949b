#include "tribert/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tribert/numerics/random.hpp"

namespace tribert {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap cmap(const double* p, std::size_t r, std::size_t c) {
  return ConstMap(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MutMap mmap(double* p, std::size_t r, std::size_t c) {
  return MutMap(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_same_shape(Var a, Var b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

std::int32_t next_id(const Tape& t) { return static_cast<std::int32_t>(t.node_count()); }

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};
AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class F, class DF>
Var unary(Var x, F f, DF df_from_x_y) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = f(xv.data[i]);
  Tape& tape = x.tape();
  const auto xid = x.id();
  const auto oid = next_id(tape);
  return tape.record(std::move(out), {x}, [&tape, xid, oid, df_from_x_y](const Tensor& g) {
    Tensor* gx = tape.grad_buffer(xid);
    if (!gx) return;
    const Tensor& xv = tape.value(xid);
    const Tensor& yv = tape.value(oid);
    for (std::size_t i = 0; i < g.size(); ++i) gx->data[i] += g.data[i] * df_from_x_y(xv.data[i], yv.data[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  Tape& tape = a.tape();
  const auto aid = a.id(), bid = b.id();
  return tape.record(std::move(out), {a, b}, [&tape, aid, bid](const Tensor& g) {
    tape.accumulate(aid, g);
    tape.accumulate(bid, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
  Tape& tape = a.tape();
  const auto aid = a.id(), bid = b.id();
  return tape.record(std::move(out), {a, b}, [&tape, aid, bid](const Tensor& g) {
    tape.accumulate(aid, g);
    if (Tensor* gb = tape.grad_buffer(bid))
      for (std::size_t i = 0; i < g.size(); ++i) gb->data[i] -= g.data[i];
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  Tape& tape = a.tape();
  const auto aid = a.id(), bid = b.id();
  return tape.record(std::move(out), {a, b}, [&tape, aid, bid](const Tensor& g) {
    const Tensor& av = tape.value(aid);
    const Tensor& bv = tape.value(bid);
    if (Tensor* ga = tape.grad_buffer(aid))
      for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i] * bv.data[i];
    if (Tensor* gb = tape.grad_buffer(bid))
      for (std::size_t i = 0; i < g.size(); ++i) gb->data[i] += g.data[i] * av.data[i];
  });
}

Var div(Var a, Var b) {
  require_same_shape(a, b, "div");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] /= bv.data[i];
  Tape& tape = a.tape();
  const auto aid = a.id(), bid = b.id(), oid = next_id(tape);
  return tape.record(std::move(out), {a, b}, [&tape, aid, bid, oid](const Tensor& g) {
    const Tensor& bv = tape.value(bid);
    const Tensor& yv = tape.value(oid);
    if (Tensor* ga = tape.grad_buffer(aid))
      for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i] / bv.data[i];
    if (Tensor* gb = tape.grad_buffer(bid))
      for (std::size_t i = 0; i < g.size(); ++i) gb->data[i] -= g.data[i] * yv.data[i] / bv.data[i];
  });
}

Var scale(Var a, double k) {
  Tensor out = a.value();
  for (auto& v : out.data) v *= k;
  Tape& tape = a.tape();
  const auto aid = a.id();
  return tape.record(std::move(out), {a}, [&tape, aid, k](const Tensor& g) {
    if (Tensor* ga = tape.grad_buffer(aid))
      for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += k * g.data[i];
  });
}

Var add_scalar(Var a, double k) {
  Tensor out = a.value();
  for (auto& v : out.data) v += k;
  Tape& tape = a.tape();
  const auto aid = a.id();
  return tape.record(std::move(out), {a}, [&tape, aid](const Tensor& g) { tape.accumulate(aid, g); });
}

Var broadcast_to(Var a, const Shape& shape) {
  const Shape& src = a.shape();
  require(src.size() == shape.size(), "broadcast_to: rank mismatch " + shape_str(src) + " -> " +
                                          shape_str(shape));
  for (std::size_t i = 0; i < src.size(); ++i)
    require(src[i] == shape[i] || src[i] == 1,
            "broadcast_to: incompatible " + shape_str(src) + " -> " + shape_str(shape));
  const auto sstr = strides_of(src);
  const std::size_t n = numel(shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t s = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) s += (src[d] == 1 ? 0 : idx[d]) * sstr[d];
    map[flat] = s;
    for (std::size_t d = shape.size(); d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  Tensor out(shape);
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < n; ++i) out.data[i] = av.data[map[i]];
  Tape& tape = a.tape();
  const auto aid = a.id();
  return tape.record(std::move(out), {a}, [&tape, aid, map = std::move(map)](const Tensor& g) {
    if (Tensor* ga = tape.grad_buffer(aid))
      for (std::size_t i = 0; i < g.size(); ++i) ga->data[map[i]] += g.data[i];
  });
}

Var add_bias(Var x, Var b, std::size_t axis) {
  const Shape& s = x.shape();
  require(axis < s.size(), "add_bias: axis out of range");
  require(b.size() == s[axis], "add_bias: bias length " + std::to_string(b.size()) +
                                   " vs extent " + std::to_string(s[axis]));
  const AxisSplit sp = split_axis(s, axis);
  Tensor out = x.value();
  const Tensor& bv = b.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t a = 0; a < sp.extent; ++a) {
      double* p = out.data.data() + (o * sp.extent + a) * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) p[i] += bv.data[a];
    }
  Tape& tape = x.tape();
  const auto xid = x.id(), bid = b.id();
  return tape.record(std::move(out), {x, b}, [&tape, xid, bid, sp](const Tensor& g) {
    tape.accumulate(xid, g);
    if (Tensor* gb = tape.grad_buffer(bid))
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t a = 0; a < sp.extent; ++a) {
          const double* p = g.data.data() + (o * sp.extent + a) * sp.inner;
          double acc = 0.0;
          for (std::size_t i = 0; i < sp.inner; ++i) acc += p[i];
          gb->data[a] += acc;
        }
  });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var x) {
  return unary(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double xv, double) {
        if (xv >= 0) return 1.0 / (1.0 + std::exp(-xv));
        const double e = std::exp(xv);
        return e / (1.0 + e);
      });
}

Var tanh(Var x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double xv, double) { return 1.0 / xv; });
}

// ---------------------------------------------------------------------------

Var softmax(Var x, std::size_t axis) {
  const Shape& s = x.shape();
  require(axis < s.size(), "softmax: axis " + std::to_string(axis) + " out of range for rank " +
                               std::to_string(s.size()));
  const AxisSplit sp = split_axis(s, axis);
  const Tensor& xv = x.value();
  Tensor out(s);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.extent * sp.inner + i;
      double mx = -INFINITY;
      for (std::size_t a = 0; a < sp.extent; ++a) mx = std::max(mx, xv.data[base + a * sp.inner]);
      double z = 0.0;
      for (std::size_t a = 0; a < sp.extent; ++a) {
        const double e = std::exp(xv.data[base + a * sp.inner] - mx);
        out.data[base + a * sp.inner] = e;
        z += e;
      }
      for (std::size_t a = 0; a < sp.extent; ++a) out.data[base + a * sp.inner] /= z;
    }
  Tape& tape = x.tape();
  const auto xid = x.id(), oid = next_id(tape);
  return tape.record(std::move(out), {x}, [&tape, xid, oid, sp](const Tensor& g) {
    Tensor* gx = tape.grad_buffer(xid);
    if (!gx) return;
    const Tensor& y = tape.value(oid);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.extent * sp.inner + i;
        double dot = 0.0;
        for (std::size_t a = 0; a < sp.extent; ++a)
          dot += g.data[base + a * sp.inner] * y.data[base + a * sp.inner];
        for (std::size_t a = 0; a < sp.extent; ++a) {
          const std::size_t k = base + a * sp.inner;
          gx->data[k] += y.data[k] * (g.data[k] - dot);
        }
      }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Shape& s = x.shape();
  require(!s.empty(), "layer_norm: scalar input");
  const std::size_t d = s.back();
  require(gamma.size() == d && beta.size() == d, "layer_norm: affine width mismatch");
  const std::size_t rows = x.size() / d;
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(s);
  std::vector<double> xhat(x.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = xv.data.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += p[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (p[j] - mu) * (p[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (p[j] - mu) * inv_std[r];
      xhat[r * d + j] = h;
      out.data[r * d + j] = gv.data[j] * h + bv.data[j];
    }
  }
  Tape& tape = x.tape();
  const auto xid = x.id(), gid = gamma.id(), bid = beta.id();
  return tape.record(
      std::move(out), {x, gamma, beta},
      [&tape, xid, gid, bid, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor& g) {
        const Tensor& gv = tape.value(gid);
        if (Tensor* gg = tape.grad_buffer(gid))
          for (std::size_t k = 0; k < g.size(); ++k) gg->data[k % d] += g.data[k] * xhat[k];
        if (Tensor* gb = tape.grad_buffer(bid))
          for (std::size_t k = 0; k < g.size(); ++k) gb->data[k % d] += g.data[k];
        Tensor* gx = tape.grad_buffer(xid);
        if (!gx) return;
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = g.data[r * d + j] * gv.data[j];
            m1 += gh;
            m2 += gh * xhat[r * d + j];
          }
          m1 *= inv_d;
          m2 *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = g.data[r * d + j] * gv.data[j];
            gx->data[r * d + j] += inv_std[r] * (gh - m1 - xhat[r * d + j] * m2);
          }
        }
      });
}

Var dropout(Var x, double p, bool train, DropoutKey key) {
  require(p >= 0.0 && p <= 1.0, "dropout: p outside [0,1]");
  if (!train || p == 0.0) return x;
  const double keep_scale = p < 1.0 ? 1.0 / (1.0 - p) : 0.0;
  std::vector<double> mask(x.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = counter_uniform(key.seed, key.instance, key.step, i) >= p ? keep_scale : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask[i];
  Tape& tape = x.tape();
  const auto xid = x.id();
  return tape.record(std::move(out), {x}, [&tape, xid, mask = std::move(mask)](const Tensor& g) {
    if (Tensor* gx = tape.grad_buffer(xid))
      for (std::size_t i = 0; i < g.size(); ++i) gx->data[i] += g.data[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// linear algebra

Var matmul(Var a, Var b) {
  require(a.shape().size() == 2 && b.shape().size() == 2, "matmul: operands must be rank 2");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  Tensor out({m, n});
  mmap(out.data.data(), m, n).noalias() =
      cmap(a.value().data.data(), m, k) * cmap(b.value().data.data(), k, n);
  Tape& tape = a.tape();
  const auto aid = a.id(), bid = b.id();
  return tape.record(std::move(out), {a, b}, [&tape, aid, bid, m, k, n](const Tensor& g) {
    const auto G = cmap(g.data.data(), m, n);
    if (Tensor* ga = tape.grad_buffer(aid))
      mmap(ga->data.data(), m, k).noalias() += G * cmap(tape.value(bid).data.data(), k, n).transpose();
    if (Tensor* gb = tape.grad_buffer(bid))
      mmap(gb->data.data(), k, n).noalias() += cmap(tape.value(aid).data.data(), m, k).transpose() * G;
  });
}

Var transpose(Var a) { return permute(a, {1, 0}); }

Var linear(Var x, Var w, Var b) {
  Var y = matmul(x, w);
  return b.valid() ? add_bias(y, b, 1) : y;
}

// ---------------------------------------------------------------------------
// shape manipulation

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  Shape s = parts[0].shape();
  require(axis < s.size(), "concat: axis out of range");
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& ps = p.shape();
    require(ps.size() == s.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      require(d == axis || ps[d] == s[d], "concat: extent mismatch " + shape_str(ps) + " vs " +
                                              shape_str(s));
    total += ps[axis];
  }
  s[axis] = total;
  const AxisSplit sp = split_axis(s, axis);
  Tensor out(s);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const std::size_t ext = p.dim(axis);
    const Tensor& pv = p.value();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(pv.data.data() + o * ext * sp.inner, ext * sp.inner,
                  out.data.data() + (o * total + off) * sp.inner);
    off += ext;
  }
  Tape& tape = parts[0].tape();
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> exts;
  for (const Var& p : parts) {
    ids.push_back(p.id());
    exts.push_back(p.dim(axis));
  }
  return tape.record(std::move(out), parts,
                     [&tape, ids, exts, offsets, sp, total](const Tensor& g) {
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         Tensor* gp = tape.grad_buffer(ids[k]);
                         if (!gp) continue;
                         for (std::size_t o = 0; o < sp.outer; ++o) {
                           const double* src = g.data.data() + (o * total + offsets[k]) * sp.inner;
                           double* dst = gp->data.data() + o * exts[k] * sp.inner;
                           for (std::size_t i = 0; i < exts[k] * sp.inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
  Shape s = x.shape();
  require(axis < s.size(), "slice: axis out of range");
  require(start + length <= s[axis], "slice: range exceeds extent");
  const std::size_t full = s[axis];
  s[axis] = length;
  const AxisSplit sp = split_axis(s, axis);
  Tensor out(s);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(xv.data.data() + (o * full + start) * sp.inner, length * sp.inner,
                out.data.data() + o * length * sp.inner);
  Tape& tape = x.tape();
  const auto xid = x.id();
  return tape.record(std::move(out), {x}, [&tape, xid, sp, full, start, length](const Tensor& g) {
    Tensor* gx = tape.grad_buffer(xid);
    if (!gx) return;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const double* src = g.data.data() + o * length * sp.inner;
      double* dst = gx->data.data() + (o * full + start) * sp.inner;
      for (std::size_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

Var reshape(Var x, Shape shape) {
  require(numel(shape) == x.size(), "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor out(std::move(shape), x.value().data);
  Tape& tape = x.tape();
  const auto xid = x.id();
  return tape.record(std::move(out), {x}, [&tape, xid](const Tensor& g) {
    if (Tensor* gx = tape.grad_buffer(xid))
      for (std::size_t i = 0; i < g.size(); ++i) gx->data[i] += g.data[i];
  });
}

Var permute(Var x, const std::vector<std::size_t>& perm) {
  const Shape& s = x.shape();
  require(perm.size() == s.size(), "permute: rank mismatch");
  Shape os(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) {
    require(perm[d] < s.size(), "permute: invalid axis");
    os[d] = s[perm[d]];
  }
  const auto istr = strides_of(s);
  const std::size_t n = x.size();
  std::vector<std::size_t> map(n);  // output flat -> input flat
  std::vector<std::size_t> idx(os.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < os.size(); ++d) src += idx[d] * istr[perm[d]];
    map[flat] = src;
    for (std::size_t d = os.size(); d-- > 0;) {
      if (++idx[d] < os[d]) break;
      idx[d] = 0;
    }
  }
  Tensor out(os);
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < n; ++i) out.data[i] = xv.data[map[i]];
  Tape& tape = x.tape();
  const auto xid = x.id();
  return tape.record(std::move(out), {x}, [&tape, xid, map = std::move(map)](const Tensor& g) {
    if (Tensor* gx = tape.grad_buffer(xid))
      for (std::size_t i = 0; i < g.size(); ++i) gx->data[map[i]] += g.data[i];
  });
}

Var index_select(Var x, std::size_t axis, const std::vector<std::size_t>& indices) {
  Shape s = x.shape();
  require(axis < s.size(), "index_select: axis out of range");
  const std::size_t full = s[axis];
  for (auto i : indices) require(i < full, "index_select: index out of range");
  s[axis] = indices.size();
  const AxisSplit sp = split_axis(s, axis);
  Tensor out(s);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < indices.size(); ++k)
      std::copy_n(xv.data.data() + (o * full + indices[k]) * sp.inner, sp.inner,
                  out.data.data() + (o * indices.size() + k) * sp.inner);
  Tape& tape = x.tape();
  const auto xid = x.id();
  return tape.record(std::move(out), {x}, [&tape, xid, sp, full, indices](const Tensor& g) {
    Tensor* gx = tape.grad_buffer(xid);
    if (!gx) return;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < indices.size(); ++k) {
        const double* src = g.data.data() + (o * indices.size() + k) * sp.inner;
        double* dst = gx->data.data() + (o * full + indices[k]) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
  });
}

// ---------------------------------------------------------------------------
// reductions

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data) acc += v;
  Tape& tape = x.tape();
  const auto xid = x.id();
  return tape.record(Tensor::scalar(acc), {x}, [&tape, xid](const Tensor& g) {
    if (Tensor* gx = tape.grad_buffer(xid))
      for (auto& v : gx->data) v += g.data[0];
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var sum_axis(Var x, std::size_t axis, bool keepdim) {
  const Shape& s = x.shape();
  require(axis < s.size(), "sum_axis: axis out of range");
  const AxisSplit sp = split_axis(s, axis);
  Shape os = s;
  if (keepdim)
    os[axis] = 1;
  else
    os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  if (os.empty()) os = {1};
  Tensor out(os);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t a = 0; a < sp.extent; ++a)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out.data[o * sp.inner + i] += xv.data[(o * sp.extent + a) * sp.inner + i];
  Tape& tape = x.tape();
  const auto xid = x.id();
  return tape.record(std::move(out), {x}, [&tape, xid, sp](const Tensor& g) {
    Tensor* gx = tape.grad_buffer(xid);
    if (!gx) return;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t a = 0; a < sp.extent; ++a)
        for (std::size_t i = 0; i < sp.inner; ++i)
          gx->data[(o * sp.extent + a) * sp.inner + i] += g.data[o * sp.inner + i];
  });
}

Var mean_axis(Var x, std::size_t axis, bool keepdim) {
  const double n = static_cast<double>(x.shape().at(axis));
  return scale(sum_axis(x, axis, keepdim), 1.0 / n);
}

// ---------------------------------------------------------------------------
// convolution

namespace {

struct ConvGeom {
  std::size_t c, h, w;     // image
  std::size_t kh, kw;      // kernel
  std::size_t stride, pad;
  std::size_t oh, ow;      // output grid
  PadMode mode;
};

inline long map_coord(long i, long n, PadMode mode) {
  if (i >= 0 && i < n) return i;
  if (mode == PadMode::zeros) return -1;
  if (i < 0) return -i;
  return 2 * (n - 1) - i;
}

// cols: [c*kh*kw, oh*ow]
void im2col(const double* img, const ConvGeom& g, double* cols) {
  const std::size_t npix = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((c * g.kh + ki) * g.kw + kj) * npix;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = map_coord(static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad),
                                    static_cast<long>(g.h), g.mode);
          double* dst = row + oy * g.ow;
          if (iy < 0) {
            std::fill_n(dst, g.ow, 0.0);
            continue;
          }
          const double* src = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = map_coord(static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad),
                                      static_cast<long>(g.w), g.mode);
            dst[ox] = ix < 0 ? 0.0 : src[ix];
          }
        }
      }
}

// Adjoint of im2col: scatters (accumulates) cols back into img.
void col2im(const double* cols, const ConvGeom& g, double* img) {
  const std::size_t npix = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * npix;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = map_coord(static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad),
                                    static_cast<long>(g.h), g.mode);
          if (iy < 0) continue;
          double* dst = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = map_coord(static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad),
                                      static_cast<long>(g.w), g.mode);
            if (ix >= 0) dst[ix] += src[ox];
          }
        }
      }
}

struct Batched {
  std::size_t n;  // 1 when unbatched
  bool batched;
  std::size_t c, h, w;
};

Batched batch_view(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, false, s[0], s[1], s[2]};
  if (s.size() == 4) return {s[0], true, s[1], s[2], s[3]};
  throw std::invalid_argument(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " + shape_str(s));
}

}  // namespace

Var conv2d(Var x, Var w, Var b, Conv2dOptions opt) {
  const Batched bx = batch_view(x.shape(), "conv2d");
  const Shape& ws = w.shape();
  require(ws.size() == 4 && ws[1] == bx.c, "conv2d: weight " + shape_str(ws) + " incompatible with input " +
                                               shape_str(x.shape()));
  require(opt.stride >= 1, "conv2d: stride must be >= 1");
  if (opt.mode == PadMode::reflect)
    require(opt.pad < bx.h && opt.pad < bx.w, "conv2d: reflect pad must be smaller than input");
  require(bx.h + 2 * opt.pad >= ws[2] && bx.w + 2 * opt.pad >= ws[3], "conv2d: kernel larger than padded input");
  ConvGeom g{bx.c, bx.h, bx.w, ws[2], ws[3], opt.stride, opt.pad,
             (bx.h + 2 * opt.pad - ws[2]) / opt.stride + 1, (bx.w + 2 * opt.pad - ws[3]) / opt.stride + 1,
             opt.mode};
  const std::size_t out_c = ws[0];
  const std::size_t kdim = g.c * g.kh * g.kw, npix = g.oh * g.ow;
  if (b.valid()) require(b.size() == out_c, "conv2d: bias length mismatch");

  Shape os = bx.batched ? Shape{bx.n, out_c, g.oh, g.ow} : Shape{out_c, g.oh, g.ow};
  Tensor out(os);
  std::vector<double> cols(kdim * npix);
  const auto W = cmap(w.value().data.data(), out_c, kdim);
  for (std::size_t s = 0; s < bx.n; ++s) {
    im2col(x.value().data.data() + s * g.c * g.h * g.w, g, cols.data());
    auto O = mmap(out.data.data() + s * out_c * npix, out_c, npix);
    O.noalias() = W * cmap(cols.data(), kdim, npix);
    if (b.valid())
      for (std::size_t o = 0; o < out_c; ++o) O.row(static_cast<Eigen::Index>(o)).array() += b.value().data[o];
  }
  Tape& tape = x.tape();
  const auto xid = x.id(), wid = w.id(), bid = b.valid() ? b.id() : -1;
  std::vector<Var> parents{x, w};
  if (b.valid()) parents.push_back(b);
  return tape.record(std::move(out), parents, [&tape, xid, wid, bid, g, bx, out_c, kdim, npix](const Tensor& gout) {
    Tensor* gx = tape.grad_buffer(xid);
    Tensor* gw = tape.grad_buffer(wid);
    Tensor* gb = bid >= 0 ? tape.grad_buffer(bid) : nullptr;
    const Tensor& xv = tape.value(xid);
    const auto W = cmap(tape.value(wid).data.data(), out_c, kdim);
    std::vector<double> cols(kdim * npix);
    for (std::size_t s = 0; s < bx.n; ++s) {
      const auto G = cmap(gout.data.data() + s * out_c * npix, out_c, npix);
      if (gb)
        for (std::size_t o = 0; o < out_c; ++o) gb->data[o] += G.row(static_cast<Eigen::Index>(o)).sum();
      if (gw) {
        im2col(xv.data.data() + s * g.c * g.h * g.w, g, cols.data());
        mmap(gw->data.data(), out_c, kdim).noalias() += G * cmap(cols.data(), kdim, npix).transpose();
      }
      if (gx) {
        mmap(cols.data(), kdim, npix).noalias() = W.transpose() * G;
        col2im(cols.data(), g, gx->data.data() + s * g.c * g.h * g.w);
      }
    }
  });
}

Var conv_transpose2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
  const Batched bx = batch_view(x.shape(), "conv_transpose2d");
  const Shape& ws = w.shape();
  require(ws.size() == 4 && ws[0] == bx.c, "conv_transpose2d: weight " + shape_str(ws) +
                                               " incompatible with input " + shape_str(x.shape()));
  require(stride >= 1, "conv_transpose2d: stride must be >= 1");
  const long oh_signed = static_cast<long>((bx.h - 1) * stride + ws[2]) - 2 * static_cast<long>(pad);
  const long ow_signed = static_cast<long>((bx.w - 1) * stride + ws[3]) - 2 * static_cast<long>(pad);
  require(oh_signed > 0 && ow_signed > 0, "conv_transpose2d: empty output");
  const std::size_t out_c = ws[1];
  // Geometry of the equivalent forward conv that maps the output back to x.
  ConvGeom g{out_c, static_cast<std::size_t>(oh_signed), static_cast<std::size_t>(ow_signed),
             ws[2], ws[3], stride, pad, bx.h, bx.w, PadMode::zeros};
  const std::size_t kdim = out_c * g.kh * g.kw, npix = bx.h * bx.w, in_c = bx.c;
  if (b.valid()) require(b.size() == out_c, "conv_transpose2d: bias length mismatch");
  const std::size_t out_pix = g.h * g.w;

  Shape os = bx.batched ? Shape{bx.n, out_c, g.h, g.w} : Shape{out_c, g.h, g.w};
  Tensor out(os);
  std::vector<double> cols(kdim * npix);
  const auto W = cmap(w.value().data.data(), in_c, kdim);
  for (std::size_t s = 0; s < bx.n; ++s) {
    mmap(cols.data(), kdim, npix).noalias() = W.transpose() * cmap(x.value().data.data() + s * in_c * npix, in_c, npix);
    double* dst = out.data.data() + s * out_c * out_pix;
    col2im(cols.data(), g, dst);
    if (b.valid())
      for (std::size_t o = 0; o < out_c; ++o)
        for (std::size_t i = 0; i < out_pix; ++i) dst[o * out_pix + i] += b.value().data[o];
  }
  Tape& tape = x.tape();
  const auto xid = x.id(), wid = w.id(), bid = b.valid() ? b.id() : -1;
  std::vector<Var> parents{x, w};
  if (b.valid()) parents.push_back(b);
  return tape.record(std::move(out), parents,
                     [&tape, xid, wid, bid, g, bx, in_c, out_c, kdim, npix, out_pix](const Tensor& gout) {
                       Tensor* gx = tape.grad_buffer(xid);
                       Tensor* gw = tape.grad_buffer(wid);
                       Tensor* gb = bid >= 0 ? tape.grad_buffer(bid) : nullptr;
                       const Tensor& xv = tape.value(xid);
                       std::vector<double> cols(kdim * npix);
                       for (std::size_t s = 0; s < bx.n; ++s) {
                         const double* go = gout.data.data() + s * out_c * out_pix;
                         if (gb)
                           for (std::size_t o = 0; o < out_c; ++o) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < out_pix; ++i) acc += go[o * out_pix + i];
                             gb->data[o] += acc;
                           }
                         if (!gx && !gw) continue;
                         im2col(go, g, cols.data());
                         const auto C = cmap(cols.data(), kdim, npix);
                         if (gx)
                           mmap(gx->data.data() + s * in_c * npix, in_c, npix).noalias() +=
                               cmap(tape.value(wid).data.data(), in_c, kdim) * C;
                         if (gw)
                           mmap(gw->data.data(), in_c, kdim).noalias() +=
                               cmap(xv.data.data() + s * in_c * npix, in_c, npix) * C.transpose();
                       }
                     });
}

Var avg_pool2d(Var x, std::size_t k) {
  const Shape& s = x.shape();
  require(s.size() >= 2 && k >= 1, "avg_pool2d: need rank >= 2");
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  require(h % k == 0 && w % k == 0, "avg_pool2d: extents not divisible by pool size");
  const std::size_t planes = x.size() / (h * w), oh = h / k, ow = w / k;
  Shape os = s;
  os[s.size() - 2] = oh;
  os[s.size() - 1] = ow;
  Tensor out(os);
  const double inv = 1.0 / static_cast<double>(k * k);
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out.data[(p * oh + i / k) * ow + j / k] += inv * xv.data[(p * h + i) * w + j];
  Tape& tape = x.tape();
  const auto xid = x.id();
  return tape.record(std::move(out), {x}, [&tape, xid, planes, h, w, k, oh, ow, inv](const Tensor& g) {
    Tensor* gx = tape.grad_buffer(xid);
    if (!gx) return;
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          gx->data[(p * h + i) * w + j] += inv * g.data[(p * oh + i / k) * ow + j / k];
  });
}

// ---------------------------------------------------------------------------

std::vector<double> SparseMatrix::to_dense() const {
  std::vector<double> d(rows * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) d[r * cols + col_idx[k]] += values[k];
  return d;
}

Var spmm(const SparseMatrix& a, Var x) {
  require(x.shape().size() == 2 && x.dim(0) == a.cols, "spmm: operand " + shape_str(x.shape()) +
                                                          " incompatible with " + std::to_string(a.rows) +
                                                          "x" + std::to_string(a.cols) + " matrix");
  const std::size_t c = x.dim(1);
  Tensor out({a.rows, c});
  const Tensor& xv = x.value();
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k) {
      const double v = a.values[k];
      const double* src = xv.data.data() + a.col_idx[k] * c;
      double* dst = out.data.data() + r * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += v * src[j];
    }
  Tape& tape = x.tape();
  const auto xid = x.id();
  return tape.record(std::move(out), {x}, [&tape, xid, &a, c](const Tensor& g) {
    Tensor* gx = tape.grad_buffer(xid);
    if (!gx) return;
    for (std::size_t r = 0; r < a.rows; ++r)
      for (std::size_t k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k) {
        const double v = a.values[k];
        const double* src = g.data.data() + r * c;
        double* dst = gx->data.data() + a.col_idx[k] * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += v * src[j];
      }
  });
}

// ---------------------------------------------------------------------------
// losses

Var bce_with_logits(Var logits, const Tensor& targets) {
  require(logits.size() == targets.size(), "bce_with_logits: shape mismatch");
  for (double t : targets.data) require(t == 0.0 || t == 1.0, "bce_with_logits: targets must be binary");
  const Tensor& z = logits.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double v = z.data[i];
    acc += std::max(v, 0.0) - v * targets.data[i] + std::log1p(std::exp(-std::abs(v)));
  }
  const double inv_n = 1.0 / static_cast<double>(z.size());
  Tape& tape = logits.tape();
  const auto zid = logits.id();
  return tape.record(Tensor::scalar(acc * inv_n), {logits}, [&tape, zid, targets, inv_n](const Tensor& g) {
    Tensor* gz = tape.grad_buffer(zid);
    if (!gz) return;
    const Tensor& z = tape.value(zid);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double v = z.data[i];
      const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      gz->data[i] += g.data[0] * inv_n * (s - targets.data[i]);
    }
  });
}

Var bce_probs(Var probs, const Tensor& targets, double clamp_eps) {
  require(probs.size() == targets.size(), "bce_probs: shape mismatch");
  for (double t : targets.data) require(t == 0.0 || t == 1.0, "bce_probs: targets must be binary");
  const Tensor& p = probs.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p.data[i], clamp_eps, 1.0 - clamp_eps);
    acc -= targets.data[i] * std::log(q) + (1.0 - targets.data[i]) * std::log(1.0 - q);
  }
  const double inv_n = 1.0 / static_cast<double>(p.size());
  Tape& tape = probs.tape();
  const auto pid = probs.id();
  return tape.record(Tensor::scalar(acc * inv_n), {probs},
                     [&tape, pid, targets, inv_n, clamp_eps](const Tensor& g) {
                       Tensor* gp = tape.grad_buffer(pid);
                       if (!gp) return;
                       const Tensor& p = tape.value(pid);
                       for (std::size_t i = 0; i < p.size(); ++i) {
                         const double v = p.data[i];
                         if (v < clamp_eps || v > 1.0 - clamp_eps) continue;
                         const double t = targets.data[i];
                         gp->data[i] += g.data[0] * inv_n * (-t / v + (1.0 - t) / (1.0 - v));
                       }
                     });
}

Var softmax_cross_entropy(Var logits, const std::vector<std::size_t>& targets) {
  require(logits.shape().size() == 2, "softmax_cross_entropy: logits must be [N x n]");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  require(targets.size() == n, "softmax_cross_entropy: one target per row required");
  const Tensor& z = logits.value();
  std::vector<double> probs(n * k);
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    require(targets[r] < k, "softmax_cross_entropy: target out of range");
    const double* row = z.data.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(row[j] - mx) / s;
    acc += mx + std::log(s) - row[targets[r]];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Tape& tape = logits.tape();
  const auto zid = logits.id();
  return tape.record(Tensor::scalar(acc * inv_n), {logits},
                     [&tape, zid, targets, k, inv_n, probs = std::move(probs)](const Tensor& g) {
                       Tensor* gz = tape.grad_buffer(zid);
                       if (!gz) return;
                       for (std::size_t i = 0; i < probs.size(); ++i) {
                         const double onehot = (i % k) == targets[i / k] ? 1.0 : 0.0;
                         gz->data[i] += g.data[0] * inv_n * (probs[i] - onehot);
                       }
                     });
}

}  // namespace tribert
