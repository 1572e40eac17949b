#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "tribert/encoders/encoders.hpp"

namespace tribert::encoders {

void init_pose(ParameterStore& store, Rng& rng, const ModelConfig& cfg) {
  std::size_t in = kPoseFeatures;
  for (std::size_t l = 0; l < cfg.gcn_layers; ++l) {
    add_linear(store, rng, "pose.gcn" + std::to_string(l), in, cfg.gcn_hidden);
    in = cfg.gcn_hidden;
  }
  add_linear(store, rng, "pose.out", in, cfg.d_v);
}

SparseMatrix space_time_adjacency(const std::vector<synth::Edge>& edges, std::size_t joints, std::size_t frames) {
  const std::size_t n = joints * frames;
  std::vector<std::map<std::size_t, double>> rows(n);
  auto link = [&](std::size_t a, std::size_t b) {
    rows[a][b] = 1.0;
    rows[b][a] = 1.0;
  };
  for (std::size_t t = 0; t < frames; ++t) {
    for (const auto& [a, b] : edges) {
      if (a >= joints || b >= joints || a == b)
        throw std::invalid_argument("space_time_adjacency: bad edge " + std::to_string(a) + "-" + std::to_string(b));
      link(t * joints + a, t * joints + b);
    }
    for (std::size_t j = 0; j < joints; ++j) {
      rows[t * joints + j][t * joints + j] = 1.0;
      if (t + 1 < frames) link(t * joints + j, (t + 1) * joints + j);
    }
  }
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(rows[i].size()));
  SparseMatrix a;
  a.rows = a.cols = n;
  a.row_ptr.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [j, v] : rows[i]) {
      a.col_idx.push_back(j);
      a.values.push_back(v * inv_sqrt_deg[i] * inv_sqrt_deg[j]);
    }
    a.row_ptr.push_back(a.col_idx.size());
  }
  check_symmetric(a);
  return a;
}

void check_symmetric(const SparseMatrix& a) {
  if (a.rows != a.cols) throw std::invalid_argument("adjacency is not square");
  auto lookup = [&](std::size_t i, std::size_t j) -> const double* {
    const auto first = a.col_idx.begin() + static_cast<std::ptrdiff_t>(a.row_ptr[i]);
    const auto last = a.col_idx.begin() + static_cast<std::ptrdiff_t>(a.row_ptr[i + 1]);
    const auto it = std::lower_bound(first, last, j);
    if (it == last || *it != j) return nullptr;
    return &a.values[static_cast<std::size_t>(it - a.col_idx.begin())];
  };
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
      const std::size_t j = a.col_idx[k];
      const double* mirror = lookup(j, i);
      if (!mirror || *mirror != a.values[k])
        throw std::invalid_argument("adjacency is not symmetric at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
    }
}

Tensor pose_features(const Tensor& pose, std::size_t frame_size) {
  if (pose.rank() != 3 || pose.dim(2) != 3)
    throw std::invalid_argument("pose_features: expected [T, J, 3], got " + shape_str(pose.shape));
  const std::size_t T = pose.dim(0), J = pose.dim(1);
  const double size = static_cast<double>(frame_size), unit = size / 16.0;
  auto present = [&](std::size_t t, std::size_t j) {
    return pose.at(t, j, 0) != 0.0 || pose.at(t, j, 1) != 0.0 || pose.at(t, j, 2) != 0.0;
  };
  std::vector<double> mx(J, 0.0), my(J, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    std::size_t n = 0;
    for (std::size_t t = 0; t < T; ++t)
      if (present(t, j)) {
        mx[j] += pose.at(t, j, 0);
        my[j] += pose.at(t, j, 1);
        ++n;
      }
    if (n) {
      mx[j] /= static_cast<double>(n);
      my[j] /= static_cast<double>(n);
    }
  }
  Tensor f({T * J, kPoseFeatures});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < J; ++j) {
      if (!present(t, j)) continue;
      const std::size_t r = t * J + j;
      const double x = pose.at(t, j, 0), y = pose.at(t, j, 1);
      f.at(r, 0) = x / size;
      f.at(r, 1) = y / size;
      f.at(r, 2) = pose.at(t, j, 2);
      f.at(r, 3) = (x - mx[j]) / unit;
      f.at(r, 4) = (y - my[j]) / unit;
    }
  return f;
}

Var pose_graph_encode(Tape& tape, ParameterStore& store, const ModelConfig& cfg, Var features,
                      const SparseMatrix& a_hat, std::size_t frames, std::size_t joints) {
  const std::size_t n = frames * joints;
  if (frames < 3) throw std::invalid_argument("pose_graph_encode: need at least 3 frames");
  if (features.value().rank() != 2 || features.dim(0) != n || a_hat.rows != n)
    throw std::invalid_argument("pose_graph_encode: features " + shape_str(features.shape()) + " vs graph of " +
                                std::to_string(a_hat.rows) + " nodes, expected " + std::to_string(n));
  Var h = features;
  for (std::size_t l = 0; l < cfg.gcn_layers; ++l)
    h = relu(apply_linear(tape, store, "pose.gcn" + std::to_string(l), spmm(a_hat, h)));
  std::vector<Var> segments;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t t0 = s * frames / 3, t1 = (s + 1) * frames / 3;
    segments.push_back(mean_axis(slice(h, 0, t0 * joints, (t1 - t0) * joints), 0, true));
  }
  Var out = apply_linear(tape, store, "pose.out", concat(segments, 0));
  Var empty = tape.constant(Tensor({1, cfg.d_v}));
  std::vector<Var> tokens;
  for (std::size_t s = 0; s < 3; ++s) {
    tokens.push_back(slice(out, 0, s, 1));
    tokens.push_back(empty);
  }
  return concat(tokens, 0);
}

}  // namespace tribert::encoders
