#include "tribert/evaluation/bss_eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tribert::eval {
namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Columns: filter_len delayed copies of each listed reference.
Matrix basis(const std::vector<std::vector<double>>& refs, const std::vector<std::size_t>& which, std::size_t len,
             std::size_t filter_len) {
  Matrix b = Matrix::Zero(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(which.size() * filter_len));
  Eigen::Index col = 0;
  for (auto j : which)
    for (std::size_t lag = 0; lag < filter_len; ++lag, ++col)
      for (std::size_t n = 0; n < refs[j].size(); ++n) b(static_cast<Eigen::Index>(n + lag), col) = refs[j][n];
  return b;
}

Vector project(const Matrix& b, const Vector& x) {
  Eigen::ColPivHouseholderQR<Matrix> qr(b);
  qr.setThreshold(1e-10);
  if (qr.rank() < b.cols()) throw std::invalid_argument("bss_eval: rank-deficient projection basis");
  const Matrix q = qr.householderQ() * Matrix::Identity(b.rows(), b.cols());
  return q * (q.transpose() * x);
}

double sq(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return s;
}

}  // namespace

double capped_db(double num, double den) {
  if (den <= 0.0) return kDbCap;
  if (num <= 0.0) return -kDbCap;
  return std::clamp(10.0 * std::log10(num / den), -kDbCap, kDbCap);
}

Decomposition decompose(const std::vector<double>& estimate, const std::vector<std::vector<double>>& refs,
                        std::size_t index, std::size_t filter_len) {
  if (filter_len == 0) throw std::invalid_argument("bss_eval: filter_len must be >= 1");
  if (index >= refs.size()) throw std::invalid_argument("bss_eval: source index out of range");
  const std::size_t len = estimate.size() + filter_len - 1;
  for (std::size_t j = 0; j < refs.size(); ++j) {
    if (refs[j].size() != estimate.size()) throw std::invalid_argument("bss_eval: length mismatch");
    if (sq(refs[j]) == 0.0) throw std::invalid_argument("bss_eval: zero-energy reference " + std::to_string(j));
  }
  Vector e = Vector::Zero(static_cast<Eigen::Index>(len));
  for (std::size_t n = 0; n < estimate.size(); ++n) e(static_cast<Eigen::Index>(n)) = estimate[n];
  std::vector<std::size_t> all(refs.size());
  for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
  const Vector target = project(basis(refs, {index}, len, filter_len), e);
  const Vector both = project(basis(refs, all, len, filter_len), e);
  Decomposition d;
  d.s_target.assign(target.data(), target.data() + len);
  d.e_interf.resize(len);
  d.e_artif.resize(len);
  for (std::size_t n = 0; n < len; ++n) {
    const auto i = static_cast<Eigen::Index>(n);
    d.e_interf[n] = both(i) - target(i);
    d.e_artif[n] = e(i) - both(i);
  }
  return d;
}

EvalResult score(const Decomposition& d) {
  const std::size_t len = d.s_target.size();
  std::vector<double> noise(len), signal(len);
  for (std::size_t n = 0; n < len; ++n) {
    noise[n] = d.e_interf[n] + d.e_artif[n];
    signal[n] = d.s_target[n] + d.e_interf[n];
  }
  const double t = sq(d.s_target);
  return {capped_db(t, sq(noise)), capped_db(t, sq(d.e_interf)), capped_db(sq(signal), sq(d.e_artif))};
}

std::vector<EvalResult> bss_eval(const std::vector<dsp::Waveform>& estimates,
                                 const std::vector<dsp::Waveform>& references, std::size_t filter_len) {
  if (estimates.size() != references.size() || references.empty())
    throw std::invalid_argument("bss_eval: need one estimate per reference");
  std::vector<std::vector<double>> refs;
  for (const auto& r : references) refs.push_back(r.samples);
  std::vector<EvalResult> out;
  for (std::size_t i = 0; i < estimates.size(); ++i) out.push_back(score(decompose(estimates[i].samples, refs, i, filter_len)));
  return out;
}

std::vector<EvalResult> mixture_baseline(const dsp::Waveform& mixture, const std::vector<dsp::Waveform>& references,
                                         std::size_t filter_len) {
  return bss_eval(std::vector<dsp::Waveform>(references.size(), mixture), references, filter_len);
}

}  // namespace tribert::eval
