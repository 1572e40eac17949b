#include "oracles.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tribert::testing {
namespace {

// Solves G a = r for symmetric positive definite G by partial-pivot elimination.
std::vector<double> solve(std::vector<std::vector<double>> g, std::vector<double> r) {
  const std::size_t k = r.size();
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t piv = c;
    for (std::size_t i = c + 1; i < k; ++i)
      if (std::abs(g[i][c]) > std::abs(g[piv][c])) piv = i;
    std::swap(g[c], g[piv]);
    std::swap(r[c], r[piv]);
    for (std::size_t i = c + 1; i < k; ++i) {
      const double f = g[i][c] / g[c][c];
      for (std::size_t j = c; j < k; ++j) g[i][j] -= f * g[c][j];
      r[i] -= f * r[c];
    }
  }
  std::vector<double> a(k);
  for (std::size_t c = k; c-- > 0;) {
    double s = r[c];
    for (std::size_t j = c + 1; j < k; ++j) s -= g[c][j] * a[j];
    a[c] = s / g[c][c];
  }
  return a;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> project(const std::vector<std::vector<double>>& basis, const std::vector<double>& x) {
  const std::size_t k = basis.size();
  std::vector<std::vector<double>> g(k, std::vector<double>(k));
  std::vector<double> r(k);
  for (std::size_t i = 0; i < k; ++i) {
    r[i] = dot(basis[i], x);
    for (std::size_t j = 0; j < k; ++j) g[i][j] = dot(basis[i], basis[j]);
  }
  const auto a = solve(g, r);
  std::vector<double> p(x.size(), 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t n = 0; n < x.size(); ++n) p[n] += a[i] * basis[i][n];
  return p;
}

double db(double num, double den) {
  if (den <= 0) return 100.0;
  if (num <= 0) return -100.0;
  return std::fmin(100.0, std::fmax(-100.0, 10.0 * std::log10(num / den)));
}

}  // namespace

std::vector<std::complex<double>> brute_force_dft(const std::vector<double>& x, std::size_t offset, std::size_t n) {
  std::vector<std::complex<double>> out(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
      acc += x[offset + i] * w * std::polar(1.0, -2.0 * std::numbers::pi * double(k) * double(i) / n);
    }
    out[k] = acc;
  }
  return out;
}

double snr_db(const std::vector<double>& ref, const std::vector<double>& est, std::size_t from, std::size_t to) {
  double s = 0, e = 0;
  for (std::size_t i = from; i < to; ++i) {
    s += ref[i] * ref[i];
    e += (ref[i] - est[i]) * (ref[i] - est[i]);
  }
  return 10.0 * std::log10(s / e);
}

std::vector<eval::EvalResult> normal_equation_bss(const std::vector<std::vector<double>>& estimates,
                                                  const std::vector<std::vector<double>>& references) {
  std::vector<eval::EvalResult> out;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    const auto& e = estimates[i];
    const auto target = project({references[i]}, e);
    const auto both = project(references, e);
    double t = 0, interf = 0, artif = 0, noise = 0, sig = 0;
    for (std::size_t n = 0; n < e.size(); ++n) {
      const double ei = both[n] - target[n], ea = e[n] - both[n];
      t += target[n] * target[n];
      interf += ei * ei;
      artif += ea * ea;
      noise += (ei + ea) * (ei + ea);
      sig += both[n] * both[n];
    }
    out.push_back({db(t, noise), db(t, interf), db(sig, artif)});
  }
  return out;
}

dsp::Waveform sine(double freq, double amp, std::size_t n, int rate, double phase) {
  dsp::Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * i / rate + phase);
  return w;
}

}  // namespace tribert::testing
