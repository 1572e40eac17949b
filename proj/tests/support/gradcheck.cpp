#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace tribert::testing {
namespace {

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max_coords, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (max_coords == 0 || max_coords >= n) return idx;
  for (std::size_t i = 0; i < max_coords; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(max_coords);
  return idx;
}

double error_floor(const std::vector<Tensor>& analytic) {
  double amax = 0.0;
  for (const auto& t : analytic)
    for (double v : t.data) amax = std::max(amax, std::abs(v));
  return 1e-4 * amax + 1e-10;
}

void score(const Tensor& analytic, const std::vector<std::size_t>& coords, const std::vector<double>& numeric,
           double floor, const std::string& label, GradCheckResult& r) {
  for (std::size_t c = 0; c < coords.size(); ++c) {
    const double a = analytic.data[coords[c]], n = numeric[c];
    const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
    ++r.coords_checked;
    if (err > r.max_rel_error) {
      r.max_rel_error = err;
      std::ostringstream os;
      os << label << ", index " << coords[c] << ": analytic " << a << " vs numeric " << n;
      r.worst = os.str();
    }
  }
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double eps,
                           std::size_t max_coords, std::uint64_t seed) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.input(t, true));
    Var loss = fn(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape tape(false);
    std::vector<Var> vars;
    for (const auto& t : xs) vars.push_back(tape.constant(t));
    return fn(tape, vars).value().data[0];
  };
  GradCheckResult r;
  Rng rng(seed);
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto coords = pick_coords(inputs[k].size(), max_coords, rng);
    std::vector<double> numeric;
    for (auto i : coords) {
      const double x0 = work[k].data[i];
      work[k].data[i] = x0 + eps;
      const double fp = eval(work);
      work[k].data[i] = x0 - eps;
      const double fm = eval(work);
      work[k].data[i] = x0;
      numeric.push_back((fp - fm) / (2.0 * eps));
    }
    score(analytic[k], coords, numeric, error_floor(analytic), "input " + std::to_string(k), r);
  }
  return r;
}

GradCheckResult grad_check_params(const std::function<Var(Tape&)>& fn, ParameterStore& store,
                                  const std::vector<std::string>& names, double eps, std::size_t max_coords,
                                  std::uint64_t seed) {
  store.zero_grad();
  {
    Tape tape;
    Var loss = fn(tape);
    tape.backward(loss);
  }
  std::vector<Tensor> analytic;
  for (const auto& n : names) analytic.push_back(store.at(n).grad);
  auto eval = [&] {
    Tape tape(false);
    return fn(tape).value().data[0];
  };
  GradCheckResult r;
  Rng rng(seed);
  for (std::size_t k = 0; k < names.size(); ++k) {
    Tensor& w = store.at(names[k]).value;
    const auto coords = pick_coords(w.size(), max_coords, rng);
    std::vector<double> numeric;
    for (auto i : coords) {
      const double x0 = w.data[i];
      w.data[i] = x0 + eps;
      const double fp = eval();
      w.data[i] = x0 - eps;
      const double fm = eval();
      w.data[i] = x0;
      numeric.push_back((fp - fm) / (2.0 * eps));
    }
    score(analytic[k], coords, numeric, error_floor(analytic), names[k], r);
  }
  return r;
}

Var projection_loss(Var y, std::uint64_t seed) {
  Rng rng(seed);
  Var r = y.tape().constant(rng.uniform_tensor(y.shape(), -1.0, 1.0));
  return sum(mul(y, r));
}

}  // namespace tribert::testing
