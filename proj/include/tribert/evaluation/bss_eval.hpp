#pragma once

#include <vector>

#include "tribert/dsp/signal.hpp"

namespace tribert::eval {

inline constexpr double kDbCap = 100.0;

struct EvalResult {
  double sdr_db = 0, sir_db = 0, sar_db = 0;
};

/// Projection decomposition of one estimate.
struct Decomposition {
  std::vector<double> s_target, e_interf, e_artif;
};

/// Estimate i is scored against reference i. `filter_len` > 1 lets each
/// reference contribute filter_len delayed copies to its span; signals are then
/// zero-extended by filter_len - 1 samples.
std::vector<EvalResult> bss_eval(const std::vector<dsp::Waveform>& estimates,
                                 const std::vector<dsp::Waveform>& references, std::size_t filter_len = 1);

Decomposition decompose(const std::vector<double>& estimate, const std::vector<std::vector<double>>& references,
                        std::size_t index, std::size_t filter_len = 1);

/// 10·log10(num/den) clamped to ±kDbCap; den == 0 gives +cap.
double capped_db(double num, double den);

EvalResult score(const Decomposition& d);

/// Every estimate is the mixture itself.
std::vector<EvalResult> mixture_baseline(const dsp::Waveform& mixture, const std::vector<dsp::Waveform>& references,
                                         std::size_t filter_len = 1);

}  // namespace tribert::eval
