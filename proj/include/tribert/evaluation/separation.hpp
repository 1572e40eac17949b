#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tribert/evaluation/bss_eval.hpp"
#include "tribert/synthdata/synthdata.hpp"

namespace tribert::eval {

struct SourceRow {
  std::string pair_id;
  std::size_t source_idx = 0;
  double sdr = 0, sir = 0, sar = 0, baseline_sdr = 0;
};

struct MetricSummary {
  double mean = 0, median = 0;
};

struct SeparationReport {
  std::vector<SourceRow> rows;
  std::size_t pairs = 0;
  MetricSummary sdr, sir, sar, baseline_sdr;
  double sdr_gain() const { return sdr.mean - baseline_sdr.mean; }
};

/// Warped-geometry masks in [0, 1], one per pair source in pair order.
using MaskProvider = std::function<std::vector<Tensor>(const synth::MixPair&)>;

/// Deterministic evaluation pairs drawn from the test split; a fraction of
/// them (rounded) use a duet as the first scene when the split has duets.
std::vector<synth::MixPair> evaluation_pairs(const synth::Dataset& ds, std::size_t count, std::uint64_t seed,
                                             double multi_source_fraction = 0.0);

std::string pair_id(const synth::Dataset& ds, const synth::MixPair& p);

/// Mask, reconstruct, score against the clean sources, and compare with the
/// mixture baseline. `jobs` > 1 scores pairs concurrently; rows keep pair order.
SeparationReport evaluate_separation(const synth::Dataset& ds, const std::vector<synth::MixPair>& pairs,
                                     const dsp::AudioProfile& profile, const MaskProvider& masks,
                                     std::size_t jobs = 1);

/// Reconstructed source estimates for one pair.
std::vector<dsp::Waveform> reconstruct_sources(const synth::MixPair& pair, const std::vector<Tensor>& masks,
                                               const dsp::AudioProfile& profile);

MetricSummary summarize(std::vector<double> values);

/// CSV: pair_id, source_idx, sdr, sir, sar, baseline_sdr (header comment first).
void write_report_csv(const std::filesystem::path& path, const SeparationReport& r);
/// Means and medians plus a caller-supplied config hash.
void write_report_json(const std::filesystem::path& path, const SeparationReport& r, const std::string& config_hash);

/// Non-interpolated average precision of one class (mean precision at each positive).
double average_precision(const std::vector<double>& scores, const std::vector<bool>& positives);
/// Mean over classes with at least one positive; scores/labels are N×C.
double mean_average_precision(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<bool>>& labels);

}  // namespace tribert::eval
