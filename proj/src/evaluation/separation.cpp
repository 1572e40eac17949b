#include "tribert/evaluation/separation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "tribert/numerics/random.hpp"

namespace tribert::eval {

std::vector<synth::MixPair> evaluation_pairs(const synth::Dataset& ds, std::size_t count, std::uint64_t seed,
                                             double multi_source_fraction) {
  const auto pool = ds.split_indices("test");
  bool have_duets = false;
  for (auto i : pool) have_duets = have_duets || ds.scenes[i].scene.duet();
  const auto multi = have_duets ? static_cast<std::size_t>(std::lround(multi_source_fraction * count)) : 0;
  std::vector<synth::MixPair> pairs;
  for (std::size_t i = 0; i < count; ++i)
    pairs.push_back(synth::sample_mix_pair(ds, pool, hash_combine(seed, i), i < multi));
  return pairs;
}

std::string pair_id(const synth::Dataset& ds, const synth::MixPair& p) {
  return ds.scenes.at(p.scene_a).id + "+" + ds.scenes.at(p.scene_b).id;
}

std::vector<dsp::Waveform> reconstruct_sources(const synth::MixPair& pair, const std::vector<Tensor>& masks,
                                               const dsp::AudioProfile& profile) {
  if (masks.size() != pair.sources.size())
    throw std::invalid_argument("expected " + std::to_string(pair.sources.size()) + " masks, got " +
                                std::to_string(masks.size()));
  const dsp::Spectrogram spec = dsp::stft(pair.mixture, profile.window_len, profile.hop);
  std::vector<dsp::Waveform> out;
  for (const auto& m : masks) {
    dsp::Waveform w = dsp::apply_mask_and_reconstruct(m, spec);
    w.samples.resize(pair.mixture.size(), 0.0);
    out.push_back(std::move(w));
  }
  return out;
}

MetricSummary summarize(std::vector<double> v) {
  MetricSummary s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return s;
}

SeparationReport evaluate_separation(const synth::Dataset& ds, const std::vector<synth::MixPair>& pairs,
                                     const dsp::AudioProfile& profile, const MaskProvider& masks, std::size_t jobs) {
  std::vector<std::vector<SourceRow>> per_pair(pairs.size());
  std::vector<std::string> errors(pairs.size());
  auto work = [&](std::size_t i) {
    try {
      const auto& p = pairs[i];
      const auto est = reconstruct_sources(p, masks(p), profile);
      const auto scores = bss_eval(est, p.sources);
      const auto base = mixture_baseline(p.mixture, p.sources);
      for (std::size_t s = 0; s < scores.size(); ++s)
        per_pair[i].push_back({pair_id(ds, p), s, scores[s].sdr_db, scores[s].sir_db, scores[s].sar_db, base[s].sdr_db});
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, pairs.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < pairs.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next++) < pairs.size();) work(i);
      });
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (!errors[i].empty()) throw std::runtime_error("pair " + std::to_string(i) + ": " + errors[i]);

  SeparationReport r;
  r.pairs = pairs.size();
  std::vector<double> sdr, sir, sar, base;
  for (auto& rows : per_pair)
    for (auto& row : rows) {
      sdr.push_back(row.sdr);
      sir.push_back(row.sir);
      sar.push_back(row.sar);
      base.push_back(row.baseline_sdr);
      r.rows.push_back(std::move(row));
    }
  r.sdr = summarize(sdr);
  r.sir = summarize(sir);
  r.sar = summarize(sar);
  r.baseline_sdr = summarize(base);
  return r;
}

void write_report_csv(const std::filesystem::path& path, const SeparationReport& r) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "# bss_eval with zero-lag projections (filter_len=1); absolute values are not comparable to 512-tap mir_eval\n";
  f << "pair_id,source_idx,sdr,sir,sar,baseline_sdr\n";
  f.precision(10);
  for (const auto& row : r.rows)
    f << row.pair_id << ',' << row.source_idx << ',' << row.sdr << ',' << row.sir << ',' << row.sar << ','
      << row.baseline_sdr << '\n';
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

void write_report_json(const std::filesystem::path& path, const SeparationReport& r, const std::string& config_hash) {
  auto m = [](const MetricSummary& s) { return nlohmann::json{{"mean", s.mean}, {"median", s.median}}; };
  nlohmann::json j{{"pairs", r.pairs},
                   {"sources", r.rows.size()},
                   {"sdr", m(r.sdr)},
                   {"sir", m(r.sir)},
                   {"sar", m(r.sar)},
                   {"baseline_sdr", m(r.baseline_sdr)},
                   {"sdr_gain_over_baseline", r.sdr_gain()},
                   {"filter_len", 1},
                   {"config_hash", config_hash}};
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

double average_precision(const std::vector<double>& scores, const std::vector<bool>& positives) {
  if (scores.size() != positives.size()) throw std::invalid_argument("average_precision: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double hits = 0, sum = 0;
  for (std::size_t k = 0; k < order.size(); ++k)
    if (positives[order[k]]) {
      hits += 1;
      sum += hits / static_cast<double>(k + 1);
    }
  if (hits == 0) throw std::invalid_argument("average_precision: no positives");
  return sum / hits;
}

double mean_average_precision(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::vector<bool>>& labels) {
  if (scores.empty() || scores.size() != labels.size()) throw std::invalid_argument("mean_average_precision: sizes");
  const std::size_t C = scores[0].size();
  double total = 0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> s;
    std::vector<bool> l;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      s.push_back(scores[i].at(c));
      l.push_back(labels[i].at(c));
    }
    if (std::find(l.begin(), l.end(), true) == l.end()) continue;
    total += average_precision(s, l);
    ++used;
  }
  if (!used) throw std::invalid_argument("mean_average_precision: no class has a positive");
  return total / static_cast<double>(used);
}

}  // namespace tribert::eval
