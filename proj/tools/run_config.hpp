#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tribert/model_config.hpp"
#include "tribert/synthdata/synthdata.hpp"

namespace tribert::cli {

struct TrainSettings {
  std::size_t steps = 2000;
  std::size_t batch = 1;
  double lr = 5e-4;
  double multi_source_fraction = 0.2;
  std::size_t checkpoint_every = 500;
};

struct EvalSettings {
  std::size_t pairs = 20;
  double multi_source_fraction = 0.0;
  std::size_t jobs = 1;
  bool binary = false;
};

struct RetrieveSettings {
  std::size_t epochs = 150;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::size_t d_r = 64;
  std::string variants = "a2v,v2a,a2p,p2a,va2p";
  std::string sources = "post_transformer,pre_transformer";
  std::size_t jobs = 1;
};

/// Everything a command needs, as flat `section.key` entries.
struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 1;
  std::string dataset, out;
  synth::SynthConfig synth;
  ModelConfig model;
  TrainSettings train;
  EvalSettings eval;
  RetrieveSettings retrieve;

  static RunConfig defaults(const std::string& profile);

  /// Throws std::invalid_argument for unknown keys or malformed values.
  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> entries() const;

  /// INI text with one section per prefix; reading it back gives the same config.
  std::string to_ini() const;
  /// FNV-1a of to_ini().
  std::string hash() const;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Flat `section.key` pairs from strict INI text.
Overrides parse_ini(const std::string& text, const std::string& origin);

/// defaults(profile) <- config file <- TRIB_SEED <- flag overrides; the
/// profile itself may come from the file or the flags.
RunConfig resolve_config(const std::filesystem::path& file, const Overrides& flags, const char* env_seed);

void write_snapshot(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace tribert::cli
