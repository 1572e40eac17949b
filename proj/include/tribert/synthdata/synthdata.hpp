#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tribert/dsp/io.hpp"
#include "tribert/dsp/signal.hpp"
#include "tribert/numerics/tensor.hpp"
#include "tribert/synthdata/skeleton.hpp"

namespace tribert::synth {

inline constexpr std::size_t kMaxClasses = 8;
inline constexpr std::size_t kFramesPerScene = 3;

enum class GlyphShape { square, disc, triangle, diamond, cross, ring, bar, saltire };

struct InstrumentSpec {
  std::size_t class_id = 0;
  double f_lo = 110, f_hi = 126.5;             // fundamental range, Hz
  std::vector<double> harmonic_weights;        // sums to 1
  double env_lo = 2.0, env_hi = 2.5;           // amplitude-modulation rate range, Hz
  GlyphShape glyph = GlyphShape::square;
  std::array<std::uint8_t, 3> color{};
};

/// Class-disjoint instrument table for `classes` ≤ 8 classes.
std::vector<InstrumentSpec> instrument_table(std::size_t classes);

/// Seeded draw of the per-clip instrument parameters.
struct InstrumentDraw {
  double f0 = 0, env_rate = 0, env_phase = 0;
  std::vector<double> harmonic_phases;
};
InstrumentDraw draw_instrument(const InstrumentSpec& spec, std::uint64_t seed);

/// Amplitude envelope shared by audio and pose: 0.6 + 0.4 sin(2π r t + φ).
double envelope(const InstrumentDraw& d, double t);

/// Harmonic stack × envelope plus a -40 dB noise floor, on the 16-bit grid.
dsp::Waveform synth_instrument(const InstrumentSpec& spec, std::uint64_t seed, std::size_t num_samples,
                               int sample_rate = 11025, std::size_t min_samples = 510);

struct RgbImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> planes;  // 3 planes of height×width, R then G then B

  std::uint8_t& at(std::size_t c, std::size_t y, std::size_t x) { return planes[(c * height + y) * width + x]; }
  std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const { return planes[(c * height + y) * width + x]; }
  bool operator==(const RgbImage&) const = default;
};

struct SynthConfig {
  std::size_t classes = 4;
  std::size_t num_scenes = 250;
  double train_fraction = 0.8;
  double duet_probability = 0.2;
  std::size_t frame_size = 64;
  double pose_fps = 30.0;
  std::uint64_t seed = 1;
  dsp::AudioProfile profile = dsp::AudioProfile::desk();
};

struct SceneSample {
  std::vector<std::size_t> classes;          // ascending, 1 or 2 entries
  std::vector<InstrumentDraw> draws;         // one per class
  dsp::Waveform audio;                       // sum of stems
  std::vector<dsp::Waveform> stems;          // one per class
  std::array<RgbImage, kFramesPerScene> frames;
  Tensor pose;                               // T_p × 68 × (x, y, confidence)
  Tensor labels;                             // multi-hot, length C
  std::uint64_t seed = 0;

  bool duet() const { return classes.size() == 2; }
};

std::size_t pose_frames(const SynthConfig& cfg);

SceneSample synth_scene(const std::vector<std::size_t>& class_ids, std::uint64_t seed, const SynthConfig& cfg);

struct SceneRecord {
  std::string id;
  std::string split;  // "train" or "test"
  SceneSample scene;
};

struct Dataset {
  SynthConfig config;
  std::vector<SceneRecord> scenes;

  std::vector<std::size_t> split_indices(const std::string& split) const;
};

/// Pure function of the config: scene i gets seed hash(cfg.seed, i) and the
/// first round(num_scenes · train_fraction) scenes form the train split.
Dataset generate_dataset(const SynthConfig& cfg);

/// `<root>/dataset.json`, `<root>/manifest.jsonl`, `<root>/scenes/<id>/...`.
void save_dataset(const Dataset& ds, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root);

std::string fnv1a_hex(const std::filesystem::path& file);

/// Three frame planes stacked vertically into one 3H×W gray image.
dsp::GrayImage stack_planes(const RgbImage& img);
RgbImage unstack_planes(const dsp::GrayImage& img);

void write_pose_csv(const std::filesystem::path& path, const Tensor& pose);
Tensor read_pose_csv(const std::filesystem::path& path, std::size_t frames);

struct MixPair {
  std::size_t scene_a = 0, scene_b = 0;            // indices into the dataset
  std::vector<dsp::Waveform> sources;              // scene_a's sources (class order), then scene_b's
  std::vector<std::size_t> source_class;
  std::vector<std::size_t> source_scene;           // scene index owning each source
  dsp::Waveform mixture;
  std::vector<Tensor> gt_masks;                    // warped geometry, one per source
};

/// Draws scene_a (a duet when `multi_source`, otherwise a solo) and a solo
/// scene_b whose class differs from all of scene_a's, from `pool`.
MixPair sample_mix_pair(const Dataset& ds, const std::vector<std::size_t>& pool, std::uint64_t seed,
                        bool multi_source);

/// Builds mixture and masks for a fixed scene pair.
MixPair make_mix_pair(const Dataset& ds, std::size_t a, std::size_t b, bool multi_source);

}  // namespace tribert::synth
