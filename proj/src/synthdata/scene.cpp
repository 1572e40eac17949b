#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "tribert/numerics/random.hpp"
#include "tribert/synthdata/synthdata.hpp"

namespace tribert::synth {
namespace {

constexpr double kPersonHeight = 22.0;
constexpr double kHandCircleHz = 6.0;
constexpr double kHandAmplitude = 2.0;

bool inside(GlyphShape shape, double dx, double dy, double s) {
  const double ax = std::abs(dx), ay = std::abs(dy), r2 = dx * dx + dy * dy;
  switch (shape) {
    case GlyphShape::square: return ax <= s && ay <= s;
    case GlyphShape::disc: return r2 <= s * s;
    case GlyphShape::triangle: return dy >= -s && dy <= s && ax <= (dy + s) / 2.0;
    case GlyphShape::diamond: return ax + ay <= s;
    case GlyphShape::cross: return (ax <= s / 3 && ay <= s) || (ay <= s / 3 && ax <= s);
    case GlyphShape::ring: return r2 <= s * s && r2 >= s * s / 4.0;
    case GlyphShape::bar: return ax <= s && ay <= s / 3;
    case GlyphShape::saltire: return std::abs(ax - ay) <= s / 3 && ax <= s && ay <= s;
  }
  return false;
}

struct GlyphPlacement {
  double cx, cy, half;
};

}  // namespace

std::size_t pose_frames(const SynthConfig& cfg) {
  return static_cast<std::size_t>(std::floor(cfg.profile.duration_s() * cfg.pose_fps));
}

SceneSample synth_scene(const std::vector<std::size_t>& class_ids, std::uint64_t seed, const SynthConfig& cfg) {
  if (class_ids.empty() || class_ids.size() > 2)
    throw std::invalid_argument("synth_scene: a scene holds 1 or 2 classes, got " + std::to_string(class_ids.size()));
  for (auto c : class_ids)
    if (c >= cfg.classes) throw std::invalid_argument("synth_scene: class id " + std::to_string(c) + " out of range");
  SceneSample s;
  s.seed = seed;
  s.classes = class_ids;
  std::sort(s.classes.begin(), s.classes.end());
  if (s.classes.size() == 2 && s.classes[0] == s.classes[1])
    throw std::invalid_argument("synth_scene: duplicate class id");
  const auto table = instrument_table(cfg.classes);
  const auto& prof = cfg.profile;

  s.audio.sample_rate = prof.sample_rate;
  s.audio.samples.assign(prof.num_samples, 0.0);
  for (std::size_t k = 0; k < s.classes.size(); ++k) {
    const auto& spec = table[s.classes[k]];
    const std::uint64_t stem_seed = hash_combine(seed, 100 + k);
    s.draws.push_back(draw_instrument(spec, stem_seed));
    s.stems.push_back(synth_instrument(spec, stem_seed, prof.num_samples, prof.sample_rate, prof.window_len));
    for (std::size_t n = 0; n < prof.num_samples; ++n) s.audio.samples[n] += s.stems.back().samples[n];
  }

  // Frames: textured background, one glyph per class, sized by the fundamental.
  const std::size_t W = cfg.frame_size, H = cfg.frame_size;
  const double scale = static_cast<double>(W) / 64.0;
  Rng layout(hash_combine(seed, 7));
  std::vector<GlyphPlacement> glyphs;
  for (std::size_t k = 0; k < s.classes.size(); ++k) {
    const auto& spec = table[s.classes[k]];
    const double u = (s.draws[k].f0 - spec.f_lo) / (spec.f_hi - spec.f_lo);
    double x_lo = 16, x_hi = 48;
    if (s.classes.size() == 2) {
      x_lo = k == 0 ? 12 : 38;
      x_hi = k == 0 ? 26 : 52;
    }
    glyphs.push_back({layout.uniform(x_lo, x_hi) * scale, layout.uniform(14, 40) * scale, (5.0 + 4.0 * u) * scale});
  }
  const double base = layout.uniform(30, 70);
  const double fx = layout.uniform(0.1, 0.4), fy = layout.uniform(0.1, 0.4), ph = layout.uniform(0, 6.28);
  std::array<double, 3> tint{};
  for (auto& t : tint) t = layout.uniform(-8, 8);
  std::vector<double> texture(H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      texture[y * W + x] = base + 12.0 * std::sin(fx * x + fy * y + ph) + layout.uniform(-6, 6);
  for (std::size_t f = 0; f < kFramesPerScene; ++f) {
    RgbImage& img = s.frames[f];
    img.width = W;
    img.height = H;
    img.planes.assign(3 * H * W, 0);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < H * W; ++i)
        img.planes[c * H * W + i] = static_cast<std::uint8_t>(std::clamp(std::lround(texture[i] + tint[c]), 0L, 255L));
    for (std::size_t k = 0; k < glyphs.size(); ++k) {
      const auto& spec = table[s.classes[k]];
      const double jx = static_cast<double>(layout.index(3)) - 1.0, jy = static_cast<double>(layout.index(3)) - 1.0;
      const auto& g = glyphs[k];
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          if (inside(spec.glyph, x - g.cx - jx, y - g.cy - jy, g.half))
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = spec.color[c];
    }
  }

  // Pose: a performer standing at the first glyph; each hand circles at a
  // fixed rate with radius following its instrument's envelope.
  const std::size_t T = pose_frames(cfg);
  s.pose = Tensor({T, kJoints, 3});
  Rng motion(hash_combine(seed, 11));
  const double ax = glyphs[0].cx + motion.uniform(-2, 2) * scale;
  const double ay = glyphs[0].cy + (6.0 + motion.uniform(-2, 2)) * scale;
  const double sway_phase = motion.uniform(0, 6.28);
  const auto& rest = rest_pose();
  auto hand_group = [](std::size_t wrist, std::size_t root) {
    std::vector<std::pair<std::size_t, double>> g{{wrist, 1.0}, {wrist == kRightWrist ? kRightElbow : kLeftElbow, 0.5}};
    for (std::size_t j = 0; j < kHandJoints; ++j) g.emplace_back(root + j, 1.0);
    return g;
  };
  const auto right = hand_group(kRightWrist, kRightHandRoot), left = hand_group(kLeftWrist, kLeftHandRoot);
  for (std::size_t t = 0; t < T; ++t) {
    const double time = static_cast<double>(t) / cfg.pose_fps;
    std::vector<std::array<double, 2>> p(kJoints);
    const double sway = 0.5 * scale * std::sin(2.0 * std::numbers::pi * 0.4 * time + sway_phase);
    for (std::size_t j = 0; j < kJoints; ++j)
      p[j] = {ax + kPersonHeight * scale * rest[j][0] + sway, ay + kPersonHeight * scale * rest[j][1]};
    for (std::size_t k = 0; k < s.classes.size(); ++k) {
      const double amp = kHandAmplitude * scale * (1.0 + static_cast<double>(s.classes[k] % 2));
      const double r = amp * envelope(s.draws[k], time);
      const double ang = 2.0 * std::numbers::pi * kHandCircleHz * time;
      for (const auto& [j, wgt] : (k == 0 ? right : left)) {
        p[j][0] += wgt * r * std::cos(ang);
        p[j][1] += wgt * r * std::sin(ang);
      }
    }
    for (std::size_t j = 0; j < kJoints; ++j) {
      s.pose.at(t, j, 0) = p[j][0] + 0.15 * motion.normal();
      s.pose.at(t, j, 1) = p[j][1] + 0.15 * motion.normal();
      s.pose.at(t, j, 2) = motion.uniform(0.85, 1.0);
    }
  }

  s.labels = Tensor({cfg.classes});
  for (auto c : s.classes) s.labels[c] = 1.0;
  return s;
}

}  // namespace tribert::synth
