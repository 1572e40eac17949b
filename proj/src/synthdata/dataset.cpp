#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "tribert/numerics/random.hpp"
#include "tribert/synthdata/synthdata.hpp"

namespace tribert::synth {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string scene_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%04zu", i);
  return buf;
}

json config_json(const SynthConfig& c) {
  const auto& p = c.profile;
  return {{"classes", c.classes},
          {"num_scenes", c.num_scenes},
          {"train_fraction", c.train_fraction},
          {"duet_probability", c.duet_probability},
          {"frame_size", c.frame_size},
          {"pose_fps", c.pose_fps},
          {"seed", c.seed},
          {"profile",
           {{"sample_rate", p.sample_rate},
            {"window_len", p.window_len},
            {"hop", p.hop},
            {"rows", p.rows},
            {"cols", p.cols},
            {"num_samples", p.num_samples}}}};
}

SynthConfig config_from_json(const json& j) {
  SynthConfig c;
  c.classes = j.at("classes");
  c.num_scenes = j.at("num_scenes");
  c.train_fraction = j.at("train_fraction");
  c.duet_probability = j.at("duet_probability");
  c.frame_size = j.at("frame_size");
  c.pose_fps = j.at("pose_fps");
  c.seed = j.at("seed");
  const auto& p = j.at("profile");
  c.profile.sample_rate = p.at("sample_rate");
  c.profile.window_len = p.at("window_len");
  c.profile.hop = p.at("hop");
  c.profile.rows = p.at("rows");
  c.profile.cols = p.at("cols");
  c.profile.num_samples = p.at("num_samples");
  return c;
}

}  // namespace

std::vector<std::size_t> Dataset::split_indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    if (scenes[i].split == split) out.push_back(i);
  return out;
}

Dataset generate_dataset(const SynthConfig& cfg) {
  if (cfg.classes < 2 || cfg.classes > kMaxClasses) throw std::invalid_argument("generate_dataset: classes must be in 2..8");
  Dataset ds;
  ds.config = cfg;
  const auto n_train = static_cast<std::size_t>(std::lround(cfg.num_scenes * cfg.train_fraction));
  for (std::size_t i = 0; i < cfg.num_scenes; ++i) {
    const std::uint64_t seed = hash_combine(cfg.seed, i);
    Rng rng(hash_combine(seed, 3));
    std::vector<std::size_t> classes{i % cfg.classes};
    if (rng.bernoulli(cfg.duet_probability)) classes.push_back((classes[0] + 1 + rng.index(cfg.classes - 1)) % cfg.classes);
    ds.scenes.push_back({scene_id(i), i < n_train ? "train" : "test", synth_scene(classes, seed, cfg)});
  }
  return ds;
}

std::string fnv1a_hex(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error(file.string() + ": cannot open");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<std::uint8_t>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

dsp::GrayImage stack_planes(const RgbImage& img) { return {img.width, 3 * img.height, img.planes}; }

RgbImage unstack_planes(const dsp::GrayImage& img) {
  if (img.height % 3 != 0) throw std::runtime_error("frame image height is not a multiple of 3");
  return {img.width, img.height / 3, img.pixels};
}

void write_pose_csv(const fs::path& path, const Tensor& pose) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os << "frame_index,joint_index,x,y,confidence\n" << std::setprecision(17);
  for (std::size_t t = 0; t < pose.dim(0); ++t)
    for (std::size_t j = 0; j < pose.dim(1); ++j)
      os << t << ',' << j << ',' << pose.at(t, j, 0) << ',' << pose.at(t, j, 1) << ',' << pose.at(t, j, 2) << '\n';
}

Tensor read_pose_csv(const fs::path& path, std::size_t frames) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  Tensor pose({frames, kJoints, 3});
  std::vector<bool> seen(frames * kJoints, false);
  std::string line;
  std::getline(in, line);
  if (line != "frame_index,joint_index,x,y,confidence") throw std::runtime_error(path.string() + ": bad header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw std::runtime_error(path.string() + ": expected 5 columns");
    const std::size_t t = std::stoul(cells[0]), j = std::stoul(cells[1]);
    if (t >= frames || j >= kJoints) throw std::runtime_error(path.string() + ": index out of range");
    for (int c = 0; c < 3; ++c) pose.at(t, j, c) = std::stod(cells[2 + c]);
    seen[t * kJoints + j] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw std::runtime_error(path.string() + ": missing joints");
  return pose;
}

void save_dataset(const Dataset& ds, const fs::path& root) {
  fs::create_directories(root / "scenes");
  {
    std::ofstream os(root / "dataset.json");
    os << config_json(ds.config).dump(2) << '\n';
  }
  std::ofstream manifest(root / "manifest.jsonl");
  if (!manifest) throw std::runtime_error((root / "manifest.jsonl").string() + ": cannot open for writing");
  for (const auto& rec : ds.scenes) {
    const auto& s = rec.scene;
    const fs::path rel = fs::path("scenes") / rec.id;
    fs::create_directories(root / rel);
    json files = json::object();
    auto add = [&](const std::string& key, const std::string& name) {
      files[key] = (rel / name).generic_string();
      return root / rel / name;
    };
    dsp::write_wav(add("audio", "audio.wav"), s.audio);
    if (s.duet())
      for (std::size_t k = 0; k < s.stems.size(); ++k)
        dsp::write_wav(add("stem" + std::to_string(k), "stem" + std::to_string(k) + ".wav"), s.stems[k]);
    for (std::size_t f = 0; f < kFramesPerScene; ++f) {
      const std::string name = "frame" + std::to_string(f);
      dsp::write_pgm(add(name, name + ".pgm"), stack_planes(s.frames[f]));
    }
    write_pose_csv(add("pose", "pose.csv"), s.pose);
    json hashes = json::object();
    for (auto& [key, val] : files.items()) hashes[key] = fnv1a_hex(root / val.get<std::string>());
    json f0 = json::array(), env = json::array();
    for (const auto& d : s.draws) {
      f0.push_back(d.f0);
      env.push_back(d.env_rate);
    }
    const json rec_json = {{"id", rec.id}, {"split", rec.split}, {"seed", s.seed},     {"classes", s.classes},
                           {"f0", f0},     {"env_rate", env},    {"files", files}, {"hashes", hashes}};
    manifest << rec_json.dump() << '\n';
  }
}

Dataset load_dataset(const fs::path& root) {
  Dataset ds;
  {
    std::ifstream in(root / "dataset.json");
    if (!in) throw std::runtime_error((root / "dataset.json").string() + ": cannot open");
    ds.config = config_from_json(json::parse(in));
  }
  const auto& cfg = ds.config;
  const auto table = instrument_table(cfg.classes);
  std::ifstream manifest(root / "manifest.jsonl");
  if (!manifest) throw std::runtime_error((root / "manifest.jsonl").string() + ": cannot open");
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    SceneRecord rec;
    rec.id = j.at("id");
    try {
      rec.split = j.at("split");
      if (rec.split != "train" && rec.split != "test") throw std::runtime_error("unknown split '" + rec.split + "'");
      SceneSample& s = rec.scene;
      s.seed = j.at("seed");
      s.classes = j.at("classes").get<std::vector<std::size_t>>();
      if (s.classes.empty() || s.classes.size() > 2) throw std::runtime_error("scene must hold 1 or 2 classes");
      for (auto c : s.classes)
        if (c >= cfg.classes) throw std::runtime_error("unknown class id " + std::to_string(c));
      if (!std::is_sorted(s.classes.begin(), s.classes.end()) ||
          std::adjacent_find(s.classes.begin(), s.classes.end()) != s.classes.end())
        throw std::runtime_error("class ids must be strictly ascending");
      const auto& files = j.at("files");
      const auto& hashes = j.at("hashes");
      auto path = [&](const std::string& key) {
        const fs::path p = root / files.at(key).get<std::string>();
        if (!fs::exists(p)) throw std::runtime_error("missing file " + p.string());
        if (fnv1a_hex(p) != hashes.at(key).get<std::string>()) throw std::runtime_error("hash mismatch for " + p.string());
        return p;
      };
      auto read_audio = [&](const std::string& key) {
        auto w = dsp::read_wav(path(key));
        if (w.size() != cfg.profile.num_samples)
          throw std::runtime_error(key + " has " + std::to_string(w.size()) + " samples, expected " +
                                   std::to_string(cfg.profile.num_samples));
        if (w.sample_rate != cfg.profile.sample_rate) throw std::runtime_error(key + " sample rate mismatch");
        return w;
      };
      s.audio = read_audio("audio");
      for (std::size_t k = 0; k < s.classes.size(); ++k) {
        const std::uint64_t stem_seed = hash_combine(s.seed, 100 + k);
        s.draws.push_back(draw_instrument(table[s.classes[k]], stem_seed));
      }
      if (s.duet()) {
        for (std::size_t k = 0; k < 2; ++k) s.stems.push_back(read_audio("stem" + std::to_string(k)));
        for (std::size_t n = 0; n < s.audio.size(); ++n)
          if (s.audio.samples[n] != s.stems[0].samples[n] + s.stems[1].samples[n])
            throw std::runtime_error("audio is not the sum of its stems");
      } else {
        s.stems.push_back(s.audio);
      }
      for (std::size_t f = 0; f < kFramesPerScene; ++f) {
        s.frames[f] = unstack_planes(dsp::read_pgm(path("frame" + std::to_string(f))));
        if (s.frames[f].width != cfg.frame_size || s.frames[f].height != cfg.frame_size)
          throw std::runtime_error("frame" + std::to_string(f) + " has the wrong extents");
      }
      s.pose = read_pose_csv(path("pose"), pose_frames(cfg));
      for (std::size_t i = 2; i < s.pose.size(); i += 3)
        if (!(s.pose[i] >= 0.0 && s.pose[i] <= 1.0)) throw std::runtime_error("pose confidence outside [0,1]");
      s.labels = Tensor({cfg.classes});
      for (auto c : s.classes) s.labels[c] = 1.0;
    } catch (const std::exception& e) {
      throw std::runtime_error("scene " + rec.id + ": " + e.what());
    }
    ds.scenes.push_back(std::move(rec));
  }
  return ds;
}

MixPair make_mix_pair(const Dataset& ds, std::size_t a, std::size_t b, bool multi_source) {
  if (a >= ds.scenes.size() || b >= ds.scenes.size() || a == b)
    throw std::invalid_argument("make_mix_pair: need two distinct scene indices");
  const auto& sa = ds.scenes[a].scene;
  const auto& sb = ds.scenes[b].scene;
  if (sb.duet()) throw std::invalid_argument("make_mix_pair: scene_b must be a solo scene");
  if (multi_source != sa.duet())
    throw std::invalid_argument(multi_source ? "make_mix_pair: multi-source pairs need a duet scene_a"
                                             : "make_mix_pair: single-source pairs need a solo scene_a");
  for (auto c : sa.classes)
    if (c == sb.classes[0]) throw std::invalid_argument("make_mix_pair: scenes share a class");
  MixPair p;
  p.scene_a = a;
  p.scene_b = b;
  for (std::size_t k = 0; k < sa.classes.size(); ++k) {
    p.sources.push_back(sa.stems[k]);
    p.source_class.push_back(sa.classes[k]);
    p.source_scene.push_back(a);
  }
  p.sources.push_back(sb.audio);
  p.source_class.push_back(sb.classes[0]);
  p.source_scene.push_back(b);
  p.mixture = dsp::mix(p.sources);
  const auto& prof = ds.config.profile;
  std::vector<Tensor> mags;
  for (const auto& w : p.sources)
    mags.push_back(dsp::log_freq_warp(dsp::stft(w, prof.window_len, prof.hop).magnitude(), prof.rows, prof.cols).magnitude);
  p.gt_masks = dsp::ground_truth_masks(mags);
  return p;
}

MixPair sample_mix_pair(const Dataset& ds, const std::vector<std::size_t>& pool, std::uint64_t seed,
                        bool multi_source) {
  if (pool.size() < 2) throw std::invalid_argument("sample_mix_pair: dataset too small");
  std::vector<std::size_t> first;
  for (auto i : pool)
    if (ds.scenes.at(i).scene.duet() == multi_source) first.push_back(i);
  if (first.empty()) throw std::invalid_argument("sample_mix_pair: no eligible scene_a in pool");
  Rng rng(seed);
  const std::size_t a = first[rng.index(first.size())];
  const auto& ca = ds.scenes[a].scene.classes;
  std::vector<std::size_t> second;
  for (auto i : pool) {
    const auto& s = ds.scenes[i].scene;
    if (i != a && !s.duet() && std::find(ca.begin(), ca.end(), s.classes[0]) == ca.end()) second.push_back(i);
  }
  if (second.empty()) throw std::invalid_argument("sample_mix_pair: no eligible scene_b in pool");
  return make_mix_pair(ds, a, second[rng.index(second.size())], multi_source);
}

}  // namespace tribert::synth
