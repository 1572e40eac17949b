#include "run_config.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace tribert::cli {
namespace {

std::string show(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
std::string show(std::size_t v) { return std::to_string(v); }
std::string show(bool v) { return v ? "true" : "false"; }
std::string show(const std::string& v) { return v; }

void parse(const std::string& key, const std::string& s, std::size_t& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != s.size() || s.empty() || s[0] == '-') throw std::invalid_argument(key + ": not a count: '" + s + "'");
  v = x;
}
void parse(const std::string& key, const std::string& s, double& v) {
  std::size_t pos = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != s.size()) throw std::invalid_argument(key + ": not a number: '" + s + "'");
}
void parse(const std::string& key, const std::string& s, bool& v) {
  if (s == "true" || s == "1") v = true;
  else if (s == "false" || s == "0") v = false;
  else throw std::invalid_argument(key + ": not a boolean: '" + s + "'");
}
void parse(const std::string&, const std::string& s, std::string& v) { v = s; }

// Every non-model key, in snapshot order.
template <class Cfg, class F>
void visit(Cfg& c, F&& f) {
  f("run.profile", c.profile);
  f("run.seed", c.seed);
  f("run.dataset", c.dataset);
  f("run.out", c.out);
  f("synth.classes", c.synth.classes);
  f("synth.num_scenes", c.synth.num_scenes);
  f("synth.train_fraction", c.synth.train_fraction);
  f("synth.duet_probability", c.synth.duet_probability);
  f("synth.frame_size", c.synth.frame_size);
  f("synth.pose_fps", c.synth.pose_fps);
  f("train.steps", c.train.steps);
  f("train.batch", c.train.batch);
  f("train.lr", c.train.lr);
  f("train.multi_source_fraction", c.train.multi_source_fraction);
  f("train.checkpoint_every", c.train.checkpoint_every);
  f("eval.pairs", c.eval.pairs);
  f("eval.multi_source_fraction", c.eval.multi_source_fraction);
  f("eval.jobs", c.eval.jobs);
  f("eval.binary", c.eval.binary);
  f("retrieve.epochs", c.retrieve.epochs);
  f("retrieve.batch", c.retrieve.batch);
  f("retrieve.lr", c.retrieve.lr);
  f("retrieve.d_r", c.retrieve.d_r);
  f("retrieve.variants", c.retrieve.variants);
  f("retrieve.sources", c.retrieve.sources);
  f("retrieve.jobs", c.retrieve.jobs);
}

}  // namespace

RunConfig RunConfig::defaults(const std::string& profile) {
  RunConfig c;
  if (profile == "desk") {
    c.synth.profile = dsp::AudioProfile::desk();
    c.model = ModelConfig::desk();
  } else if (profile == "paper") {
    c.synth.profile = dsp::AudioProfile::paper();
    c.model = ModelConfig::paper();
  } else {
    throw std::invalid_argument("run.profile: expected desk or paper, got '" + profile + "'");
  }
  c.profile = profile;
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "run.profile" && value != profile)
    throw std::invalid_argument("run.profile must be resolved before other keys");
  if (key.rfind("model.", 0) == 0) {
    auto m = model.to_map();
    const std::string k = key.substr(6);
    if (!m.count(k)) throw std::invalid_argument("unknown config key '" + key + "'");
    m[k] = value;
    model = ModelConfig::from_map(m);
    return;
  }
  bool found = false;
  visit(*this, [&](const char* k, auto& field) {
    if (key == k) {
      parse(key, value, field);
      found = true;
    }
  });
  if (!found) throw std::invalid_argument("unknown config key '" + key + "'");
  if (key == "run.seed") synth.seed = seed;
  if (key == "synth.classes") model.classes = synth.classes;
}

std::map<std::string, std::string> RunConfig::entries() const {
  std::map<std::string, std::string> out;
  visit(*this, [&](const char* k, const auto& field) { out[k] = show(field); });
  for (const auto& [k, v] : model.to_map()) out["model." + k] = v;
  return out;
}

std::string RunConfig::to_ini() const {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [k, v] : entries()) {
    const auto dot = k.find('.');
    sections[k.substr(0, dot)].push_back({k.substr(dot + 1), v});
  }
  std::ostringstream os;
  for (const char* s : {"run", "synth", "model", "train", "eval", "retrieve"}) {
    os << '[' << s << "]\n";
    for (const auto& [k, v] : sections[s]) os << k << " = " << (v.empty() ? "\"\"" : v) << '\n';
    os << '\n';
  }
  return os.str();
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_ini()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

Overrides parse_ini(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw std::invalid_argument(origin + ": " + e.what());
  }
  Overrides out;
  for (const auto& it : items) {
    if (it.name == "++" || it.name == "--") continue;  // section open/close markers
    if (it.parents.size() != 1)
      throw std::invalid_argument(origin + ": key '" + it.fullname() + "' must sit in exactly one [section]");
    std::string value;
    for (std::size_t i = 0; i < it.inputs.size(); ++i) value += (i ? "," : "") + it.inputs[i];
    out.emplace_back(it.fullname(), value);
  }
  return out;
}

RunConfig resolve_config(const std::filesystem::path& file, const Overrides& flags, const char* env_seed) {
  Overrides from_file;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw std::invalid_argument("cannot read config file " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    from_file = parse_ini(ss.str(), file.string());
  }
  std::string profile = "desk";
  for (const Overrides* src : std::initializer_list<const Overrides*>{&from_file, &flags})
    for (const auto& [k, v] : *src)
      if (k == "run.profile") profile = v;
  RunConfig cfg = RunConfig::defaults(profile);
  auto apply = [&](const Overrides& o) {
    for (const auto& [k, v] : o)
      if (k != "run.profile") cfg.set(k, v);
  };
  apply(from_file);
  if (env_seed && *env_seed) cfg.set("run.seed", env_seed);
  apply(flags);
  cfg.model.validate();
  if (cfg.model.spec_rows != cfg.synth.profile.rows || cfg.model.spec_cols != cfg.synth.profile.cols)
    throw std::invalid_argument("model spectrogram grid does not match the " + cfg.profile + " audio profile");
  if (cfg.model.frame_size != cfg.synth.frame_size)
    throw std::invalid_argument("model.frame_size must equal synth.frame_size");
  return cfg;
}

void write_snapshot(const RunConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.resolved.ini");
  if (!out) throw std::runtime_error("cannot write " + (dir / "config.resolved.ini").string());
  out << "# resolved configuration, hash " << cfg.hash() << "\n\n" << cfg.to_ini();
}

}  // namespace tribert::cli
