#include "tribert/model_config.hpp"

#include <functional>
#include <sstream>
#include <stdexcept>

namespace tribert {
namespace {

template <class F>
void visit(ModelConfig& c, F&& f) {
  f("classes", c.classes);
  f("frame_size", c.frame_size);
  f("backbone_width", c.backbone_width);
  f("gcn_hidden", c.gcn_hidden);
  f("gcn_layers", c.gcn_layers);
  f("audio_width", c.audio_width);
  f("spec_rows", c.spec_rows);
  f("spec_cols", c.spec_cols);
  f("d_v", c.d_v);
  f("d_a", c.d_a);
  f("heads", c.heads);
  f("layers", c.layers);
  f("ffn_mult", c.ffn_mult);
  f("dropout", c.dropout);
  f("mask_prob", c.mask_prob);
  f("positional", c.positional);
  f("unet_levels", c.unet_levels);
  f("unet_base", c.unet_base);
  f("fusion_dim", c.fusion_dim);
  f("fusion_heads", c.fusion_heads);
  f("mask_channels", c.mask_channels);
  f("w_mask", c.w_mask);
  f("w_cls", c.w_cls);
}

std::string show(std::size_t v) { return std::to_string(v); }
std::string show(bool v) { return v ? "true" : "false"; }
std::string show(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void parse(const std::string& key, const std::string& s, std::size_t& v) {
  std::size_t pos = 0;
  const auto x = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("model." + key + ": not an integer: " + s);
  v = x;
}
void parse(const std::string& key, const std::string& s, double& v) {
  std::size_t pos = 0;
  v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("model." + key + ": not a number: " + s);
}
void parse(const std::string& key, const std::string& s, bool& v) {
  if (s == "true" || s == "1") v = true;
  else if (s == "false" || s == "0") v = false;
  else throw std::invalid_argument("model." + key + ": not a boolean: " + s);
}

}  // namespace

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("model config: " + what);
  };
  need(classes >= 2, "classes must be >= 2");
  need(heads > 0 && d_v % heads == 0 && d_a % heads == 0, "d_v and d_a must be divisible by heads");
  need(frame_size % 8 == 0 && frame_size >= 16, "frame_size must be a multiple of 8");
  need(unet_levels >= 1, "unet_levels must be >= 1");
  const std::size_t div = std::size_t{1} << unet_levels;
  need(spec_rows % div == 0 && spec_cols % div == 0, "spectrogram grid must be divisible by 2^unet_levels");
  need(spec_rows % 8 == 0 && spec_cols % 8 == 0, "spectrogram grid must be divisible by 8");
  const std::size_t bottleneck = unet_base << (unet_levels - 1);
  need(fusion_heads > 0 && (bottleneck + fusion_dim) % fusion_heads == 0, "fusion width must be divisible by fusion_heads");
  need(mask_channels >= 1, "mask_channels must be >= 1");
  need(dropout >= 0 && dropout < 1 && mask_prob >= 0 && mask_prob <= 1, "probabilities out of range");
  need(gcn_layers >= 1 && gcn_hidden >= 1 && backbone_width >= 1 && audio_width >= 1, "widths must be positive");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  std::map<std::string, std::string> m;
  visit(const_cast<ModelConfig&>(*this), [&](const char* k, auto& v) { m[k] = show(v); });
  return m;
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& m) {
  ModelConfig c;
  std::map<std::string, std::function<void(const std::string&)>> setters;
  visit(c, [&](const char* k, auto& v) { setters[k] = [&v, key = std::string(k)](const std::string& s) { parse(key, s, v); }; });
  for (const auto& [k, v] : m) {
    auto it = setters.find(k);
    if (it == setters.end()) throw std::invalid_argument("model config: unknown key '" + k + "'");
    it->second(v);
  }
  return c;
}

ModelConfig ModelConfig::desk() { return {}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.d_v = 1024;
  c.d_a = 512;
  c.spec_rows = c.spec_cols = 256;
  c.unet_levels = 7;
  c.layers = 2;
  return c;
}

}  // namespace tribert
