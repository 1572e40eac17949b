#include "tribert/numerics/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tribert {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[5] = {'T', 'R', 'I', 'B', '1'};

std::string encode_shape(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out.empty() ? "scalar" : out;
}

Shape decode_shape(const std::string& text) {
  if (text == "scalar") return {};
  Shape s;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(std::stoull(part));
  return s;
}

bool has_space(const std::string& s) { return s.find_first_of(" \t\n\r") != std::string::npos; }

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ostringstream manifest;
  for (const auto& [k, v] : ckpt.config) {
    if (has_space(k) || v.find('\n') != std::string::npos)
      throw std::invalid_argument("checkpoint: config entry not serializable: " + k);
    manifest << "config " << k << ' ' << v << '\n';
  }
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    if (has_space(name)) throw std::invalid_argument("checkpoint: tensor name has whitespace: " + name);
    manifest << "tensor " << name << ' ' << encode_shape(t.shape) << ' ' << offset << '\n';
    offset += t.size() * sizeof(double);
  }
  const std::string m = manifest.str();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = m.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const auto& [name, t] : ckpt.tensors)
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[5];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1ULL << 32)) throw std::runtime_error("checkpoint: corrupt manifest length");
  std::string m(len, '\0');
  in.read(m.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint: truncated manifest");
  const std::streamoff payload = in.tellg();

  Checkpoint ckpt;
  std::istringstream lines(m);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      std::string key, value;
      ls >> key;
      std::getline(ls, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      ckpt.config[key] = value;
    } else if (kind == "tensor") {
      std::string name, shape;
      std::uint64_t off = 0;
      if (!(ls >> name >> shape >> off)) throw std::runtime_error("checkpoint: bad manifest line: " + line);
      Tensor t(decode_shape(shape));
      in.seekg(payload + static_cast<std::streamoff>(off));
      in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
      if (!in) throw std::runtime_error("checkpoint: truncated payload for " + name);
      ckpt.tensors.emplace(name, std::move(t));
    } else {
      throw std::runtime_error("checkpoint: unknown manifest record: " + kind);
    }
  }
  return ckpt;
}

Checkpoint make_checkpoint(const ParameterStore& params, const AdamState* adam,
                           std::map<std::string, std::string> config) {
  Checkpoint c;
  c.config = std::move(config);
  for (const auto& [name, p] : params) c.tensors.emplace("param/" + name, p.value);
  if (adam) {
    c.config["adam.step"] = std::to_string(adam->step);
    for (const auto& [name, t] : adam->first_moment) c.tensors.emplace("adam.m/" + name, t);
    for (const auto& [name, t] : adam->second_moment) c.tensors.emplace("adam.v/" + name, t);
  }
  return c;
}

std::size_t restore_parameters(const Checkpoint& ckpt, ParameterStore& params,
                               const std::function<bool(const std::string&)>& skip) {
  std::size_t restored = 0;
  for (auto& [name, p] : params) {
    if (skip && skip(name)) continue;
    auto it = ckpt.tensors.find("param/" + name);
    if (it == ckpt.tensors.end()) throw std::runtime_error("checkpoint: missing parameter " + name);
    if (it->second.shape != p.value.shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": " + shape_str(it->second.shape) +
                               " vs " + shape_str(p.value.shape));
    p.value = it->second;
    ++restored;
  }
  return restored;
}

void restore_adam(const Checkpoint& ckpt, AdamState& adam) {
  auto it = ckpt.config.find("adam.step");
  if (it == ckpt.config.end()) throw std::runtime_error("checkpoint: no optimizer state");
  adam.step = std::stoull(it->second);
  adam.first_moment.clear();
  adam.second_moment.clear();
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind("adam.m/", 0) == 0) adam.first_moment.emplace(name.substr(7), t);
    if (name.rfind("adam.v/", 0) == 0) adam.second_moment.emplace(name.substr(7), t);
  }
}

}  // namespace tribert
