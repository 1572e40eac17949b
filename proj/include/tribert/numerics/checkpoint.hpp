#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>

#include "tribert/numerics/adam.hpp"
#include "tribert/numerics/tape.hpp"

namespace tribert {

/// On-disk layout:
///   "TRIB1"
///   u64 manifest length, manifest bytes (UTF-8 text, one record per line)
///   raw little-endian float64 payload
/// Manifest lines are either `config <key> <value>` or
/// `tensor <name> <d0>x<d1>x... <byte offset>`; offsets are relative to the
/// payload start.
struct Checkpoint {
  std::map<std::string, std::string> config;
  std::map<std::string, Tensor> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Packs parameters (and optionally Adam moments and step) into a checkpoint.
Checkpoint make_checkpoint(const ParameterStore& params, const AdamState* adam,
                           std::map<std::string, std::string> config);
/// Restores parameter values by name. Shapes must match unless the name is
/// accepted by `skip`. Returns the number of restored tensors.
std::size_t restore_parameters(const Checkpoint& ckpt, ParameterStore& params,
                               const std::function<bool(const std::string&)>& skip = {});
void restore_adam(const Checkpoint& ckpt, AdamState& adam);

}  // namespace tribert
