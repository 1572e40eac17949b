#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace tribert::cli {

/// Thrown for user-facing failures; the CLI prints the message and exits 1.
struct CommandError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void cmd_synth(const RunConfig& cfg, bool force);

struct TrainArgs {
  std::filesystem::path resume, fine_tune;
  std::size_t classes = 0;  // fine-tune head size; 0 takes the dataset's
};
void cmd_train(const RunConfig& cfg, const TrainArgs& args);

struct SeparateArgs {
  std::filesystem::path checkpoint;
  std::string pair;                 // "<scene>+<scene>"
  std::filesystem::path mixture;    // raw WAV mode
  std::vector<std::string> scenes;  // conditioning scenes for raw WAV mode
  bool binary = false;
};
void cmd_separate(const RunConfig& cfg, const SeparateArgs& args);

void cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint);
void cmd_retrieve(const RunConfig& cfg, const std::filesystem::path& checkpoint);

/// Full command line, including the program name. Returns the exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace tribert::cli
