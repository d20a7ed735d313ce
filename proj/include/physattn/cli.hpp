#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "physattn/model.hpp"
#include "physattn/training.hpp"

namespace physattn {

/// Everything `train`, `ablate` and `bench` can be configured with.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Keys accepted in config files, in echo order. Command-line overrides use
/// the same names with '-' for '_' (e.g. --batch-size).
const std::vector<std::string>& run_config_keys();

/// Sets one field from its textual value. Unknown keys and unparsable
/// values raise ConfigError.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Reads `key = value` lines; blank lines and '#' comments are ignored.
/// `source` names the input in error messages.
void apply_config_stream(RunConfig& config, std::istream& is, const std::string& source);
void apply_config_file(RunConfig& config, const std::string& path);

/// Fully resolved configuration in the file format, one key per line.
void write_run_config(std::ostream& os, const RunConfig& config);

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Entry point of the command-line tool; returns the exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace physattn
