// Copyright 2026 The dbneval Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DBNEVAL_CLI_HPP
#define DBNEVAL_CLI_HPP

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "dbneval/training.hpp"

namespace dbneval {

inline constexpr const char* kToolVersion = "0.1.0";

/// Invalid or inconsistent configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Command-line overrides applied on top of the config file.
struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;
  std::optional<std::string> filter;
};

/// Parsed experiment config. `json` is the file content with defaults filled
/// in; relative paths inside it resolve against `base_dir`.
struct ExperimentConfig {
  nlohmann::json json;
  std::string base_dir;
  std::string output_dir;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string hash;

  std::string resolve(const std::string& path) const;
  std::string out_path(const std::string& relative) const;
};

/// Validates `j` against the schema (unknown keys are errors), fills
/// defaults and applies overrides. Throws ConfigError.
ExperimentConfig make_config(const nlohmann::json& j, const std::string& base_dir, const CliOverrides& overrides);
ExperimentConfig load_config(const std::string& path, const CliOverrides& overrides);

/// Per-layer training settings: global "training" merged with each layer's
/// overrides, with a per-layer seed derived from the experiment seed.
std::vector<TrainConfig> layer_train_configs(const ExperimentConfig& config);

/// FNV-1a over the canonical JSON text, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

/// Rounds to `digits` significant decimal digits.
double round_significant(double v, int digits = 7);

int cmd_preprocess(const ExperimentConfig& config, std::ostream& log);
int cmd_train(const ExperimentConfig& config, std::ostream& log);
int cmd_eval(const ExperimentConfig& config, std::ostream& log);
int cmd_compare(const ExperimentConfig& config, std::ostream& log);
int cmd_oracle(const ExperimentConfig& config, const std::string& filter, std::ostream& log);

/// Exit code for an exception escaping a command: 2 config or model file,
/// 3 data, 4 divergence, 5 estimation, 1 anything else.
int exit_code_for(const std::exception& e);

/// Full command-line entry point used by the dbneval binary.
int run_cli(int argc, char** argv);

}  // namespace dbneval

#endif  // DBNEVAL_CLI_HPP
