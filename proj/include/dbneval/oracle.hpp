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

#ifndef DBNEVAL_ORACLE_HPP
#define DBNEVAL_ORACLE_HPP

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace dbneval {

struct OracleOptions {
  std::uint64_t seed = 1;
  int threads = 1;
  /// Empty runs every check; otherwise only the check with this name.
  std::string filter;
  /// Fault injection: negate the energy used by the brute-force references.
  bool flip_energy_sign = false;
};

struct OracleResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
  double seconds = 0.0;
};

std::vector<std::string> oracle_check_names();

/// Runs the brute-force-versus-library checks in a fixed order, printing one
/// status line per check to `log`. Throws std::invalid_argument for an
/// unknown filter.
std::vector<OracleResult> run_oracle_suite(const OracleOptions& options, std::ostream& log);

nlohmann::json oracle_report(const std::vector<OracleResult>& results);

}  // namespace dbneval

#endif  // DBNEVAL_ORACLE_HPP
