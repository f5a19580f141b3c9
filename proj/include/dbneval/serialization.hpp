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

#ifndef DBNEVAL_SERIALIZATION_HPP
#define DBNEVAL_SERIALIZATION_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dbneval/dbn.hpp"
#include "dbneval/models.hpp"

namespace dbneval {

/// Malformed, truncated or unrecognized file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Self-describing binary container:
///
///   "DBNEVAL\0"  8-byte magic
///   u32          format version
///   u32 + bytes  variant tag
///   u32          array count
///   per array:   u32 + bytes name, u64 rows, u64 cols, rows*cols f64 (row-major)
///
/// All integers and floats are little-endian. Scalars are stored as 1x1 arrays.
struct Container {
  static constexpr std::uint32_t kVersion = 1;

  std::string tag;
  std::vector<std::pair<std::string, Matrix>> arrays;

  void put(std::string name, Matrix value);
  const Matrix& get(const std::string& name) const;
  bool has(const std::string& name) const;
  Vector get_vector(const std::string& name) const;
  double get_scalar(const std::string& name) const;
};

void write_container(const std::string& path, const Container& container);
Container read_container(const std::string& path);

Container to_container(const LayerParams& layer);
LayerParams layer_from_container(const Container& container);

void save_layer(const std::string& path, const LayerParams& layer);
LayerParams load_layer(const std::string& path);

/// A DBN directory holds dbn.json (stack metadata plus caller provenance)
/// and one container per layer, layer_1.model ... layer_L.model.
void save_dbn(const std::string& dir, const DbnModel& dbn, const nlohmann::json& provenance = {});
DbnModel load_dbn(const std::string& dir);
nlohmann::json load_dbn_manifest(const std::string& dir);

/// Writes text atomically enough for our purposes (truncate then write);
/// throws std::runtime_error on I/O failure.
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

}  // namespace dbneval

#endif  // DBNEVAL_SERIALIZATION_HPP
