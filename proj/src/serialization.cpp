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

#include "dbneval/serialization.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dbneval {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'B', 'N', 'E', 'V', 'A', 'L', '\0'};
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

template <typename T>
void put_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get_raw(std::istream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError(path + ": truncated container");
  return v;
}

std::string get_string(std::istream& in, const std::string& path) {
  const auto n = get_raw<std::uint32_t>(in, path);
  if (n > 4096) throw FormatError(path + ": implausible string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw FormatError(path + ": truncated container");
  return s;
}

void expect_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw FormatError("array '" + what + "' has shape " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
}

Matrix column(const Vector& v) { return v; }

}  // namespace

void Container::put(std::string name, Matrix value) {
  for (auto& [k, v] : arrays) {
    if (k == name) {
      v = std::move(value);
      return;
    }
  }
  arrays.emplace_back(std::move(name), std::move(value));
}

bool Container::has(const std::string& name) const {
  for (const auto& [k, v] : arrays)
    if (k == name) return true;
  return false;
}

const Matrix& Container::get(const std::string& name) const {
  for (const auto& [k, v] : arrays)
    if (k == name) return v;
  throw FormatError("container '" + tag + "' has no array '" + name + "'");
}

Vector Container::get_vector(const std::string& name) const {
  const Matrix& m = get(name);
  if (m.cols() != 1) throw FormatError("array '" + name + "' is not a column vector");
  return m.col(0);
}

double Container::get_scalar(const std::string& name) const {
  const Matrix& m = get(name);
  if (m.size() != 1) throw FormatError("array '" + name + "' is not a scalar");
  return m(0, 0);
}

void write_container(const std::string& path, const Container& c) {
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, sizeof(kMagic));
  put_raw<std::uint32_t>(out, Container::kVersion);
  put_string(out, c.tag);
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& [name, m] : c.arrays) {
    put_string(out, name);
    put_raw<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put_raw<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) put_raw<double>(out, m(i, j));
  }
  write_text_file(path, out.str());
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model file " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw FormatError(path + ": not a dbneval container");
  }
  const auto version = get_raw<std::uint32_t>(in, path);
  if (version != Container::kVersion) {
    throw FormatError(path + ": unsupported container version " + std::to_string(version));
  }
  Container c;
  c.tag = get_string(in, path);
  const auto count = get_raw<std::uint32_t>(in, path);
  for (std::uint32_t a = 0; a < count; ++a) {
    std::string name = get_string(in, path);
    const auto rows = get_raw<std::uint64_t>(in, path);
    const auto cols = get_raw<std::uint64_t>(in, path);
    if (rows * cols > kMaxElements) throw FormatError(path + ": implausible array size");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = get_raw<double>(in, path);
    c.arrays.emplace_back(std::move(name), std::move(m));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes");
  return c;
}

Container to_container(const LayerParams& layer) {
  validate(layer);
  Container c;
  c.tag = std::string(kind_name(kind_of(layer)));
  std::visit(
      [&](const auto& p) {
        c.put("weights", p.weights);
        c.put("visible_bias", column(p.visible_bias));
        c.put("hidden_bias", column(p.hidden_bias));
      },
      layer);
  if (const auto* g = std::get_if<GrbmParams>(&layer)) c.put("sigma", Matrix::Constant(1, 1, g->sigma));
  if (const auto* s = std::get_if<SrbmParams>(&layer)) c.put("lateral", s->lateral);
  return c;
}

LayerParams layer_from_container(const Container& c) {
  LayerKind kind;
  try {
    kind = parse_kind(c.tag);
  } catch (const std::exception&) {
    throw FormatError("unknown layer tag '" + c.tag + "'");
  }
  const Matrix& w = c.get("weights");
  const Vector b = c.get_vector("visible_bias");
  const Vector h = c.get_vector("hidden_bias");
  expect_shape(b, w.rows(), 1, "visible_bias");
  expect_shape(h, w.cols(), 1, "hidden_bias");
  LayerParams out;
  switch (kind) {
    case LayerKind::rbm:
      out = RbmParams{w, b, h};
      break;
    case LayerKind::grbm:
      out = GrbmParams{w, b, h, c.get_scalar("sigma")};
      break;
    case LayerKind::srbm:
      expect_shape(c.get("lateral"), w.rows(), w.rows(), "lateral");
      out = SrbmParams{w, b, h, c.get("lateral")};
      break;
  }
  try {
    validate(out);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid layer parameters: ") + e.what());
  }
  return out;
}

void save_layer(const std::string& path, const LayerParams& layer) { write_container(path, to_container(layer)); }

LayerParams load_layer(const std::string& path) {
  try {
    return layer_from_container(read_container(path));
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path, 0) == 0 || msg.find(path) != std::string::npos) throw;
    throw FormatError(path + ": " + msg);
  }
}

void save_dbn(const std::string& dir, const DbnModel& dbn, const nlohmann::json& provenance) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "dbneval-dbn";
  manifest["version"] = 1;
  manifest["units"] = dbn.unit_counts();
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < dbn.depth(); ++l) {
    const std::string file = "layer_" + std::to_string(l + 1) + ".model";
    save_layer((std::filesystem::path(dir) / file).string(), dbn.layer(l));
    layers.push_back({{"file", file},
                      {"kind", kind_name(kind_of(dbn.layer(l)))},
                      {"visible", visible_size(dbn.layer(l))},
                      {"hidden", hidden_size(dbn.layer(l))}});
  }
  manifest["layers"] = layers;
  manifest["provenance"] = provenance.is_null() ? nlohmann::json::object() : provenance;
  write_text_file((std::filesystem::path(dir) / "dbn.json").string(), manifest.dump(2) + "\n");
}

nlohmann::json load_dbn_manifest(const std::string& dir) {
  const auto path = (std::filesystem::path(dir) / "dbn.json").string();
  if (!std::filesystem::exists(path)) throw FormatError("no DBN manifest at " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  if (manifest.value("format", "") != "dbneval-dbn") throw FormatError(path + ": not a DBN manifest");
  return manifest;
}

DbnModel load_dbn(const std::string& dir) {
  const auto manifest = load_dbn_manifest(dir);
  std::vector<LayerParams> layers;
  try {
    for (const auto& entry : manifest.at("layers")) {
      const auto file = entry.at("file").get<std::string>();
      layers.push_back(load_layer((std::filesystem::path(dir) / file).string()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir + "/dbn.json: " + e.what());
  }
  try {
    return DbnModel(std::move(layers));
  } catch (const std::invalid_argument& e) {
    throw FormatError(dir + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace dbneval
