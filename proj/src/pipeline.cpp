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

#include "dbneval/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "dbneval/serialization.hpp"

namespace dbneval {

namespace {

constexpr char kDataMagic[8] = {'D', 'B', 'N', 'E', 'V', 'D', 'S', '\0'};
constexpr char kImageMagic[8] = {'D', 'B', 'N', 'E', 'V', 'I', 'M', 'G'};
constexpr std::uint32_t kDataVersion = 1;

template <typename T>
void put_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(std::istream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError(path + ": truncated file");
  return v;
}

void expect_end(std::istream& in, const std::string& path) {
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(path + ": trailing bytes after payload");
}

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix json_matrix(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw std::invalid_argument(std::string(what) + " must be a nonempty array of rows");
  }
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != m.cols()) {
      throw std::invalid_argument(std::string(what) + " has ragged rows");
    }
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

Vector json_vector(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw std::invalid_argument(std::string(what) + " must be a nonempty array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

Matrix log_intensities(const Matrix& raw) {
  if (!raw.allFinite()) throw DataError("preprocess: non-finite intensity");
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
      if (!(raw(i, j) > 0.0)) {
        throw DataError("preprocess: non-positive intensity " + format_double(raw(i, j)) + " at sample " +
                        std::to_string(i) + ", component " + std::to_string(j));
      }
    }
  }
  return raw.array().log().matrix();
}

// Categorical draw from unnormalized log weights via a cumulative table.
struct LogCategorical {
  std::vector<double> cdf;

  explicit LogCategorical(const std::vector<double>& log_w) {
    const double lse = log_sum_exp(log_w);
    double acc = 0.0;
    for (double lw : log_w) cdf.push_back(acc += std::exp(lw - lse));
  }

  std::size_t draw(RngStream& rng) const {
    const double u = rng.uniform() * cdf.back();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return std::min(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
  }
};

Vector mixture_weights(const nlohmann::json& spec, Eigen::Index k) {
  if (!spec.contains("weights")) return Vector::Constant(k, 1.0 / static_cast<double>(k));
  Vector w = json_vector(spec["weights"], "weights");
  if (w.size() != k) throw std::invalid_argument("mixture weights do not match the component count");
  if ((w.array() <= 0.0).any()) throw std::invalid_argument("mixture weights must be positive");
  return w / w.sum();
}

SyntheticSource gaussian_mixture(const Matrix& means, const std::vector<Matrix>& covariances, const Vector& weights) {
  const Eigen::Index d = means.cols();
  std::vector<Matrix> factors;
  std::vector<double> log_norms;
  for (const auto& c : covariances) {
    if (c.rows() != d || c.cols() != d) throw std::invalid_argument("covariance shape does not match the means");
    Eigen::LLT<Matrix> llt(c);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("mixture covariance is not positive definite");
    Matrix l = llt.matrixL();
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) log_det += 2.0 * std::log(l(i, i));
    log_norms.push_back(-0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det));
    factors.push_back(std::move(l));
  }
  std::vector<double> log_w;
  for (Eigen::Index k = 0; k < weights.size(); ++k) log_w.push_back(std::log(weights[k]));
  SyntheticSource s;
  s.dims = d;
  const LogCategorical pick(log_w);
  s.sample = [=](RngStream& rng) {
    const auto k = pick.draw(rng);
    Vector z(d);
    for (Eigen::Index i = 0; i < d; ++i) z[i] = rng.normal();
    return Vector(means.row(static_cast<Eigen::Index>(k)).transpose() + factors[k] * z);
  };
  s.log_density = [=](const Vector& x) {
    if (x.size() != d) throw std::invalid_argument("dimension mismatch in synthetic log density");
    std::vector<double> terms;
    for (std::size_t k = 0; k < factors.size(); ++k) {
      const Vector r = x - means.row(static_cast<Eigen::Index>(k)).transpose();
      const Vector z = factors[k].triangularView<Eigen::Lower>().solve(r);
      terms.push_back(log_w[k] + log_norms[k] - 0.5 * z.squaredNorm());
    }
    return log_sum_exp(terms);
  };
  return s;
}

}  // namespace

void validate(const DataSet& data) {
  if (!data.samples.allFinite()) throw DataError("dataset contains non-finite entries");
  if (!data.provenance.is_array()) throw DataError("dataset provenance must be a JSON array");
}

void save_dataset(const std::string& path, const DataSet& data) {
  validate(data);
  std::ostringstream out(std::ios::binary);
  out.write(kDataMagic, sizeof(kDataMagic));
  put_raw<std::uint32_t>(out, kDataVersion);
  put_raw<std::uint64_t>(out, static_cast<std::uint64_t>(data.samples.rows()));
  put_raw<std::uint64_t>(out, static_cast<std::uint64_t>(data.samples.cols()));
  const std::string prov = data.provenance.dump();
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(prov.size()));
  out.write(prov.data(), static_cast<std::streamsize>(prov.size()));
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = data.samples;
  out.write(reinterpret_cast<const char*>(rows.data()), static_cast<std::streamsize>(rows.size() * sizeof(double)));
  write_text_file(path, out.str());
}

DataSet load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kDataMagic, sizeof(magic)) != 0) {
    throw DataError(path + ": not a dbneval dataset");
  }
  const auto version = get_raw<std::uint32_t>(in, path);
  if (version != kDataVersion) throw DataError(path + ": unsupported dataset version " + std::to_string(version));
  const auto n = get_raw<std::uint64_t>(in, path);
  const auto d = get_raw<std::uint64_t>(in, path);
  if (d == 0 || n > (std::uint64_t{1} << 34) / d) throw DataError(path + ": implausible dataset shape");
  const auto len = get_raw<std::uint32_t>(in, path);
  std::string prov(len, '\0');
  if (!in.read(prov.data(), len)) throw DataError(path + ": truncated file");
  DataSet data;
  try {
    data.provenance = nlohmann::json::parse(prov);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad provenance JSON: " + e.what());
  }
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(static_cast<Eigen::Index>(n),
                                                                               static_cast<Eigen::Index>(d));
  if (!in.read(reinterpret_cast<char*>(rows.data()), static_cast<std::streamsize>(rows.size() * sizeof(double)))) {
    throw DataError(path + ": truncated file");
  }
  expect_end(in, path);
  data.samples = rows;
  validate(data);
  return data;
}

void save_image(const std::string& path, const GrayImage& image, int bit_depth) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height)) {
    throw std::invalid_argument("image size does not match its pixel count");
  }
  if (bit_depth != 8 && bit_depth != 16 && bit_depth != 64) throw std::invalid_argument("bit depth must be 8, 16 or 64");
  std::ostringstream out(std::ios::binary);
  out.write(kImageMagic, sizeof(kImageMagic));
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(image.width));
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(image.height));
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(bit_depth));
  const double top = bit_depth == 8 ? 255.0 : 65535.0;
  for (double p : image.pixels) {
    if (bit_depth == 64) {
      put_raw<double>(out, p);
    } else if (!(p >= 0.0 && p <= top && p == std::floor(p))) {
      throw std::invalid_argument("pixel " + format_double(p) + " does not fit " + std::to_string(bit_depth) + " bits");
    } else if (bit_depth == 8) {
      put_raw<std::uint8_t>(out, static_cast<std::uint8_t>(p));
    } else {
      put_raw<std::uint16_t>(out, static_cast<std::uint16_t>(p));
    }
  }
  write_text_file(path, out.str());
}

GrayImage load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kImageMagic, sizeof(magic)) != 0) {
    throw DataError(path + ": not a dbneval image");
  }
  GrayImage img;
  img.width = static_cast<int>(get_raw<std::uint32_t>(in, path));
  img.height = static_cast<int>(get_raw<std::uint32_t>(in, path));
  const auto depth = get_raw<std::uint32_t>(in, path);
  if (img.width <= 0 || img.height <= 0 || img.width > 65536 || img.height > 65536) {
    throw DataError(path + ": implausible image size");
  }
  if (depth != 8 && depth != 16 && depth != 64) throw DataError(path + ": unsupported bit depth " + std::to_string(depth));
  img.pixels.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height));
  for (double& p : img.pixels) {
    if (depth == 8) {
      p = get_raw<std::uint8_t>(in, path);
    } else if (depth == 16) {
      p = get_raw<std::uint16_t>(in, path);
    } else {
      p = get_raw<double>(in, path);
    }
  }
  expect_end(in, path);
  return img;
}

std::vector<GrayImage> load_image_manifest(const std::string& path) {
  if (!std::filesystem::exists(path)) throw DataError("cannot open image manifest " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  if (!j.contains("images") || !j["images"].is_array() || j["images"].empty()) {
    throw DataError(path + ": manifest needs a nonempty \"images\" array");
  }
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<GrayImage> images;
  for (const auto& name : j["images"]) {
    if (!name.is_string()) throw DataError(path + ": image entries must be strings");
    images.push_back(load_image((base / name.get<std::string>()).string()));
  }
  return images;
}

DataSet sample_patches(const PatchSource& source, Eigen::Index n, RngStream& rng, std::vector<PatchPosition>* positions) {
  const int p = source.patch_size;
  if (p < 1) throw std::invalid_argument("patch size must be positive");
  if (source.images.empty()) throw DataError("patch source has no images");
  if (n < 0) throw std::invalid_argument("patch count must be nonnegative");
  std::vector<std::uint64_t> offsets{0};
  for (const auto& img : source.images) {
    if (img.width < p || img.height < p) {
      throw DataError("a " + std::to_string(img.width) + "x" + std::to_string(img.height) + " image cannot hold a " +
                      std::to_string(p) + "x" + std::to_string(p) + " patch");
    }
    offsets.push_back(offsets.back() + static_cast<std::uint64_t>(img.width - p + 1) *
                                           static_cast<std::uint64_t>(img.height - p + 1));
  }
  DataSet out;
  out.samples.resize(n, static_cast<Eigen::Index>(p) * p);
  if (positions) positions->clear();
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::uint64_t idx = rng.below(offsets.back());
    const auto image = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), idx) - offsets.begin() - 1);
    const GrayImage& img = source.images[image];
    const std::uint64_t local = idx - offsets[image];
    const int cols = img.width - p + 1;
    const PatchPosition pos{image, static_cast<int>(local / static_cast<std::uint64_t>(cols)),
                            static_cast<int>(local % static_cast<std::uint64_t>(cols))};
    for (int r = 0; r < p; ++r)
      for (int c = 0; c < p; ++c) out.samples(i, r * p + c) = img.at(pos.row + r, pos.col + c);
    if (positions) positions->push_back(pos);
  }
  out.provenance.push_back({{"op", "sample_patches"},
                            {"patch_size", p},
                            {"n", n},
                            {"images", source.images.size()},
                            {"seed", rng.seed()},
                            {"stream", rng.stream_id()}});
  return out;
}

Matrix dc_complement_basis(Eigen::Index d) {
  if (d < 2) throw std::invalid_argument("DC removal needs at least 2 components");
  Matrix b = Matrix::Zero(d, d - 1);
  for (Eigen::Index k = 1; k < d; ++k) {
    const double s = 1.0 / std::sqrt(static_cast<double>(k * (k + 1)));
    b.col(k - 1).head(k).setConstant(s);
    b(k, k - 1) = -static_cast<double>(k) * s;
  }
  return b;
}

nlohmann::json PreprocessFit::to_json() const {
  return {{"op", "preprocess"},
          {"steps", {"log", "center", "dc_complement", "symmetric_whitening"}},
          {"mean", matrix_json(mean.transpose())[0]},
          {"basis", matrix_json(basis)},
          {"whitening", matrix_json(whitening)},
          {"condition_number", condition_number}};
}

PreprocessFit PreprocessFit::from_json(const nlohmann::json& j) {
  try {
    PreprocessFit f;
    f.mean = json_vector(j.at("mean"), "mean");
    f.basis = json_matrix(j.at("basis"), "basis");
    f.whitening = json_matrix(j.at("whitening"), "whitening");
    f.condition_number = j.at("condition_number").get<double>();
    const Eigen::Index d = f.mean.size();
    if (f.basis.rows() != d || f.basis.cols() != d - 1 || f.whitening.rows() != d - 1 || f.whitening.cols() != d - 1) {
      throw DataError("preprocess provenance has inconsistent shapes");
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed preprocess provenance: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("malformed preprocess provenance: ") + e.what());
  }
}

PreprocessFit fit_preprocess(const Matrix& raw) {
  if (raw.rows() < 2) throw DataError("preprocess needs at least 2 samples");
  const Matrix logs = log_intensities(raw);
  PreprocessFit f;
  f.mean = logs.colwise().mean().transpose();
  f.basis = dc_complement_basis(raw.cols());
  const Matrix coords = (logs.rowwise() - f.mean.transpose()) * f.basis;
  const Matrix cov = coords.transpose() * coords / static_cast<double>(raw.rows());
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector& lambda = eig.eigenvalues();
  if (!(lambda.minCoeff() > 1e-12 * lambda.maxCoeff()) || !(lambda.maxCoeff() > 0.0)) {
    throw DataError("preprocess: covariance of the DC-complement coordinates is rank deficient (smallest eigenvalue " +
                    format_double(lambda.minCoeff()) + ")");
  }
  f.whitening = eig.eigenvectors() * lambda.array().rsqrt().matrix().asDiagonal() * eig.eigenvectors().transpose();
  f.whitening = (0.5 * (f.whitening + f.whitening.transpose())).eval();
  f.condition_number = std::sqrt(lambda.maxCoeff() / lambda.minCoeff());
  return f;
}

Matrix apply_preprocess(const PreprocessFit& fit, const Matrix& raw) {
  if (raw.cols() != fit.mean.size()) {
    throw DataError("preprocess expects " + std::to_string(fit.mean.size()) + " components, got " +
                    std::to_string(raw.cols()));
  }
  const Matrix coords = (log_intensities(raw).rowwise() - fit.mean.transpose()) * fit.basis;
  return coords * fit.whitening;
}

DataSet preprocess(const DataSet& raw) {
  const PreprocessFit fit = fit_preprocess(raw.samples);
  DataSet out{apply_preprocess(fit, raw.samples), raw.provenance};
  out.provenance.push_back(fit.to_json());
  return out;
}

PreprocessFit preprocess_fit_from_provenance(const nlohmann::json& provenance) {
  if (provenance.is_array()) {
    for (auto it = provenance.rbegin(); it != provenance.rend(); ++it) {
      if (it->is_object() && it->value("op", "") == "preprocess") return PreprocessFit::from_json(*it);
    }
  }
  throw DataError("provenance has no preprocess entry to replay");
}

DataSet replay(const nlohmann::json& fitted_provenance, const DataSet& raw) {
  const PreprocessFit fit = preprocess_fit_from_provenance(fitted_provenance);
  DataSet out{apply_preprocess(fit, raw.samples), raw.provenance};
  nlohmann::json entry = fit.to_json();
  entry["replayed"] = true;
  out.provenance.push_back(std::move(entry));
  return out;
}

Matrix reconstruct_log_patches(const PreprocessFit& fit, const Matrix& whitened, const Vector& dc) {
  if (whitened.cols() != fit.whitening.rows() || dc.size() != whitened.rows()) {
    throw std::invalid_argument("reconstruct: shape mismatch");
  }
  const Matrix coords = fit.whitening.ldlt().solve(whitened.transpose()).transpose();
  const double unit = 1.0 / std::sqrt(static_cast<double>(fit.mean.size()));
  Matrix out = coords * fit.basis.transpose();
  out += dc * Vector::Constant(fit.mean.size(), unit).transpose();
  return out.rowwise() + fit.mean.transpose();
}

SyntheticSource make_synthetic(const LayerParams& layer) {
  validate(layer);
  if (kind_of(layer) == LayerKind::srbm) throw std::invalid_argument("no exact sampler for SRBM generators");
  const Eigen::Index n = hidden_size(layer);
  check_enumeration_budget(n, kDefaultEnumerationBudget, "synthetic generator hidden states");
  std::vector<Vector> states;
  std::vector<double> log_q;
  for (std::uint64_t b = 0; b < (std::uint64_t{1} << n); ++b) {
    states.push_back(binary_state(b, n));
    log_q.push_back(log_unnorm_hidden_marginal(layer, states.back()));
  }
  const double log_z = log_sum_exp(log_q);
  const LogCategorical pick(log_q);
  SyntheticSource s;
  s.kind = std::string(kind_name(kind_of(layer)));
  s.dims = visible_size(layer);
  s.sample = [layer, states, pick](RngStream& rng) { return sample_visible(layer, states[pick.draw(rng)], rng); };
  s.log_density = [layer, log_z](const Vector& x) { return log_unnorm_visible_marginal(layer, x) - log_z; };
  return s;
}

SyntheticSource make_synthetic(const nlohmann::json& spec) {
  if (!spec.is_object() || !spec.contains("kind") || !spec["kind"].is_string()) {
    throw std::invalid_argument("synthetic spec needs a string \"kind\"");
  }
  const std::string kind = spec["kind"].get<std::string>();
  SyntheticSource s;
  try {
    if (kind == "isotropic_mixture" || kind == "gaussian_mixture") {
      const Matrix means = json_matrix(spec.at("means"), "means");
      std::vector<Matrix> covs;
      if (kind == "isotropic_mixture") {
        const double sigma = spec.at("sigma").get<double>();
        if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
        covs.assign(static_cast<std::size_t>(means.rows()), sigma * sigma * Matrix::Identity(means.cols(), means.cols()));
      } else {
        const auto& cj = spec.at("covariances");
        if (!cj.is_array() || static_cast<Eigen::Index>(cj.size()) != means.rows()) {
          throw std::invalid_argument("need one covariance per mean");
        }
        for (const auto& c : cj) covs.push_back(json_matrix(c, "covariance"));
      }
      s = gaussian_mixture(means, covs, mixture_weights(spec, means.rows()));
    } else if (kind == "grbm" || kind == "rbm") {
      LayerParams layer;
      if (spec.contains("model")) {
        layer = load_layer(spec["model"].get<std::string>());
        if (kind_name(kind_of(layer)) != kind) throw std::invalid_argument("model file is not a " + kind);
      } else {
        const Eigen::Index m = spec.at("visible").get<Eigen::Index>();
        const Eigen::Index n = spec.at("hidden").get<Eigen::Index>();
        const double sd = spec.value("weight_sd", 1.0);
        RngStream rng(spec.value("seed", std::uint64_t{1}), 5);
        const LayerKind k = parse_kind(kind);
        layer = make_zero_layer(k, m, n, spec.value("sigma", 1.0));
        std::visit(
            [&](auto& p) {
              for (Eigen::Index j = 0; j < p.weights.cols(); ++j)
                for (Eigen::Index i = 0; i < p.weights.rows(); ++i) p.weights(i, j) = sd * rng.normal();
              for (Eigen::Index i = 0; i < p.visible_bias.size(); ++i) p.visible_bias[i] = 0.5 * sd * rng.normal();
              for (Eigen::Index j = 0; j < p.hidden_bias.size(); ++j) p.hidden_bias[j] = 0.5 * sd * rng.normal();
            },
            layer);
      }
      s = make_synthetic(layer);
    } else {
      throw std::invalid_argument("unknown synthetic kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("synthetic spec: " + std::string(e.what()));
  }
  s.kind = kind;
  s.spec = spec;
  return s;
}

DataSet synthesize(const SyntheticSource& source, Eigen::Index n, const RngStream& rng, int threads) {
  if (n < 0) throw std::invalid_argument("sample count must be nonnegative");
  DataSet out;
  out.samples.resize(n, source.dims);
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
    RngStream local = rng.substream(i);
    out.samples.row(static_cast<Eigen::Index>(i)) = source.sample(local).transpose();
  });
  out.provenance.push_back(
      {{"op", "synthesize"}, {"spec", source.spec}, {"n", n}, {"seed", rng.seed()}, {"stream", rng.stream_id()}});
  return out;
}

}  // namespace dbneval
