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

#ifndef DBNEVAL_PIPELINE_HPP
#define DBNEVAL_PIPELINE_HPP

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "dbneval/models.hpp"

namespace dbneval {

/// Missing, malformed or unusable input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Samples plus the ordered list of transforms that produced them. Each
/// provenance entry is an object with an "op" field.
struct DataSet {
  Matrix samples;
  nlohmann::json provenance = nlohmann::json::array();

  Eigen::Index size() const { return samples.rows(); }
  Eigen::Index dims() const { return samples.cols(); }
};

void validate(const DataSet& data);

/// Binary dataset file:
///
///   "DBNEVDS\0"  8-byte magic
///   u32          format version (1)
///   u64 N, u64 D
///   u32 + bytes  provenance JSON
///   N*D f64      row-major samples
void save_dataset(const std::string& path, const DataSet& data);
DataSet load_dataset(const std::string& path);

/// Grayscale image with intensities stored row-major as doubles.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

/// Image file: "DBNEVIMG" magic, u32 width, u32 height, u32 bit depth
/// (8 or 16 unsigned, or 64 for f64), then row-major little-endian pixels.
void save_image(const std::string& path, const GrayImage& image, int bit_depth = 16);
GrayImage load_image(const std::string& path);

/// Manifest: {"images": ["a.img", ...]} with paths relative to the manifest.
std::vector<GrayImage> load_image_manifest(const std::string& path);

struct PatchSource {
  std::vector<GrayImage> images;
  int patch_size = 4;
};

struct PatchPosition {
  std::size_t image = 0;
  int row = 0;
  int col = 0;
};

/// n patches at uniform random (image, row, col) positions, flattened
/// row-major. Images are chosen in proportion to their number of positions.
DataSet sample_patches(const PatchSource& source, Eigen::Index n, RngStream& rng,
                       std::vector<PatchPosition>* positions = nullptr);

/// Orthonormal basis (D x D-1) of the complement of the constant vector.
/// Column k is (1, ..., 1, -k, 0, ..., 0) / sqrt(k(k+1)) with k leading ones.
Matrix dc_complement_basis(Eigen::Index d);

/// Fitted parameters of log -> center -> DC removal -> symmetric whitening.
struct PreprocessFit {
  Vector mean;       // D, in the log domain
  Matrix basis;      // D x (D-1)
  Matrix whitening;  // (D-1) x (D-1), symmetric
  double condition_number = 0.0;

  nlohmann::json to_json() const;
  static PreprocessFit from_json(const nlohmann::json& j);
};

PreprocessFit fit_preprocess(const Matrix& raw);
Matrix apply_preprocess(const PreprocessFit& fit, const Matrix& raw);

/// Fits on `raw` and returns the whitened D-1 coordinates. The provenance of
/// `raw` is kept and a "preprocess" entry holding the fit is appended.
DataSet preprocess(const DataSet& raw);

/// Re-applies the last "preprocess" entry of `fitted` to new raw data
/// without refitting.
DataSet replay(const nlohmann::json& fitted_provenance, const DataSet& raw);
PreprocessFit preprocess_fit_from_provenance(const nlohmann::json& provenance);

/// Inverse map back to log intensities. `dc` holds the projection of each
/// centered log patch onto the unit constant vector.
Matrix reconstruct_log_patches(const PreprocessFit& fit, const Matrix& whitened, const Vector& dc);

/// Ground-truth generators for oracle data. Specs are JSON objects:
///   {"kind": "isotropic_mixture", "means": [[...], ...], "sigma": s, "weights": [...]}
///   {"kind": "gaussian_mixture", "means": [[...]], "covariances": [[[...]]], "weights": [...]}
///   {"kind": "grbm", "visible": m, "hidden": n, "sigma": s, "weight_sd": w, "seed": k}
///   {"kind": "rbm", "visible": m, "hidden": n, "weight_sd": w, "seed": k}
/// Weights default to uniform. The grbm and rbm generators draw random
/// parameters from the given seed unless a "model" file path is given.
struct SyntheticSource {
  std::string kind;
  std::function<Vector(RngStream&)> sample;
  std::function<LogValue(const Vector&)> log_density;
  Eigen::Index dims = 0;
  nlohmann::json spec;
};

SyntheticSource make_synthetic(const nlohmann::json& spec);
SyntheticSource make_synthetic(const LayerParams& layer);

/// n rows drawn in parallel, row i from rng.substream(i).
DataSet synthesize(const SyntheticSource& source, Eigen::Index n, const RngStream& rng, int threads = 1);

}  // namespace dbneval

#endif  // DBNEVAL_PIPELINE_HPP
