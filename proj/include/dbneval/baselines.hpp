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

#ifndef DBNEVAL_BASELINES_HPP
#define DBNEVAL_BASELINES_HPP

#include <functional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>

#include "dbneval/numerics.hpp"
#include "dbneval/serialization.hpp"

namespace dbneval {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Ridge epsilon * I added to covariance estimates: scale * trace / D, or
/// `scale` itself when the trace is zero.
double ridge_epsilon(const Matrix& covariance, double scale = 1e-6);

struct GaussianModel {
  Vector mean;
  Matrix covariance;
};

struct MoigModel {
  Matrix means;  // K x D
  double sigma = 1.0;
  Vector weights;
};

/// Zero-mean components with full covariances.
struct MogModel {
  std::vector<Matrix> covariances;
  Vector weights;
};

/// MLE mean (or zero) and covariance plus ridge. Throws std::invalid_argument
/// when N <= D and std::domain_error when the covariance is not positive
/// definite after the ridge.
GaussianModel fit_gaussian(const Matrix& data, bool zero_mean = false, double ridge_scale = 1e-6);

LogValue log_density(const GaussianModel& model, const Vector& x);
LogValue log_density(const MoigModel& model, const Vector& x);
LogValue log_density(const MogModel& model, const Vector& x);

struct EmOptions {
  int iterations = 100;
  double tolerance = 1e-8;
  int restarts = 5;
  double ridge_scale = 1e-6;
};

struct EmTrace {
  /// Per-iteration mean objective per data point (nats). For MoG this is the
  /// log-likelihood minus the ridge penalty lambda/2 * sum_k tr(S_k^-1) / N.
  std::vector<double> objective;
  std::vector<std::string> warnings;
  int restart = 0;
};

template <typename Model>
struct EmResult {
  Model model;
  EmTrace trace;
};

MoigModel init_moig(int k, double sigma, const Matrix& data, RngStream& rng);
MogModel init_mog(int k, const Matrix& data, RngStream& rng);

/// EM from a given starting point. MoIG updates means and weights (sigma is
/// fixed); MoG updates covariances and weights with a ridge penalty
/// lambda = epsilon * N, so K = 1 reproduces fit_gaussian(zero_mean) exactly.
/// A component whose responsibility mass vanishes is re-seeded at a random
/// data point and a warning is recorded.
EmResult<MoigModel> fit_em(MoigModel model, const Matrix& data, const EmOptions& options, RngStream& rng);
EmResult<MogModel> fit_em(MogModel model, const Matrix& data, const EmOptions& options, RngStream& rng);

/// options.restarts random starts, keeping the best final objective.
EmResult<MoigModel> fit_moig(const Matrix& data, int k, double sigma, const EmOptions& options, RngStream& rng);
EmResult<MogModel> fit_mog(const Matrix& data, int k, const EmOptions& options, RngStream& rng);

struct CvRow {
  double sigma = 0.0;
  double mean_log_loss = 0.0;  // bits per component, averaged over folds
  double standard_error = 0.0;
  std::vector<double> fold_log_loss;
};

struct CvResult {
  double best_sigma = 0.0;
  std::vector<CvRow> table;
};

/// Held-out log-loss (bits per component) of a model fitted to `train` with
/// scale `sigma`.
using CvScorer = std::function<double(const Matrix& train, const Matrix& test, double sigma, std::size_t fold)>;

/// k-fold cross-validation over contiguous folds. The argmin wins; ties go to
/// the larger sigma.
CvResult cross_validate_sigma(const std::vector<double>& candidates, const Matrix& data, int folds,
                              const CvScorer& scorer, int threads = 1);

/// Cross-validates the shared scale of a K-component MoIG.
CvResult cross_validate_moig_sigma(const std::vector<double>& candidates, const Matrix& data, int folds, int k,
                                   const EmOptions& options, std::uint64_t seed, int threads = 1);

void write_cv_csv(const std::string& path, const CvResult& result);

Container to_container(const GaussianModel& model);
Container to_container(const MoigModel& model);
Container to_container(const MogModel& model);

using BaselineModel = std::variant<GaussianModel, MoigModel, MogModel>;
BaselineModel baseline_from_container(const Container& container);
LogValue log_density(const BaselineModel& model, const Vector& x);

/// Log densities of every row, evaluated in batches.
Vector log_density_rows(const BaselineModel& model, const Matrix& data);

/// Average negative log2-density per component over the rows of `data`.
double baseline_log_loss(const BaselineModel& model, const Matrix& data);

std::string_view baseline_name(const BaselineModel& model);

}  // namespace dbneval

#endif  // DBNEVAL_BASELINES_HPP
