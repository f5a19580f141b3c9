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

#include "dbneval/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dbneval {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Eigen::LLT<Matrix> cholesky(const Matrix& cov, const char* what) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw std::domain_error(std::string(what) + ": covariance is not positive definite");
  }
  return llt;
}

// log N(x_n; mean, cov) for every row.
Vector gaussian_rows(const Matrix& data, const Vector& mean, const Matrix& cov) {
  const auto llt = cholesky(cov, "log_density");
  const Matrix& l = llt.matrixLLT();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) log_det += 2.0 * std::log(l(i, i));
  Matrix centered = (data.rowwise() - mean.transpose()).transpose();
  llt.matrixL().solveInPlace(centered);
  const double d = static_cast<double>(data.cols());
  return (-0.5 * centered.colwise().squaredNorm().array() - 0.5 * (d * kLog2Pi + log_det)).matrix().transpose();
}

Vector isotropic_rows(const Matrix& data, const Vector& mean, double sigma) {
  const double d = static_cast<double>(data.cols());
  return (-0.5 * (data.rowwise() - mean.transpose()).rowwise().squaredNorm().array() / (sigma * sigma) -
          0.5 * d * (kLog2Pi + 2.0 * std::log(sigma)))
      .matrix();
}

// Rowwise log-sum-exp of an N x K matrix of log joint terms.
Vector row_lse(const Matrix& terms) {
  Vector out(terms.rows());
  for (Eigen::Index n = 0; n < terms.rows(); ++n) {
    const double hi = terms.row(n).maxCoeff();
    out[n] = hi == kNegInf ? kNegInf : hi + std::log((terms.row(n).array() - hi).exp().sum());
  }
  return out;
}

Matrix second_moment(const Matrix& data) { return data.transpose() * data / static_cast<double>(data.rows()); }

void check_weights(const Vector& w, Eigen::Index k) {
  if (w.size() != k || k < 1) throw std::invalid_argument("mixture weights do not match the component count");
  if ((w.array() <= 0.0).any() || std::abs(w.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("mixture weights must be positive and sum to 1");
  }
}

Matrix moig_terms(const MoigModel& m, const Matrix& data) {
  Matrix t(data.rows(), m.means.rows());
  for (Eigen::Index k = 0; k < m.means.rows(); ++k) {
    t.col(k) = isotropic_rows(data, m.means.row(k).transpose(), m.sigma).array() + std::log(m.weights[k]);
  }
  return t;
}

Matrix mog_terms(const MogModel& m, const Matrix& data) {
  Matrix t(data.rows(), static_cast<Eigen::Index>(m.covariances.size()));
  const Vector zero = Vector::Zero(data.cols());
  for (std::size_t k = 0; k < m.covariances.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    t.col(kk) = gaussian_rows(data, zero, m.covariances[k]).array() + std::log(m.weights[kk]);
  }
  return t;
}

double mog_penalty(const MogModel& m, double lambda) {
  double p = 0.0;
  for (const auto& c : m.covariances) {
    const auto llt = cholesky(c, "fit_em");
    p += llt.solve(Matrix::Identity(c.rows(), c.cols())).trace();
  }
  return 0.5 * lambda * p;
}

void check_data(const Matrix& data, const char* what) {
  if (data.rows() == 0 || data.cols() == 0) throw std::invalid_argument(std::string(what) + " needs nonempty data");
  if (!data.allFinite()) throw std::invalid_argument(std::string(what) + " needs finite data");
}

// Responsibilities from log joint terms; returns the mean log-likelihood.
double responsibilities(const Matrix& terms, Matrix& resp) {
  const Vector lse = row_lse(terms);
  resp = (terms.colwise() - lse).array().exp();
  return lse.mean();
}

}  // namespace

double ridge_epsilon(const Matrix& covariance, double scale) {
  const double trace = covariance.trace();
  return trace > 0.0 ? scale * trace / static_cast<double>(covariance.rows()) : scale;
}

GaussianModel fit_gaussian(const Matrix& data, bool zero_mean, double ridge_scale) {
  check_data(data, "fit_gaussian");
  if (data.rows() <= data.cols()) {
    throw std::invalid_argument("fit_gaussian needs more samples than dimensions (N=" + std::to_string(data.rows()) +
                                ", D=" + std::to_string(data.cols()) + ")");
  }
  GaussianModel g;
  g.mean = zero_mean ? Vector::Zero(data.cols()) : Vector(data.colwise().mean().transpose());
  const Matrix centered = data.rowwise() - g.mean.transpose();
  g.covariance = centered.transpose() * centered / static_cast<double>(data.rows());
  g.covariance.diagonal().array() += ridge_epsilon(g.covariance, ridge_scale);
  cholesky(g.covariance, "fit_gaussian");
  return g;
}

LogValue log_density(const GaussianModel& model, const Vector& x) {
  if (x.size() != model.mean.size()) throw std::invalid_argument("dimension mismatch in log_density");
  return gaussian_rows(x.transpose(), model.mean, model.covariance)[0];
}

LogValue log_density(const MoigModel& model, const Vector& x) {
  if (x.size() != model.means.cols()) throw std::invalid_argument("dimension mismatch in log_density");
  check_weights(model.weights, model.means.rows());
  return row_lse(moig_terms(model, x.transpose()))[0];
}

LogValue log_density(const MogModel& model, const Vector& x) {
  if (model.covariances.empty() || x.size() != model.covariances.front().rows()) {
    throw std::invalid_argument("dimension mismatch in log_density");
  }
  check_weights(model.weights, static_cast<Eigen::Index>(model.covariances.size()));
  return row_lse(mog_terms(model, x.transpose()))[0];
}

LogValue log_density(const BaselineModel& model, const Vector& x) {
  return std::visit([&](const auto& m) { return log_density(m, x); }, model);
}

Vector log_density_rows(const BaselineModel& model, const Matrix& data) {
  return std::visit(
      [&](const auto& m) -> Vector {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, GaussianModel>) {
          if (data.cols() != m.mean.size()) throw std::invalid_argument("dimension mismatch in log_density");
          return gaussian_rows(data, m.mean, m.covariance);
        } else if constexpr (std::is_same_v<M, MoigModel>) {
          if (data.cols() != m.means.cols()) throw std::invalid_argument("dimension mismatch in log_density");
          return row_lse(moig_terms(m, data));
        } else {
          if (m.covariances.empty() || data.cols() != m.covariances.front().rows()) {
            throw std::invalid_argument("dimension mismatch in log_density");
          }
          return row_lse(mog_terms(m, data));
        }
      },
      model);
}

double baseline_log_loss(const BaselineModel& model, const Matrix& data) {
  if (data.rows() == 0) throw std::invalid_argument("log-loss needs a nonempty dataset");
  return -log_density_rows(model, data).mean() / kLn2 / static_cast<double>(data.cols());
}

std::string_view baseline_name(const BaselineModel& model) {
  switch (model.index()) {
    case 0:
      return "gaussian";
    case 1:
      return "moig";
    default:
      return "mog";
  }
}

MoigModel init_moig(int k, double sigma, const Matrix& data, RngStream& rng) {
  check_data(data, "init_moig");
  if (k < 1) throw std::invalid_argument("a mixture needs K >= 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("MoIG sigma must be positive");
  MoigModel m{Matrix(k, data.cols()), sigma, Vector::Constant(k, 1.0 / k)};
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(data.rows()));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<Eigen::Index>(i);
  for (int c = 0; c < k; ++c) {
    const auto remaining = rows.size() - static_cast<std::size_t>(c);
    if (remaining > 0) {
      const auto pick = static_cast<std::size_t>(c) + rng.below(remaining);
      std::swap(rows[static_cast<std::size_t>(c)], rows[pick]);
      m.means.row(c) = data.row(rows[static_cast<std::size_t>(c)]);
    } else {
      m.means.row(c) = data.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(data.rows()))));
    }
  }
  return m;
}

MogModel init_mog(int k, const Matrix& data, RngStream& rng) {
  check_data(data, "init_mog");
  if (k < 1) throw std::invalid_argument("a mixture needs K >= 1");
  const Eigen::Index d = data.cols();
  Matrix base = second_moment(data);
  base.diagonal().array() += ridge_epsilon(base);
  const double scale = 0.1 * base.trace() / static_cast<double>(d);
  MogModel m{{}, Vector::Constant(k, 1.0 / k)};
  for (int c = 0; c < k; ++c) {
    Matrix g(d, d);
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index i = 0; i < d; ++i) g(i, j) = rng.normal();
    m.covariances.push_back(base + scale * g * g.transpose() / static_cast<double>(d));
  }
  return m;
}

EmResult<MoigModel> fit_em(MoigModel model, const Matrix& data, const EmOptions& options, RngStream& rng) {
  check_data(data, "fit_em");
  if (model.means.cols() != data.cols()) throw std::invalid_argument("dimension mismatch in fit_em");
  check_weights(model.weights, model.means.rows());
  const Eigen::Index k = model.means.rows();
  const double n = static_cast<double>(data.rows());
  EmResult<MoigModel> out{std::move(model), {}};
  MoigModel& m = out.model;
  Matrix resp;
  double objective = responsibilities(moig_terms(m, data), resp);
  out.trace.objective.push_back(objective);
  for (int it = 0; it < options.iterations; ++it) {
    const Vector mass = resp.colwise().sum().transpose();
    for (Eigen::Index c = 0; c < k; ++c) {
      if (mass[c] < 1e-12 * n) {
        m.means.row(c) = data.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(data.rows()))));
        out.trace.warnings.push_back("iteration " + std::to_string(it + 1) + ": component " + std::to_string(c) +
                                     " collapsed and was re-seeded");
        m.weights[c] = 1.0 / static_cast<double>(k);
        continue;
      }
      m.means.row(c) = resp.col(c).transpose() * data / mass[c];
      m.weights[c] = mass[c] / n;
    }
    m.weights /= m.weights.sum();
    const double next = responsibilities(moig_terms(m, data), resp);
    out.trace.objective.push_back(next);
    const double gain = next - objective;
    objective = next;
    if (gain < options.tolerance && gain >= 0.0) break;
  }
  return out;
}

EmResult<MogModel> fit_em(MogModel model, const Matrix& data, const EmOptions& options, RngStream& rng) {
  check_data(data, "fit_em");
  if (model.covariances.empty() || model.covariances.front().rows() != data.cols()) {
    throw std::invalid_argument("dimension mismatch in fit_em");
  }
  const auto k = static_cast<Eigen::Index>(model.covariances.size());
  check_weights(model.weights, k);
  const double n = static_cast<double>(data.rows());
  const Matrix moment = second_moment(data);
  const double epsilon = ridge_epsilon(moment, options.ridge_scale);
  const double lambda = epsilon * n;
  EmResult<MogModel> out{std::move(model), {}};
  MogModel& m = out.model;
  out.trace.warnings.push_back("ridge epsilon " + format_double(epsilon));
  Matrix resp;
  double objective = responsibilities(mog_terms(m, data), resp) - mog_penalty(m, lambda) / n;
  out.trace.objective.push_back(objective);
  for (int it = 0; it < options.iterations; ++it) {
    const Vector mass = resp.colwise().sum().transpose();
    for (Eigen::Index c = 0; c < k; ++c) {
      auto& cov = m.covariances[static_cast<std::size_t>(c)];
      if (mass[c] < 1e-12 * n) {
        const Vector x = data.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(data.rows())))).transpose();
        cov = moment + x * x.transpose();
        cov.diagonal().array() += epsilon;
        out.trace.warnings.push_back("iteration " + std::to_string(it + 1) + ": component " + std::to_string(c) +
                                     " collapsed and was re-seeded");
        m.weights[c] = 1.0 / static_cast<double>(k);
        continue;
      }
      const Matrix weighted = data.array().colwise() * resp.col(c).array();
      cov = weighted.transpose() * data;
      cov.diagonal().array() += lambda;
      cov /= mass[c];
      cov = 0.5 * (cov + cov.transpose()).eval();
      m.weights[c] = mass[c] / n;
    }
    m.weights /= m.weights.sum();
    const double next = responsibilities(mog_terms(m, data), resp) - mog_penalty(m, lambda) / n;
    out.trace.objective.push_back(next);
    const double gain = next - objective;
    objective = next;
    if (gain < options.tolerance && gain >= 0.0) break;
  }
  return out;
}

namespace {

template <typename Model, typename Init>
EmResult<Model> best_of_restarts(const Matrix& data, const EmOptions& options, RngStream& rng, Init init) {
  if (options.restarts < 1) throw std::invalid_argument("EM needs at least one restart");
  std::optional<EmResult<Model>> best;
  for (int r = 0; r < options.restarts; ++r) {
    RngStream local = rng.substream(static_cast<std::uint64_t>(r));
    EmResult<Model> result = fit_em(init(local), data, options, local);
    result.trace.restart = r;
    if (!best || result.trace.objective.back() > best->trace.objective.back()) best = std::move(result);
  }
  return std::move(*best);
}

}  // namespace

EmResult<MoigModel> fit_moig(const Matrix& data, int k, double sigma, const EmOptions& options, RngStream& rng) {
  return best_of_restarts<MoigModel>(data, options, rng,
                                     [&](RngStream& local) { return init_moig(k, sigma, data, local); });
}

EmResult<MogModel> fit_mog(const Matrix& data, int k, const EmOptions& options, RngStream& rng) {
  return best_of_restarts<MogModel>(data, options, rng, [&](RngStream& local) { return init_mog(k, data, local); });
}

CvResult cross_validate_sigma(const std::vector<double>& candidates, const Matrix& data, int folds,
                              const CvScorer& scorer, int threads) {
  if (candidates.empty()) throw std::invalid_argument("cross-validation needs at least one candidate");
  if (folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
  if (data.rows() < folds) throw std::invalid_argument("cross-validation needs at least one row per fold");
  for (double s : candidates) {
    if (!(s > 0.0)) throw std::invalid_argument("sigma candidates must be positive");
  }
  const auto f = static_cast<std::size_t>(folds);
  std::vector<double> losses(candidates.size() * f);
  parallel_for(losses.size(), threads, [&](std::size_t idx) {
    const std::size_t c = idx / f;
    const std::size_t fold = idx % f;
    const Eigen::Index begin = static_cast<Eigen::Index>(fold) * data.rows() / folds;
    const Eigen::Index end = static_cast<Eigen::Index>(fold + 1) * data.rows() / folds;
    Matrix train(data.rows() - (end - begin), data.cols());
    train.topRows(begin) = data.topRows(begin);
    train.bottomRows(data.rows() - end) = data.bottomRows(data.rows() - end);
    losses[idx] = scorer(train, data.middleRows(begin, end - begin), candidates[c], fold);
  });
  CvResult out;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    CvRow row;
    row.sigma = candidates[c];
    row.fold_log_loss.assign(losses.begin() + static_cast<std::ptrdiff_t>(c * f),
                             losses.begin() + static_cast<std::ptrdiff_t>((c + 1) * f));
    double sum = 0.0;
    for (double v : row.fold_log_loss) sum += v;
    row.mean_log_loss = sum / static_cast<double>(f);
    double ss = 0.0;
    for (double v : row.fold_log_loss) ss += (v - row.mean_log_loss) * (v - row.mean_log_loss);
    row.standard_error = std::sqrt(ss / static_cast<double>(f - 1) / static_cast<double>(f));
    out.table.push_back(std::move(row));
  }
  const CvRow* best = &out.table.front();
  for (const auto& row : out.table) {
    if (row.mean_log_loss < best->mean_log_loss ||
        (row.mean_log_loss == best->mean_log_loss && row.sigma > best->sigma)) {
      best = &row;
    }
  }
  out.best_sigma = best->sigma;
  return out;
}

CvResult cross_validate_moig_sigma(const std::vector<double>& candidates, const Matrix& data, int folds, int k,
                                   const EmOptions& options, std::uint64_t seed, int threads) {
  return cross_validate_sigma(
      candidates, data, folds,
      [&](const Matrix& train, const Matrix& test, double sigma, std::size_t fold) {
        RngStream rng(seed, fold);
        return baseline_log_loss(fit_moig(train, k, sigma, options, rng).model, test);
      },
      threads);
}

void write_cv_csv(const std::string& path, const CvResult& result) {
  std::string out = "sigma,mean_log_loss_bits,standard_error,folds,selected\n";
  for (const auto& row : result.table) {
    out += format_double(row.sigma) + "," + format_double(row.mean_log_loss) + "," +
           format_double(row.standard_error) + "," + std::to_string(row.fold_log_loss.size()) + "," +
           (row.sigma == result.best_sigma ? "1" : "0") + "\n";
  }
  write_text_file(path, out);
}

Container to_container(const GaussianModel& model) {
  Container c;
  c.tag = "gaussian";
  c.put("mean", model.mean);
  c.put("covariance", model.covariance);
  return c;
}

Container to_container(const MoigModel& model) {
  Container c;
  c.tag = "moig";
  c.put("means", model.means);
  c.put("sigma", Matrix::Constant(1, 1, model.sigma));
  c.put("weights", model.weights);
  return c;
}

Container to_container(const MogModel& model) {
  Container c;
  c.tag = "mog";
  c.put("weights", model.weights);
  for (std::size_t k = 0; k < model.covariances.size(); ++k) {
    c.put("covariance_" + std::to_string(k), model.covariances[k]);
  }
  return c;
}

BaselineModel baseline_from_container(const Container& c) {
  if (c.tag == "gaussian") {
    GaussianModel g{c.get_vector("mean"), c.get("covariance")};
    if (g.covariance.rows() != g.mean.size() || g.covariance.cols() != g.mean.size()) {
      throw FormatError("gaussian covariance shape does not match its mean");
    }
    return g;
  }
  if (c.tag == "moig") {
    MoigModel m{c.get("means"), c.get_scalar("sigma"), c.get_vector("weights")};
    if (m.weights.size() != m.means.rows() || !(m.sigma > 0.0)) throw FormatError("malformed moig container");
    return m;
  }
  if (c.tag == "mog") {
    MogModel m{{}, c.get_vector("weights")};
    for (Eigen::Index k = 0; k < m.weights.size(); ++k) m.covariances.push_back(c.get("covariance_" + std::to_string(k)));
    return m;
  }
  throw FormatError("unknown baseline tag '" + c.tag + "'");
}

}  // namespace dbneval
