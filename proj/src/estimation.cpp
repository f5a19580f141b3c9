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

#include "dbneval/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

namespace dbneval {

namespace {

double clip_logit(double v) { return std::clamp(v, -10.0, 10.0); }

double rate_logit(double p) {
  const double q = std::clamp(p, 1e-4, 1.0 - 1e-4);
  return clip_logit(std::log(q) - std::log1p(-q));
}

void require_zero_weights(const LayerParams& base) {
  std::visit(
      [](const auto& p) {
        if (p.weights.size() > 0 && p.weights.cwiseAbs().maxCoeff() != 0.0) {
          throw std::invalid_argument("AIS base must have zero weights");
        }
      },
      base);
  if (const auto* s = std::get_if<SrbmParams>(&base)) {
    if (s->lateral.size() > 0 && s->lateral.cwiseAbs().maxCoeff() != 0.0) {
      throw std::invalid_argument("AIS base must have zero lateral couplings");
    }
  }
}

// Logits of the independent base factors on the annealed side.
Vector base_logits(const LayerParams& base) {
  if (const auto* g = std::get_if<GrbmParams>(&base)) return g->hidden_bias;
  return std::visit([](const auto& p) -> Vector { return p.visible_bias; }, base);
}

AnnealedSide side_of(const LayerParams& model) {
  return kind_of(model) == LayerKind::grbm ? AnnealedSide::hidden : AnnealedSide::visible;
}

LogValue log_marginal_on_side(const LayerParams& model, AnnealedSide side, const Vector& v) {
  return side == AnnealedSide::visible ? log_unnorm_visible_marginal(model, v) : log_unnorm_hidden_marginal(model, v);
}

// One sequential single-site Gibbs sweep on log f_t = (1 - t) a'v + t log q*(v)
// (plus constants), with the other side of the target summed out.
class Sweeper {
 public:
  Sweeper(const LayerParams& target, const Vector& base_logits) : target_(target), a_(base_logits) {
    if (const auto* g = std::get_if<GrbmParams>(&target)) {
      linear_ = g->hidden_bias + g->weights.transpose() * g->visible_bias / g->sigma;
      half_norms_ = 0.5 * g->weights.colwise().squaredNorm().transpose();
    }
  }

  void sweep(Vector& v, double t, RngStream& rng) const {
    std::visit([&](const auto& p) { sweep_impl(p, v, t, rng); }, target_);
  }

 private:
  double logit(Eigen::Index i, double d, double t) const { return (1.0 - t) * a_[i] + t * d; }

  template <typename P>
  void sweep_impl(const P& p, Vector& x, double t, RngStream& rng) const {
    const Eigen::Index m = x.size();
    Vector u = p.weights.transpose() * x + p.hidden_bias;
    for (Eigen::Index i = 0; i < m; ++i) {
      double d = 0.0;
      if (t != 0.0) {
        if (x[i] != 0.0) u -= p.weights.row(i).transpose();
        d = p.visible_bias[i];
        if constexpr (std::is_same_v<P, SrbmParams>) d += p.lateral.row(i).dot(x);
        for (Eigen::Index j = 0; j < u.size(); ++j) d += softplus_log(u[j] + p.weights(i, j)) - softplus_log(u[j]);
        x[i] = rng.bernoulli(logistic(logit(i, d, t))) ? 1.0 : 0.0;
        if (x[i] != 0.0) u += p.weights.row(i).transpose();
      } else {
        const double old = x[i];
        x[i] = rng.bernoulli(logistic(a_[i])) ? 1.0 : 0.0;
        if (x[i] != old) u += (x[i] - old) * p.weights.row(i).transpose();
      }
    }
  }

  void sweep_impl(const GrbmParams& g, Vector& y, double t, RngStream& rng) const {
    Vector r = g.weights * y;
    for (Eigen::Index j = 0; j < y.size(); ++j) {
      if (y[j] != 0.0) r -= g.weights.col(j);
      const double d = t != 0.0 ? linear_[j] + r.dot(g.weights.col(j)) + half_norms_[j] : 0.0;
      y[j] = rng.bernoulli(logistic(logit(j, d, t))) ? 1.0 : 0.0;
      if (y[j] != 0.0) r += g.weights.col(j);
    }
  }

  const LayerParams& target_;
  Vector a_;
  Vector linear_;
  Vector half_norms_;
};

std::string bit_key(const Vector& y) {
  std::string key(static_cast<std::size_t>(y.size()), '0');
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    if (y[j] == 1.0) {
      key[static_cast<std::size_t>(j)] = '1';
    } else if (y[j] != 0.0) {
      throw std::invalid_argument("hidden state must be binary");
    }
  }
  return key;
}

LogEstimate estimate_from_terms(const std::vector<double>& terms) {
  if (terms.size() >= 2) return monte_carlo_se(terms);
  return LogEstimate{terms.at(0), 0.0, 1};
}

}  // namespace

std::vector<double> linear_betas(int k) {
  if (k < 1) throw std::invalid_argument("an annealing schedule needs at least one step");
  std::vector<double> b(static_cast<std::size_t>(k) + 1);
  for (int i = 0; i <= k; ++i) b[static_cast<std::size_t>(i)] = static_cast<double>(i) / k;
  b.back() = 1.0;
  return b;
}

LayerParams make_ais_base(const LayerParams& target, const Matrix* data) {
  validate(target);
  const auto m = visible_size(target);
  const auto n = hidden_size(target);
  if (data && data->rows() > 0 && data->cols() != m) {
    throw std::invalid_argument("dimension mismatch: base-rate data does not match the target's visible layer");
  }
  const bool use_data = data && data->rows() > 0;
  if (const auto* g = std::get_if<GrbmParams>(&target)) {
    GrbmParams base{Matrix::Zero(m, n), g->visible_bias, Vector::Zero(n), g->sigma};
    if (use_data) {
      Vector mean = Vector::Zero(n);
      for (Eigen::Index r = 0; r < data->rows(); ++r) mean += hidden_conditional(target, data->row(r).transpose());
      mean /= static_cast<double>(data->rows());
      for (Eigen::Index j = 0; j < n; ++j) base.hidden_bias[j] = rate_logit(mean[j]);
    } else {
      const Vector first = g->hidden_bias + g->weights.transpose() * g->visible_bias / g->sigma +
                           0.5 * g->weights.colwise().squaredNorm().transpose();
      for (Eigen::Index j = 0; j < n; ++j) base.hidden_bias[j] = clip_logit(first[j]);
    }
    return base;
  }
  Vector b(m);
  const Vector& target_b = std::visit([](const auto& p) -> const Vector& { return p.visible_bias; }, target);
  const Vector& target_c = std::visit([](const auto& p) -> const Vector& { return p.hidden_bias; }, target);
  if (use_data) {
    const Vector mean = data->colwise().mean().transpose();
    for (Eigen::Index i = 0; i < m; ++i) b[i] = rate_logit(mean[i]);
  } else {
    for (Eigen::Index i = 0; i < m; ++i) b[i] = clip_logit(target_b[i]);
  }
  if (kind_of(target) == LayerKind::srbm) return SrbmParams{Matrix::Zero(m, n), b, target_c, Matrix::Zero(m, m)};
  return RbmParams{Matrix::Zero(m, n), b, target_c};
}

AisSchedule make_ais_schedule(const LayerParams& target, int chains, int k, const Matrix* data) {
  if (chains < 1) throw std::invalid_argument("AIS needs at least one chain");
  return AisSchedule{linear_betas(k), chains, make_ais_base(target, data)};
}

LogValue base_log_partition(const LayerParams& base) {
  validate(base);
  require_zero_weights(base);
  return std::visit(
      [](const auto& p) -> LogValue {
        double s = 0.0;
        for (Eigen::Index j = 0; j < p.hidden_bias.size(); ++j) s += softplus_log(p.hidden_bias[j]);
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, GrbmParams>) {
          return s + 0.5 * static_cast<double>(p.visible_bias.size()) *
                         std::log(2.0 * std::numbers::pi * p.sigma * p.sigma);
        } else {
          for (Eigen::Index i = 0; i < p.visible_bias.size(); ++i) s += softplus_log(p.visible_bias[i]);
          return s;
        }
      },
      base);
}

std::uint64_t fingerprint(const LayerParams& model) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const double* data, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t k = 0; k < sizeof(double) * static_cast<std::size_t>(n); ++k) {
      h ^= bytes[k];
      h *= 1099511628211ULL;
    }
  };
  const double tag = static_cast<double>(model.index());
  mix(&tag, 1);
  std::visit(
      [&](const auto& p) {
        const double dims[2] = {static_cast<double>(p.weights.rows()), static_cast<double>(p.weights.cols())};
        mix(dims, 2);
        mix(p.weights.data(), p.weights.size());
        mix(p.visible_bias.data(), p.visible_bias.size());
        mix(p.hidden_bias.data(), p.hidden_bias.size());
      },
      model);
  if (const auto* g = std::get_if<GrbmParams>(&model)) mix(&g->sigma, 1);
  if (const auto* s = std::get_if<SrbmParams>(&model)) mix(s->lateral.data(), s->lateral.size());
  return h;
}

AisRun run_ais(const LayerParams& target, const AisSchedule& schedule, const RngStream& rng, int threads) {
  validate(target);
  validate(schedule.base);
  if (kind_of(target) != kind_of(schedule.base)) {
    throw std::invalid_argument("AIS base is a " + std::string(kind_name(kind_of(schedule.base))) +
                                " but the target is a " + std::string(kind_name(kind_of(target))));
  }
  if (visible_size(target) != visible_size(schedule.base) || hidden_size(target) != hidden_size(schedule.base)) {
    throw std::invalid_argument("dimension mismatch between AIS base and target");
  }
  if (const auto* g = std::get_if<GrbmParams>(&target)) {
    const auto& gb = std::get<GrbmParams>(schedule.base);
    if (gb.sigma != g->sigma || gb.visible_bias != g->visible_bias) {
      throw std::invalid_argument("a GRBM AIS base must share the target's sigma and visible bias");
    }
  }
  require_zero_weights(schedule.base);
  const auto& betas = schedule.betas;
  if (betas.size() < 2 || betas.front() != 0.0 || betas.back() != 1.0) {
    throw std::invalid_argument("AIS betas must run from exactly 0 to exactly 1");
  }
  for (std::size_t k = 1; k < betas.size(); ++k) {
    if (!(betas[k] >= betas[k - 1])) throw std::invalid_argument("AIS betas must be nondecreasing");
  }
  if (schedule.chains < 1) throw std::invalid_argument("AIS needs at least one chain");

  AisRun run;
  run.side = side_of(target);
  run.log_z_base = base_log_partition(schedule.base);
  run.n_betas = betas.size();
  run.target_fingerprint = fingerprint(target);
  const Vector a = base_logits(schedule.base);
  const Eigen::Index dim = a.size();
  const auto chains = static_cast<std::size_t>(schedule.chains);
  run.log_weights.assign(chains, 0.0);
  run.final_samples.resize(static_cast<Eigen::Index>(chains), dim);
  const Sweeper sweeper(target, a);

  parallel_for(chains, threads, [&](std::size_t c) {
    RngStream chain = rng.substream(c);
    Vector v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = chain.bernoulli(logistic(a[i])) ? 1.0 : 0.0;
    double log_w = 0.0;
    for (std::size_t k = 1; k < betas.size(); ++k) {
      const double step = betas[k] - betas[k - 1];
      if (step != 0.0) {
        log_w += step * (log_marginal_on_side(target, run.side, v) - log_marginal_on_side(schedule.base, run.side, v));
      }
      sweeper.sweep(v, betas[k], chain);
    }
    run.log_weights[c] = log_w;
    run.final_samples.row(static_cast<Eigen::Index>(c)) = v.transpose();
  });

  if (chains >= 2) {
    run.log_z_estimate = monte_carlo_se(run.log_weights);
  } else {
    run.log_z_estimate = LogEstimate{run.log_weights[0], 0.0, 1};
  }
  run.log_z_estimate.log_value += run.log_z_base;
  return run;
}

MarginalEstimator::MarginalEstimator(const AisRun& run, const LayerParams& target)
    : log_weights_(run.log_weights), log_z_base_(run.log_z_base) {
  if (kind_of(target) == LayerKind::grbm || run.side != AnnealedSide::visible) {
    throw std::invalid_argument("marginal estimation needs a visible-side AIS run of an RBM or SRBM");
  }
  if (run.target_fingerprint != fingerprint(target)) {
    throw std::invalid_argument("the AIS run was produced for a different target");
  }
  if (run.final_samples.rows() == 0) throw std::invalid_argument("AIS run has no samples");
  const Matrix& w = std::visit([](const auto& p) -> const Matrix& { return p.weights; }, target);
  const Vector& c = std::visit([](const auto& p) -> const Vector& { return p.hidden_bias; }, target);
  hidden_input_ = run.final_samples * w;
  hidden_input_.rowwise() += c.transpose();
  offsets_.resize(log_weights_.size());
  for (Eigen::Index r = 0; r < hidden_input_.rows(); ++r) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < hidden_input_.cols(); ++j) s += softplus_log(hidden_input_(r, j));
    offsets_[static_cast<std::size_t>(r)] = log_weights_[static_cast<std::size_t>(r)] - s;
  }
}

LogEstimate MarginalEstimator::estimate(const Vector& y) const {
  if (y.size() != hidden_input_.cols()) {
    throw std::invalid_argument("dimension mismatch: hidden state has " + std::to_string(y.size()) +
                                " entries, model expects " + std::to_string(hidden_input_.cols()));
  }
  const std::string key = bit_key(y);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  const Vector dots = hidden_input_ * y;
  std::vector<double> terms(offsets_.size());
  for (std::size_t n = 0; n < terms.size(); ++n) terms[n] = offsets_[n] + dots[static_cast<Eigen::Index>(n)];
  LogEstimate e = estimate_from_terms(terms);
  e.log_value += log_z_base_;
  std::lock_guard<std::mutex> lock(mutex_);
  cache_.emplace(key, e);
  return e;
}

std::size_t MarginalEstimator::cache_size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return cache_.size();
}

LogEstimate estimate_unnorm_marginal(const AisRun& run, const LayerParams& target, const Vector& y) {
  return MarginalEstimator(run, target).estimate(y);
}

MarginalProvider MarginalProvider::analytic(const DbnModel& dbn) {
  MarginalProvider p(dbn.depth() - 1);
  for (std::size_t l = 0; l + 1 < dbn.depth(); ++l) {
    if (kind_of(dbn.layer(l)) == LayerKind::srbm) continue;
    const LayerParams layer = dbn.layer(l);
    p.set(l, [layer](const Vector& y) { return log_unnorm_hidden_marginal(layer, y); });
  }
  return p;
}

void MarginalProvider::set(std::size_t layer, Fn fn) {
  if (layer >= fns_.size()) fns_.resize(layer + 1);
  fns_[layer] = std::move(fn);
}

LogValue MarginalProvider::operator()(std::size_t layer, const Vector& hidden_state) const {
  if (!has(layer)) {
    throw EstimationError("no marginal provider for interface " + std::to_string(layer + 1) +
                          " (hidden units of layer " + std::to_string(layer + 1) + ")");
  }
  return fns_[layer](hidden_state);
}

LogEstimate estimate_dbn_log_likelihood(const DbnModel& dbn, const Vector& x0, int n_is,
                                        const MarginalProvider& marginals, const LogEstimate& log_z_top,
                                        RngStream& rng) {
  if (n_is < 1) throw std::invalid_argument("n_is must be >= 1");
  if (x0.size() != dbn.visible_size()) {
    throw std::invalid_argument("dimension mismatch: x0 does not match the DBN's visible layer");
  }
  const LogValue log_q1 = log_unnorm_visible_marginal(dbn.layer(0), x0);
  if (dbn.depth() == 1) return LogEstimate{log_q1 - log_z_top.log_value, 0.0, 1};
  for (std::size_t l = 0; l + 1 < dbn.depth(); ++l) {
    if (!marginals.has(l)) {
      throw EstimationError("no marginal provider for interface " + std::to_string(l + 1) +
                            " (hidden units of layer " + std::to_string(l + 1) + ")");
    }
  }
  std::vector<double> terms(static_cast<std::size_t>(n_is));
  for (auto& term : terms) {
    Vector x = x0;
    double r = 0.0;
    for (std::size_t l = 0; l + 1 < dbn.depth(); ++l) {
      x = sample_hidden(dbn.layer(l), x, rng);
      r += log_unnorm_visible_marginal(dbn.layer(l + 1), x) - marginals(l, x);
    }
    require_not_nan(r, "path weight");
    term = r;
  }
  LogEstimate path = estimate_from_terms(terms);
  path.log_value += log_q1 - log_z_top.log_value;
  path.n_samples = terms.size();
  return path;
}

double bernoulli_entropy(const Vector& p) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    const double a = p[j];
    if (a > 0.0) h -= a * std::log(a);
    if (a < 1.0) h -= (1.0 - a) * std::log1p(-a);
  }
  return h;
}

namespace {

void check_two_layer(const DbnModel& dbn, const Vector& x) {
  if (dbn.depth() != 2) throw std::invalid_argument("the lower bound needs a 2-layer DBN");
  if (kind_of(dbn.layer(0)) == LayerKind::srbm) {
    throw std::invalid_argument("the lower bound needs a factorial posterior in the bottom layer");
  }
  if (x.size() != dbn.visible_size()) throw std::invalid_argument("dimension mismatch: x does not match the DBN");
}

}  // namespace

LogEstimate estimate_lower_bound(const DbnModel& dbn, const Vector& x, int n_samples, const LogEstimate& log_z_top,
                                 RngStream& rng) {
  check_two_layer(dbn, x);
  if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
  const LayerParams& bottom = dbn.layer(0);
  const LayerParams& top = dbn.layer(1);
  const double entropy = bernoulli_entropy(hidden_conditional(bottom, x));
  double sum = 0.0, sum_sq = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    const Vector y = sample_hidden(bottom, x, rng);
    const double t = log_unnorm_visible_marginal(top, y) + log_visible_conditional(bottom, x, y);
    sum += t;
    sum_sq += t * t;
  }
  const double n = n_samples;
  const double mean = sum / n;
  const double var = n > 1 ? std::max(0.0, (sum_sq - n * mean * mean) / (n - 1)) : 0.0;
  return LogEstimate{mean + entropy - log_z_top.log_value, std::sqrt(var / n), static_cast<std::size_t>(n_samples)};
}

LogValue exact_lower_bound(const DbnModel& dbn, const Vector& x, LogValue log_z_top, std::uint64_t budget) {
  check_two_layer(dbn, x);
  const LayerParams& bottom = dbn.layer(0);
  const LayerParams& top = dbn.layer(1);
  const Eigen::Index n = hidden_size(bottom);
  check_enumeration_budget(n, budget, "the lower-bound expectation");
  double expectation = 0.0;
  for (std::uint64_t k = 0; k < (std::uint64_t{1} << n); ++k) {
    const Vector y = binary_state(k, n);
    const double q = std::exp(log_hidden_conditional(bottom, x, y));
    if (q == 0.0) continue;
    expectation += q * (log_unnorm_visible_marginal(top, y) + log_visible_conditional(bottom, x, y));
  }
  return expectation + bernoulli_entropy(hidden_conditional(bottom, x)) - log_z_top;
}

double estimate_potential_log_loss(const LayerParams& layer1, const Matrix& eval_set, const Matrix& recon_set,
                                   int k_recon, RngStream& rng, int threads) {
  validate(layer1);
  if (kind_of(layer1) == LayerKind::srbm) {
    throw std::invalid_argument("potential log-loss needs an RBM or GRBM first layer");
  }
  if (eval_set.rows() == 0 || recon_set.rows() == 0) throw std::invalid_argument("potential log-loss needs nonempty sets");
  const Eigen::Index m = visible_size(layer1);
  if (eval_set.cols() != m || recon_set.cols() != m) {
    throw std::invalid_argument("dimension mismatch: data does not match the layer's visible units");
  }
  if (k_recon < 1) throw std::invalid_argument("k_recon must be >= 1");

  const Eigen::Index draws = recon_set.rows() * k_recon;
  Matrix y(draws, hidden_size(layer1));
  for (Eigen::Index r = 0, row = 0; r < recon_set.rows(); ++r) {
    const Vector x0 = recon_set.row(r).transpose();
    for (int k = 0; k < k_recon; ++k) y.row(row++) = sample_hidden(layer1, x0, rng).transpose();
  }

  // log q(x | y_d) = cross(x, d) + row_term(x) + col_term(d).
  Matrix left;
  Matrix right;  // draws x m
  Vector row_term(eval_set.rows());
  Vector col_term(draws);
  if (const auto* g = std::get_if<GrbmParams>(&layer1)) {
    const double s2 = g->sigma * g->sigma;
    left = (eval_set.rowwise() - g->visible_bias.transpose()) / g->sigma;
    right = y * g->weights.transpose();
    row_term = -0.5 * left.rowwise().squaredNorm();
    col_term = -0.5 * right.rowwise().squaredNorm();
    col_term.array() -= 0.5 * static_cast<double>(m) * std::log(2.0 * std::numbers::pi * s2);
  } else {
    const auto& p = std::get<RbmParams>(layer1);
    left = eval_set;
    right = y * p.weights.transpose();
    right.rowwise() += p.visible_bias.transpose();
    row_term.setZero();
    for (Eigen::Index d = 0; d < draws; ++d) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) s += softplus_log(right(d, i));
      col_term[d] = -s;
    }
  }

  constexpr Eigen::Index kBlock = 64;
  const Eigen::Index rows = eval_set.rows();
  const auto blocks = static_cast<std::size_t>((rows + kBlock - 1) / kBlock);
  std::vector<double> log_q(static_cast<std::size_t>(rows));
  const double log_draws = std::log(static_cast<double>(draws));
  parallel_for(blocks, threads, [&](std::size_t b) {
    const Eigen::Index begin = static_cast<Eigen::Index>(b) * kBlock;
    const Eigen::Index count = std::min(kBlock, rows - begin);
    Matrix block = left.middleRows(begin, count) * right.transpose();
    block.rowwise() += col_term.transpose();
    for (Eigen::Index r = 0; r < count; ++r) {
      const double hi = block.row(r).maxCoeff();
      const double s = (block.row(r).array() - hi).exp().sum();
      log_q[static_cast<std::size_t>(begin + r)] = hi + std::log(s) - log_draws + row_term[begin + r];
    }
  });
  double sum = 0.0;
  for (double v : log_q) sum += v;
  return -sum / static_cast<double>(rows) / kLn2 / static_cast<double>(m);
}

DbnLikelihoodEstimator::DbnLikelihoodEstimator(DbnModel dbn, const EstimatorSettings& settings, std::uint64_t seed,
                                               const Matrix* base_data)
    : dbn_(std::move(dbn)), settings_(settings) {
  validate(dbn_);
  if (settings_.n_is < 1 || settings_.ais_betas < 1 || settings_.top_chains < 1 || settings_.grbm_chains < 1 ||
      settings_.interface_chains < 1) {
    throw std::invalid_argument("estimator sample counts must be positive");
  }
  const std::size_t depth = dbn_.depth();
  const RngStream root(seed, 7);

  // States x_0 ... x_{L-1} for fitting AIS base rates.
  std::vector<Matrix> levels;
  if (base_data && base_data->rows() > 0 && settings_.base_rate_rows > 0) {
    if (base_data->cols() != dbn_.visible_size()) {
      throw std::invalid_argument("dimension mismatch: data does not match the DBN's visible layer");
    }
    levels.push_back(base_data->topRows(std::min<Eigen::Index>(base_data->rows(), settings_.base_rate_rows)));
    RngStream feed = root.substream(100);
    for (std::size_t l = 0; l + 1 < depth; ++l) {
      const Matrix& below = levels.back();
      Matrix next(below.rows(), hidden_size(dbn_.layer(l)));
      for (Eigen::Index r = 0; r < below.rows(); ++r) {
        next.row(r) = sample_hidden(dbn_.layer(l), below.row(r).transpose(), feed).transpose();
      }
      levels.push_back(std::move(next));
    }
  }
  auto level = [&](std::size_t l) -> const Matrix* { return l < levels.size() ? &levels[l] : nullptr; };

  const LayerParams& top = dbn_.top();
  if (settings_.exact_partition) {
    log_z_top_ = LogEstimate{brute_force_log_partition(top, settings_.budget), 0.0, 1};
    exact_z_ = true;
  } else {
    const int chains = kind_of(top) == LayerKind::grbm ? settings_.grbm_chains : settings_.top_chains;
    const AisRun run = run_ais(top, make_ais_schedule(top, chains, settings_.ais_betas, level(depth - 1)),
                               root.substream(1), settings_.threads);
    log_z_top_ = run.log_z_estimate;
  }

  marginals_ = MarginalProvider::analytic(dbn_);
  methods_.assign(depth - 1, "analytic");
  estimators_.resize(depth - 1);
  for (std::size_t l = 0; l + 1 < depth; ++l) {
    if (marginals_.has(l)) continue;
    const LayerParams layer = dbn_.layer(l);
    const std::string name = "interface " + std::to_string(l + 1);
    try {
      if (settings_.exact_marginals) {
        const std::uint64_t budget = settings_.budget;
        check_enumeration_budget(visible_size(layer), budget, name + " marginals");
        marginals_.set(l, [layer, budget](const Vector& y) {
          return brute_force_hidden_marginal_srbm(std::get<SrbmParams>(layer), y, budget);
        });
        methods_[l] = "exact";
      } else {
        const AisRun run =
            run_ais(layer, make_ais_schedule(layer, settings_.interface_chains, settings_.ais_betas, level(l)),
                    root.substream(10 + l), settings_.threads);
        auto est = std::make_shared<MarginalEstimator>(run, layer);
        estimators_[l] = est;
        marginals_.set(l, [est](const Vector& y) { return est->estimate(y).log_value; });
        methods_[l] = "ais";
      }
    } catch (const EstimationError&) {
      throw;
    } catch (const std::exception& e) {
      throw EstimationError(name + ": " + e.what());
    }
  }
}

std::vector<LogEstimate> DbnLikelihoodEstimator::evaluate(const Matrix& data, std::uint64_t seed) const {
  return evaluate(data, seed, settings_.n_is);
}

std::vector<LogEstimate> DbnLikelihoodEstimator::evaluate(const Matrix& data, std::uint64_t seed, int n_is) const {
  if (n_is < 1) throw std::invalid_argument("n_is must be at least 1");
  if (data.cols() != dbn_.visible_size()) {
    throw std::invalid_argument("dimension mismatch: data has " + std::to_string(data.cols()) +
                                " columns, the DBN expects " + std::to_string(dbn_.visible_size()));
  }
  const RngStream root(seed, 3);
  std::vector<LogEstimate> out(static_cast<std::size_t>(data.rows()));
  parallel_for(out.size(), settings_.threads, [&](std::size_t i) {
    RngStream rng = root.substream(i);
    try {
      out[i] = estimate_dbn_log_likelihood(dbn_, data.row(static_cast<Eigen::Index>(i)).transpose(), n_is, marginals_, log_z_top_, rng);
    } catch (const EstimationError& e) {
      throw EstimationError("sample " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace dbneval
