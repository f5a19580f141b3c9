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

#include "dbneval/oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "dbneval/baselines.hpp"
#include "dbneval/dbn.hpp"
#include "dbneval/estimation.hpp"
#include "dbneval/pipeline.hpp"
#include "dbneval/serialization.hpp"
#include "dbneval/training.hpp"

namespace dbneval {

namespace {

using EnergyFn = std::function<double(const LayerParams&, const Vector&, const Vector&)>;

// Energies written out directly from the parameter definitions.
double reference_energy(const LayerParams& layer, const Vector& x, const Vector& y) {
  return std::visit(
      [&](const auto& p) -> double {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, GrbmParams>) {
          return (x - p.visible_bias).squaredNorm() / (2.0 * p.sigma * p.sigma) - x.dot(p.weights * y) / p.sigma -
                 p.hidden_bias.dot(y);
        } else {
          double e = -x.dot(p.weights * y) - p.visible_bias.dot(x) - p.hidden_bias.dot(y);
          if constexpr (std::is_same_v<P, SrbmParams>) e -= 0.5 * x.dot(p.lateral * x);
          return e;
        }
      },
      layer);
}

struct Context {
  OracleOptions options;
  EnergyFn energy;

  RngStream rng(std::uint64_t check) const { return RngStream(options.seed, 500 + check); }
};

Matrix gaussian_matrix(Eigen::Index r, Eigen::Index c, double sd, RngStream& rng) {
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = sd * rng.normal();
  return m;
}

LayerParams random_layer(LayerKind kind, Eigen::Index m, Eigen::Index n, double sd, RngStream& rng) {
  LayerParams layer = make_zero_layer(kind, m, n, 0.8);
  std::visit(
      [&](auto& p) {
        p.weights = gaussian_matrix(m, n, sd, rng);
        p.visible_bias = gaussian_matrix(m, 1, sd, rng).col(0);
        p.hidden_bias = gaussian_matrix(n, 1, sd, rng).col(0);
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, SrbmParams>) {
          const Matrix a = gaussian_matrix(m, m, sd, rng);
          p.lateral = a + a.transpose();
          p.lateral.diagonal().setZero();
        }
      },
      layer);
  return layer;
}

Vector random_bits(Eigen::Index n, RngStream& rng) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return v;
}

double lse_over_hidden(const EnergyFn& energy, const LayerParams& layer, const Vector& x) {
  const Eigen::Index n = hidden_size(layer);
  std::vector<double> t;
  for (std::uint64_t b = 0; b < (std::uint64_t{1} << n); ++b) t.push_back(-energy(layer, x, binary_state(b, n)));
  return log_sum_exp(t);
}

double lse_over_visible(const EnergyFn& energy, const LayerParams& layer, const Vector& y) {
  const Eigen::Index m = visible_size(layer);
  std::vector<double> t;
  for (std::uint64_t a = 0; a < (std::uint64_t{1} << m); ++a) t.push_back(-energy(layer, binary_state(a, m), y));
  return log_sum_exp(t);
}

OracleResult check_marginal_consistency(const Context& ctx) {
  RngStream rng = ctx.rng(1);
  double worst = 0.0;
  const std::vector<LayerParams> layers{random_layer(LayerKind::rbm, 6, 5, 0.7, rng),
                                        random_layer(LayerKind::srbm, 5, 4, 0.7, rng),
                                        random_layer(LayerKind::grbm, 3, 4, 0.7, rng)};
  for (const auto& layer : layers) {
    for (int t = 0; t < 5; ++t) {
      const Vector x = kind_of(layer) == LayerKind::grbm ? Vector(gaussian_matrix(3, 1, 1.0, rng).col(0))
                                                         : random_bits(visible_size(layer), rng);
      worst = std::max(worst, std::abs(log_unnorm_visible_marginal(layer, x) - lse_over_hidden(ctx.energy, layer, x)));
    }
  }
  for (int t = 0; t < 5; ++t) {
    const Vector y = random_bits(5, rng);
    worst = std::max(worst, std::abs(log_unnorm_hidden_marginal(layers[0], y) - lse_over_visible(ctx.energy, layers[0], y)));
    const Vector ys = random_bits(4, rng);
    worst = std::max(worst, std::abs(brute_force_hidden_marginal_srbm(std::get<SrbmParams>(layers[1]), ys) -
                                     lse_over_visible(ctx.energy, layers[1], ys)));
  }
  return {"marginal_consistency", worst < 1e-9, worst, 1e-9, "max |analytic - enumerated| log marginal"};
}

OracleResult check_partition_function(const Context& ctx) {
  RngStream rng = ctx.rng(2);
  double worst = 0.0;
  for (LayerKind kind : {LayerKind::rbm, LayerKind::srbm}) {
    for (int t = 0; t < 3; ++t) {
      const LayerParams layer = random_layer(kind, 5, 4, 0.8, rng);
      std::vector<double> joint;
      for (std::uint64_t a = 0; a < 32; ++a) {
        for (std::uint64_t b = 0; b < 16; ++b) joint.push_back(-ctx.energy(layer, binary_state(a, 5), binary_state(b, 4)));
      }
      worst = std::max(worst, std::abs(brute_force_log_partition(layer) - log_sum_exp(joint)));
    }
  }
  return {"partition_function", worst < 1e-9, worst, 1e-9, "max |log Z - joint enumeration|"};
}

OracleResult check_grbm_mixture(const Context& ctx) {
  RngStream rng = ctx.rng(3);
  const LayerParams layer = random_layer(LayerKind::grbm, 4, 6, 0.5, rng);
  const auto& g = std::get<GrbmParams>(layer);
  const double log_z = brute_force_log_partition(layer);
  // Mixture weights from integrating each component's Gaussian factor.
  std::vector<double> log_w;
  std::vector<Vector> means;
  for (std::uint64_t b = 0; b < 64; ++b) {
    const Vector y = binary_state(b, 6);
    const Vector mu = g.visible_bias + g.sigma * g.weights * y;
    means.push_back(mu);
    log_w.push_back(g.hidden_bias.dot(y) + (mu.squaredNorm() - g.visible_bias.squaredNorm()) / (2 * g.sigma * g.sigma));
  }
  const double lse_w = log_sum_exp(log_w);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const Vector x = gaussian_matrix(4, 1, 1.5, rng).col(0);
    std::vector<double> terms;
    for (std::size_t k = 0; k < means.size(); ++k) {
      terms.push_back(log_w[k] - lse_w - 2.0 * std::log(2 * std::numbers::pi * g.sigma * g.sigma) -
                      (x - means[k]).squaredNorm() / (2 * g.sigma * g.sigma));
    }
    const double mixture = std::exp(log_sum_exp(terms));
    const double density = std::exp(log_unnorm_visible_marginal(layer, x) - log_z);
    worst = std::max(worst, std::abs(density - mixture) / mixture);
  }
  return {"grbm_mixture", worst < 1e-10, worst, 1e-10, "max relative density error, m=4, n=6"};
}

OracleResult check_exact_likelihood(const Context& ctx) {
  RngStream rng = ctx.rng(4);
  const LayerParams l1 = random_layer(LayerKind::rbm, 4, 5, 0.8, rng);
  const LayerParams l2 = random_layer(LayerKind::srbm, 5, 3, 0.8, rng);
  const ExactDbnEvaluator eval(DbnModel({l1, l2}));
  std::vector<double> joint2;
  for (std::uint64_t a = 0; a < 32; ++a)
    for (std::uint64_t c = 0; c < 8; ++c) joint2.push_back(-ctx.energy(l2, binary_state(a, 5), binary_state(c, 3)));
  const double log_z2 = log_sum_exp(joint2);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 16; ++s) {
    const Vector x = binary_state(s, 4);
    std::vector<double> terms;
    for (std::uint64_t b = 0; b < 32; ++b) {
      const Vector y = binary_state(b, 5);
      const double log_q_y = lse_over_visible(ctx.energy, l1, y);
      for (std::uint64_t c = 0; c < 8; ++c) {
        terms.push_back(-ctx.energy(l1, x, y) - log_q_y - ctx.energy(l2, y, binary_state(c, 3)) - log_z2);
      }
    }
    worst = std::max(worst, std::abs(eval.log_likelihood(x) - log_sum_exp(terms)));
  }
  return {"exact_likelihood", worst < 1e-10, worst, 1e-10, "2-layer DBN vs triple sum over (y, z)"};
}

// Parameter k of the flattened layer: weights, visible bias, hidden bias,
// then lateral pairs (i < j) for SRBMs.
double& flat_param(LayerParams& layer, std::size_t k, bool& pair) {
  return std::visit(
      [&](auto& p) -> double& {
        pair = false;
        const auto w = static_cast<std::size_t>(p.weights.size());
        if (k < w) return p.weights.data()[k];
        k -= w;
        if (k < static_cast<std::size_t>(p.visible_bias.size())) return p.visible_bias[static_cast<Eigen::Index>(k)];
        k -= static_cast<std::size_t>(p.visible_bias.size());
        if (k < static_cast<std::size_t>(p.hidden_bias.size())) return p.hidden_bias[static_cast<Eigen::Index>(k)];
        k -= static_cast<std::size_t>(p.hidden_bias.size());
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, SrbmParams>) {
          for (Eigen::Index j = 1; j < p.lateral.cols(); ++j) {
            for (Eigen::Index i = 0; i < j; ++i) {
              if (k-- == 0) {
                pair = true;
                return p.lateral(i, j);
              }
            }
          }
        }
        throw std::out_of_range("parameter index");
      },
      layer);
}

std::size_t flat_size(const LayerParams& layer) {
  const auto m = static_cast<std::size_t>(visible_size(layer));
  const auto n = static_cast<std::size_t>(hidden_size(layer));
  return m * n + m + n + (kind_of(layer) == LayerKind::srbm ? m * (m - 1) / 2 : 0);
}

double flat_gradient(const Gradient& g, const LayerParams& layer, std::size_t k) {
  const auto w = static_cast<std::size_t>(g.weights.size());
  if (k < w) return g.weights.data()[k];
  k -= w;
  if (k < static_cast<std::size_t>(g.visible_bias.size())) return g.visible_bias[static_cast<Eigen::Index>(k)];
  k -= static_cast<std::size_t>(g.visible_bias.size());
  if (k < static_cast<std::size_t>(g.hidden_bias.size())) return g.hidden_bias[static_cast<Eigen::Index>(k)];
  k -= static_cast<std::size_t>(g.hidden_bias.size());
  const Eigen::Index m = visible_size(layer);
  for (Eigen::Index j = 1; j < m; ++j)
    for (Eigen::Index i = 0; i < j; ++i)
      if (k-- == 0) return g.lateral(i, j);
  throw std::out_of_range("gradient index");
}

double mean_log_likelihood(const LayerParams& layer, const Matrix& batch) {
  const double log_z = brute_force_log_partition(layer);
  double s = 0.0;
  for (Eigen::Index i = 0; i < batch.rows(); ++i) s += log_unnorm_visible_marginal(layer, batch.row(i).transpose());
  return s / static_cast<double>(batch.rows()) - log_z;
}

OracleResult check_gradient(const Context& ctx) {
  RngStream rng = ctx.rng(5);
  double worst = 0.0;
  const double h = 1e-5;
  for (LayerKind kind : {LayerKind::rbm, LayerKind::grbm, LayerKind::srbm}) {
    for (int t = 0; t < 3; ++t) {
      LayerParams layer = random_layer(kind, 4, 3, 0.5, rng);
      Matrix batch(6, 4);
      for (Eigen::Index i = 0; i < 6; ++i) {
        batch.row(i) = (kind == LayerKind::grbm ? Vector(gaussian_matrix(4, 1, 1.0, rng).col(0)) : random_bits(4, rng))
                           .transpose();
      }
      const Gradient g = exact_ml_gradient(layer, batch);
      double max_diff = 0.0, max_g = 0.0;
      for (std::size_t k = 0; k < flat_size(layer); ++k) {
        bool pair = false;
        LayerParams plus = layer, minus = layer;
        flat_param(plus, k, pair) += h;
        flat_param(minus, k, pair) -= h;
        if (pair) {
          auto& lp = std::get<SrbmParams>(plus).lateral;
          auto& lm = std::get<SrbmParams>(minus).lateral;
          lp = lp.triangularView<Eigen::StrictlyUpper>().toDenseMatrix();
          lp += lp.transpose().eval();
          lm = lm.triangularView<Eigen::StrictlyUpper>().toDenseMatrix();
          lm += lm.transpose().eval();
        }
        const double fd = (mean_log_likelihood(plus, batch) - mean_log_likelihood(minus, batch)) / (2 * h);
        const double an = flat_gradient(g, layer, k);
        max_diff = std::max(max_diff, std::abs(fd - an));
        max_g = std::max(max_g, std::abs(an));
      }
      worst = std::max(worst, max_diff / std::max(max_g, 1e-12));
    }
  }
  return {"gradient", worst < 1e-5, worst, 1e-5, "max |fd - exact|_inf / |exact|_inf over RBM, GRBM, SRBM"};
}

OracleResult check_ais_partition(const Context& ctx) {
  RngStream rng = ctx.rng(6);
  double worst = 0.0;
  for (std::uint64_t t = 0; t < 3; ++t) {
    const LayerParams rbm = random_layer(LayerKind::rbm, 12, 10, 0.1, rng);
    const AisRun run = run_ais(rbm, make_ais_schedule(rbm, 100, 1000), RngStream(ctx.options.seed, 600 + t),
                               ctx.options.threads);
    worst = std::max(worst, std::abs(run.log_z_estimate.log_value - brute_force_log_partition(rbm)));
  }
  return {"ais_partition", worst < 0.05, worst, 0.05, "max |log Z_ais - log Z| in nats, 12x10 RBMs"};
}

OracleResult check_interface_marginals(const Context& ctx) {
  RngStream rng = ctx.rng(7);
  const LayerParams srbm = random_layer(LayerKind::srbm, 6, 5, 0.4, rng);
  const AisRun run = run_ais(srbm, make_ais_schedule(srbm, 5000, 200), RngStream(ctx.options.seed, 700),
                             ctx.options.threads);
  const MarginalEstimator est(run, srbm);
  double worst = 0.0;
  for (std::uint64_t b = 0; b < 32; b += 3) {
    const Vector y = binary_state(b, 5);
    worst = std::max(worst, std::abs(est.estimate(y).log_value -
                                     brute_force_hidden_marginal_srbm(std::get<SrbmParams>(srbm), y)));
  }
  return {"interface_marginals", worst < 0.05, worst, 0.05, "max |log q*_ais(y) - log q*(y)|, SRBM 6x5"};
}

OracleResult check_zero_variance(const Context& ctx) {
  RngStream rng = ctx.rng(8);
  const LayerParams grbm = random_layer(LayerKind::grbm, 4, 3, 0.6, rng);
  const LayerParams top = init_srbm_from_grbm(std::get<GrbmParams>(grbm), 4);
  const DbnModel dbn({grbm, top});
  const LogEstimate z{brute_force_log_partition(top), 0.0, 1};
  const MarginalProvider marginals = MarginalProvider::analytic(dbn);
  const double log_z1 = brute_force_log_partition(grbm);
  double worst_var = 0.0, worst_bias = 0.0;
  for (int t = 0; t < 3; ++t) {
    const Vector x = gaussian_matrix(4, 1, 1.0, rng).col(0);
    for (int n_is : {1, 100}) {
      std::vector<double> v;
      for (int r = 0; r < 10; ++r) v.push_back(estimate_dbn_log_likelihood(dbn, x, n_is, marginals, z, rng).log_value);
      double mean = 0.0;
      for (double e : v) mean += e / static_cast<double>(v.size());
      double var = 0.0;
      for (double e : v) var += (e - mean) * (e - mean) / static_cast<double>(v.size() - 1);
      worst_var = std::max(worst_var, var);
      worst_bias = std::max(worst_bias, std::abs(mean - (log_unnorm_visible_marginal(grbm, x) - log_z1)));
    }
  }
  const bool ok = worst_var < 1e-20 && worst_bias < 1e-9;
  std::ostringstream d;
  d << "sample variance at n_is 1 and 100; |estimate - GRBM log-likelihood| = " << worst_bias;
  return {"zero_variance", ok, worst_var, 1e-20, d.str()};
}

OracleResult check_unbiasedness(const Context& ctx) {
  RngStream rng = ctx.rng(9);
  const DbnModel dbn({random_layer(LayerKind::rbm, 4, 4, 0.8, rng), random_layer(LayerKind::rbm, 4, 3, 0.8, rng)});
  const ExactDbnEvaluator eval(dbn);
  const LogEstimate z{eval.log_partition_top(), 0.0, 1};
  const MarginalProvider marginals = MarginalProvider::analytic(dbn);
  double worst = 0.0;
  for (int n_is : {1, 10}) {
    const Vector x = random_bits(4, rng);
    const double truth = std::exp(eval.log_likelihood(x));
    const int reps = 2000;
    double sum = 0.0, sum_sq = 0.0;
    for (int r = 0; r < reps; ++r) {
      const double p = std::exp(estimate_dbn_log_likelihood(dbn, x, n_is, marginals, z, rng).log_value);
      sum += p;
      sum_sq += p * p;
    }
    const double mean = sum / reps;
    const double se = std::sqrt(std::max(sum_sq / reps - mean * mean, 0.0) / (reps - 1));
    worst = std::max(worst, std::abs(mean - truth) / se);
  }
  return {"unbiasedness", worst < 3.0, worst, 3.0, "max |mean p_hat - p| in Monte Carlo SE, n_is 1 and 10"};
}

OracleResult check_lower_bound(const Context& ctx) {
  RngStream rng = ctx.rng(10);
  double worst = kNegInf;
  for (int t = 0; t < 20; ++t) {
    const DbnModel dbn({random_layer(LayerKind::rbm, 3, 3, 1.0, rng), random_layer(LayerKind::rbm, 3, 2, 1.0, rng)});
    const ExactDbnEvaluator eval(dbn);
    for (std::uint64_t a = 0; a < 8; ++a) {
      const Vector x = binary_state(a, 3);
      worst = std::max(worst, exact_lower_bound(dbn, x, eval.log_partition_top()) - eval.log_likelihood(x));
    }
  }
  return {"lower_bound", worst <= 1e-12, worst, 1e-12, "max (bound - log p(x)) over 20 DBNs x 8 points"};
}

OracleResult check_estimator_vs_truth(const Context& ctx) {
  RngStream rng = ctx.rng(11);
  const LayerParams grbm = random_layer(LayerKind::grbm, 4, 5, 0.4, rng);
  const DbnModel dbn({grbm, random_layer(LayerKind::srbm, 5, 5, 0.4, rng), random_layer(LayerKind::srbm, 5, 4, 0.4, rng)});
  const ExactDbnEvaluator exact(dbn);
  Matrix data(40, 4);
  for (Eigen::Index i = 0; i < data.rows(); ++i) data.row(i) = ancestral_sample(dbn, rng, {50, 50}).transpose();
  EstimatorSettings s;
  s.n_is = 1000;
  s.exact_partition = true;
  s.exact_marginals = true;
  s.threads = ctx.options.threads;
  const DbnLikelihoodEstimator est(dbn, s, ctx.options.seed);
  const auto rows = est.evaluate(data, ctx.options.seed);
  std::vector<double> logs;
  for (const auto& r : rows) logs.push_back(r.log_value);
  double estimated = 0.0;
  for (double v : logs) estimated += v;
  estimated = -estimated / static_cast<double>(logs.size()) / std::numbers::ln2 / 4.0;
  const double truth = average_log_loss(data, [&](const Vector& x) { return exact.log_likelihood(x); });
  const double delta = std::abs(estimated - truth);
  std::ostringstream d;
  d << "true " << truth << " bits, estimated " << estimated << " bits, 3-layer stack, exact Z and marginals";
  return {"estimator_vs_truth", delta < 0.005, delta, 0.005, d.str()};
}

OracleResult check_em(const Context& ctx) {
  RngStream rng = ctx.rng(12);
  double worst_drop = 0.0;
  for (int t = 0; t < 3; ++t) {
    const Matrix centers = gaussian_matrix(3, 3, 2.0, rng);
    Matrix x(300, 3);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      x.row(i) = centers.row(static_cast<Eigen::Index>(rng.below(3))) + gaussian_matrix(1, 3, 0.7, rng);
    }
    EmOptions opts;
    opts.restarts = 1;
    opts.iterations = 50;
    for (const auto& trace : {fit_moig(x, 3, 0.7, opts, rng).trace.objective, fit_mog(x, 2, opts, rng).trace.objective}) {
      for (std::size_t i = 1; i < trace.size(); ++i) worst_drop = std::max(worst_drop, trace[i - 1] - trace[i]);
    }
  }
  const Matrix x = gaussian_matrix(200, 3, 1.0, rng);
  EmOptions one;
  one.restarts = 1;
  const double k1 = (fit_mog(x, 1, one, rng).model.covariances[0] - fit_gaussian(x, true).covariance).cwiseAbs().maxCoeff();
  std::ostringstream d;
  d << "largest per-iteration decrease; K=1 MoG vs Gaussian MLE max diff " << k1;
  return {"em_monotonic", worst_drop <= 1e-8 && k1 < 1e-10, worst_drop, 1e-8, d.str()};
}

OracleResult check_preprocess(const Context& ctx) {
  RngStream rng = ctx.rng(13);
  const Matrix mix = gaussian_matrix(9, 9, 0.4, rng) + Matrix::Identity(9, 9);
  const DataSet raw{(gaussian_matrix(3000, 9, 1.0, rng) * mix).array().exp().matrix(), nlohmann::json::array()};
  const DataSet white = preprocess(raw);
  const Matrix cov = white.samples.transpose() * white.samples / static_cast<double>(white.size());
  const double err = (cov - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff();
  const bool exact_replay = replay(white.provenance, raw).samples == white.samples;
  return {"preprocess", err < 1e-6 && exact_replay && white.dims() == 8, err, 1e-6,
          exact_replay ? "whitened covariance vs identity; replay bit-exact" : "replay differs from fit output"};
}

struct NamedCheck {
  const char* name;
  OracleResult (*run)(const Context&);
};

constexpr NamedCheck kChecks[] = {
    {"marginal_consistency", check_marginal_consistency},
    {"partition_function", check_partition_function},
    {"grbm_mixture", check_grbm_mixture},
    {"exact_likelihood", check_exact_likelihood},
    {"gradient", check_gradient},
    {"ais_partition", check_ais_partition},
    {"interface_marginals", check_interface_marginals},
    {"zero_variance", check_zero_variance},
    {"unbiasedness", check_unbiasedness},
    {"lower_bound", check_lower_bound},
    {"estimator_vs_truth", check_estimator_vs_truth},
    {"em_monotonic", check_em},
    {"preprocess", check_preprocess},
};

}  // namespace

std::vector<std::string> oracle_check_names() {
  std::vector<std::string> names;
  for (const auto& c : kChecks) names.emplace_back(c.name);
  return names;
}

std::vector<OracleResult> run_oracle_suite(const OracleOptions& options, std::ostream& log) {
  if (!options.filter.empty()) {
    const auto names = oracle_check_names();
    if (std::find(names.begin(), names.end(), options.filter) == names.end()) {
      throw std::invalid_argument("unknown oracle check '" + options.filter + "'");
    }
  }
  Context ctx{options, reference_energy};
  if (options.flip_energy_sign) {
    ctx.energy = [](const LayerParams& l, const Vector& x, const Vector& y) { return -reference_energy(l, x, y); };
  }
  std::vector<OracleResult> results;
  for (const auto& c : kChecks) {
    if (!options.filter.empty() && options.filter != c.name) continue;
    const auto start = std::chrono::steady_clock::now();
    OracleResult r;
    try {
      r = c.run(ctx);
    } catch (const std::exception& e) {
      r = {c.name, false, std::nan(""), 0.0, std::string("error: ") + e.what()};
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << (r.passed ? "PASS " : "FAIL ") << r.name << "  measured=" << r.measured << " tol=" << r.tolerance << "  "
        << r.detail << "\n";
    results.push_back(std::move(r));
  }
  return results;
}

nlohmann::json oracle_report(const std::vector<OracleResult>& results) {
  nlohmann::json checks = nlohmann::json::array();
  std::string first_failure;
  for (const auto& r : results) {
    checks.push_back({{"name", r.name},
                      {"passed", r.passed},
                      {"measured", std::isfinite(r.measured) ? nlohmann::json(r.measured) : nlohmann::json(nullptr)},
                      {"tolerance", r.tolerance},
                      {"detail", r.detail}});
    if (!r.passed && first_failure.empty()) first_failure = r.name;
  }
  return {{"checks", checks},
          {"passed", first_failure.empty()},
          {"first_failure", first_failure.empty() ? nlohmann::json(nullptr) : nlohmann::json(first_failure)}};
}

}  // namespace dbneval
