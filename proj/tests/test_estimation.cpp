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

#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "dbneval/estimation.hpp"
#include "dbneval/training.hpp"
#include "test_support.hpp"

using namespace dbneval;
using namespace dbneval::testing;

namespace {

Matrix random_binary_rows(Eigen::Index n, Eigen::Index m, RngStream& rng) {
  Matrix out(n, m);
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = random_binary(m, rng).transpose();
  return out;
}

LogEstimate exact(LogValue v) { return LogEstimate{v, 0.0, 1}; }

MarginalProvider exact_provider(const DbnModel& dbn) {
  MarginalProvider p = MarginalProvider::analytic(dbn);
  for (std::size_t l = 0; l + 1 < dbn.depth(); ++l) {
    if (p.has(l)) continue;
    const SrbmParams s = std::get<SrbmParams>(dbn.layer(l));
    p.set(l, [s](const Vector& y) { return brute_force_hidden_marginal_srbm(s, y); });
  }
  return p;
}

// Log density of an isotropic Gaussian, written out directly.
double iso_gaussian_log_density(const Vector& x, const Vector& mean, double sigma) {
  return -0.5 * (x - mean).squaredNorm() / (sigma * sigma) -
         0.5 * static_cast<double>(x.size()) * std::log(2 * std::numbers::pi * sigma * sigma);
}

}  // namespace

TEST_CASE("linear_betas") {
  const auto b = linear_betas(4);
  CHECK(b == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  CHECK_THROWS_AS(linear_betas(0), std::invalid_argument);
}

TEST_CASE("base partition functions are exact") {
  RngStream rng(1);
  const RbmParams r{Matrix::Zero(5, 3), random_vector(5, 1.0, rng), random_vector(3, 1.0, rng)};
  const SrbmParams s{Matrix::Zero(4, 3), random_vector(4, 1.0, rng), random_vector(3, 1.0, rng), Matrix::Zero(4, 4)};
  const GrbmParams g{Matrix::Zero(3, 4), random_vector(3, 1.0, rng), random_vector(4, 1.0, rng), 0.7};
  CHECK(base_log_partition(r) == doctest::Approx(joint_enumeration_log_z(r)).epsilon(1e-13));
  CHECK(base_log_partition(s) == doctest::Approx(joint_enumeration_log_z(s)).epsilon(1e-13));
  CHECK(base_log_partition(g) == doctest::Approx(brute_force_log_partition(g)).epsilon(1e-13));
  CHECK_THROWS_AS(base_log_partition(random_rbm(3, 2, rng)), std::invalid_argument);
}

TEST_CASE("AIS with target equal to base has zero weights") {
  RngStream rng(2);
  const std::vector<LayerParams> bases{make_ais_base(random_rbm(6, 4, rng)), make_ais_base(random_srbm(5, 3, rng)),
                                       make_ais_base(random_grbm(3, 5, rng))};
  for (const auto& base : bases) {
    const AisSchedule schedule{linear_betas(20), 16, base};
    const AisRun run = run_ais(base, schedule, RngStream(3));
    for (double w : run.log_weights) CHECK(w == 0.0);
    CHECK(run.log_z_estimate.log_value == base_log_partition(base));
    CHECK(run.log_z_estimate.standard_error == 0.0);
  }
}

TEST_CASE("single-step AIS is plain importance sampling from the base") {
  RngStream rng(4);
  const LayerParams target = random_rbm(5, 4, rng);
  const AisSchedule schedule = make_ais_schedule(target, 8, 1);
  const RngStream root(5);
  const AisRun run = run_ais(target, schedule, root);
  const Vector a = std::get<RbmParams>(schedule.base).visible_bias;
  for (std::size_t c = 0; c < 8; ++c) {
    RngStream chain = root.substream(c);
    Vector x(5);
    for (Eigen::Index i = 0; i < 5; ++i) x[i] = chain.bernoulli(logistic(a[i])) ? 1.0 : 0.0;
    const double w = log_unnorm_visible_marginal(target, x) - log_unnorm_visible_marginal(schedule.base, x);
    CHECK(run.log_weights[c] == doctest::Approx(w).epsilon(1e-14));
  }
}

TEST_CASE("AIS partition function of random RBMs") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    RngStream rng(10 + seed);
    const LayerParams target = random_rbm(12, 10, rng, 0.1);
    const AisRun run = run_ais(target, make_ais_schedule(target, 100, 1000), RngStream(20 + seed));
    CHECK(std::abs(run.log_z_estimate.log_value - brute_force_log_partition(target)) < 0.05);
  }
}

TEST_CASE("AIS partition function of SRBM and GRBM") {
  RngStream rng(6);
  const LayerParams s = random_srbm(8, 6, rng, 0.5);
  const AisRun rs = run_ais(s, make_ais_schedule(s, 200, 500), RngStream(7));
  CHECK(std::abs(rs.log_z_estimate.log_value - brute_force_log_partition(s)) < 0.05);
  const LayerParams g = random_grbm(5, 8, rng, 0.3, 0.8);
  const AisRun rg = run_ais(g, make_ais_schedule(g, 200, 500), RngStream(8));
  CHECK(rg.side == AnnealedSide::hidden);
  CHECK(std::abs(rg.log_z_estimate.log_value - brute_force_log_partition(g)) < 0.05);
}

TEST_CASE("AIS is independent of the thread count") {
  RngStream rng(9);
  const LayerParams target = random_srbm(6, 5, rng);
  const AisSchedule schedule = make_ais_schedule(target, 37, 50);
  const AisRun one = run_ais(target, schedule, RngStream(1), 1);
  const AisRun many = run_ais(target, schedule, RngStream(1), 4);
  CHECK(one.log_weights == many.log_weights);
  CHECK(one.final_samples == many.final_samples);
}

TEST_CASE("AIS rejects mismatched bases") {
  RngStream rng(10);
  const LayerParams target = random_rbm(4, 3, rng);
  const AisSchedule wrong_kind{linear_betas(3), 2, make_zero_layer(LayerKind::srbm, 4, 3)};
  CHECK_THROWS_AS(run_ais(target, wrong_kind, RngStream(1)), std::invalid_argument);
  const AisSchedule wrong_size{linear_betas(3), 2, make_zero_layer(LayerKind::rbm, 5, 3)};
  CHECK_THROWS_AS(run_ais(target, wrong_size, RngStream(1)), std::invalid_argument);
  AisSchedule bad_betas{{0.0, 0.7, 0.5, 1.0}, 2, make_zero_layer(LayerKind::rbm, 4, 3)};
  CHECK_THROWS_AS(run_ais(target, bad_betas, RngStream(1)), std::invalid_argument);
}

TEST_CASE("marginal estimate with zero weights factorizes") {
  RngStream rng(11);
  const SrbmParams target{Matrix::Zero(5, 4), random_vector(5, 1.0, rng), random_vector(4, 1.0, rng),
                          random_lateral(5, 0.5, rng)};
  const AisRun run = run_ais(target, make_ais_schedule(target, 50, 100), RngStream(12));
  const MarginalEstimator est(run, target);
  for (int t = 0; t < 5; ++t) {
    const Vector y = random_binary(4, rng);
    double log_q_y = 0.0;
    for (Eigen::Index j = 0; j < 4; ++j) log_q_y += y[j] * target.hidden_bias[j] - softplus_log(target.hidden_bias[j]);
    CHECK(est.estimate(y).log_value == doctest::Approx(log_q_y + run.log_z_estimate.log_value).epsilon(1e-12));
  }
}

TEST_CASE("marginal estimates of a tiny SRBM match enumeration") {
  RngStream rng(13);
  const SrbmParams target = random_srbm(7, 8, rng, 0.5);
  const AisRun run = run_ais(target, make_ais_schedule(target, 5000, 200), RngStream(14));
  const MarginalEstimator est(run, target);
  int outside = 0;
  for (int t = 0; t < 50; ++t) {
    const Vector y = random_binary(8, rng);
    const LogEstimate e = est.estimate(y);
    if (std::abs(e.log_value - brute_force_hidden_marginal_srbm(target, y)) > 3 * e.standard_error) ++outside;
  }
  CHECK(outside <= 1);
  CHECK(est.cache_size() <= 50);
  const Vector y = random_binary(8, rng);
  CHECK(est.estimate(y).log_value == est.estimate(y).log_value);
  CHECK_THROWS_AS(est.estimate(Vector::Ones(3)), std::invalid_argument);
  CHECK_THROWS_AS(MarginalEstimator(run, random_srbm(7, 8, rng)), std::invalid_argument);
}

TEST_CASE("1-layer estimate is the normalized marginal") {
  RngStream rng(15);
  const LayerParams l = random_rbm(5, 3, rng);
  const DbnModel dbn({l});
  const Vector x = random_binary(5, rng);
  const LogEstimate e = estimate_dbn_log_likelihood(dbn, x, 10, MarginalProvider::analytic(dbn), exact(1.25), rng);
  CHECK(e.log_value == log_unnorm_visible_marginal(l, x) - 1.25);
}

TEST_CASE("initialized second layer gives a zero-variance estimate") {
  RngStream rng(16);
  const GrbmParams g = random_grbm(3, 6, rng, 0.6, 0.7);
  const DbnModel dbn({g, init_srbm_from_grbm(g, 4)});
  const ExactDbnEvaluator truth(dbn);
  const MarginalProvider marginals = MarginalProvider::analytic(dbn);
  for (int n_is : {1, 100}) {
    std::vector<double> values;
    const Vector x = random_vector(3, 1.0, rng);
    for (int r = 0; r < 20; ++r) {
      values.push_back(estimate_dbn_log_likelihood(dbn, x, n_is, marginals, exact(truth.log_partition_top()), rng).log_value);
    }
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    CHECK(var / (values.size() - 1) < 1e-20);
    CHECK(mean == doctest::Approx(ExactDbnEvaluator(DbnModel({g})).log_likelihood(x)).epsilon(1e-10));
  }
}

TEST_CASE("the estimator of p(x) is unbiased") {
  RngStream rng(17);
  const DbnModel dbn({random_rbm(4, 5, rng, 1.0), random_srbm(5, 3, rng, 1.0)});
  const ExactDbnEvaluator truth(dbn);
  const MarginalProvider marginals = exact_provider(dbn);
  const Vector x = random_binary(4, rng);
  const double p = std::exp(truth.log_likelihood(x));
  for (int n_is : {1, 10}) {
    const int reps = 2000;
    double sum = 0.0, sum_sq = 0.0;
    for (int r = 0; r < reps; ++r) {
      const double v = std::exp(
          estimate_dbn_log_likelihood(dbn, x, n_is, marginals, exact(truth.log_partition_top()), rng).log_value);
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / reps;
    const double se = std::sqrt((sum_sq / reps - mean * mean) / (reps - 1));
    CHECK(std::abs(mean - p) < 3 * se);
  }
}

TEST_CASE("the estimate converges with more paths") {
  RngStream rng(18);
  const DbnModel dbn({random_rbm(5, 6, rng, 0.5), random_rbm(6, 4, rng, 0.5), random_srbm(4, 3, rng, 0.5)});
  const ExactDbnEvaluator truth(dbn);
  const MarginalProvider marginals = MarginalProvider::analytic(dbn);
  const Vector x = random_binary(5, rng);
  std::vector<double> errors;
  for (int n_is : {1, 100, 10000}) {
    double err = 0.0;
    for (int r = 0; r < 10; ++r) {
      err += std::abs(estimate_dbn_log_likelihood(dbn, x, n_is, marginals, exact(truth.log_partition_top()), rng).log_value -
                      truth.log_likelihood(x));
    }
    errors.push_back(err / 10);
  }
  CHECK(errors[1] < errors[0]);
  CHECK(errors[2] < errors[1]);
}

TEST_CASE("trained and initialized 2-layer DBN is estimated to 0.01 nats") {
  RngStream rng(23);
  Matrix data(500, 3);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const double s = rng.bernoulli(0.5) ? 1.0 : -1.0;
    for (Eigen::Index j = 0; j < 3; ++j) data(i, j) = s * (j == 1 ? -1.0 : 1.0) + 0.5 * rng.normal();
  }
  TrainConfig c1;
  c1.epochs = 30;
  TrainConfig c2 = c1;
  c2.epochs = 5;
  c2.lr_start = 1e-3;
  const GreedyResult r =
      train_dbn_greedy({{LayerKind::grbm, 6, 0.7, true}, {LayerKind::srbm, 4, 1.0, true}}, data, {c1, c2});
  const ExactDbnEvaluator truth(r.dbn);
  const MarginalProvider marginals = MarginalProvider::analytic(r.dbn);
  for (int t = 0; t < 3; ++t) {
    const Vector x = data.row(t).transpose();
    const LogEstimate e =
        estimate_dbn_log_likelihood(r.dbn, x, 100000, marginals, exact(truth.log_partition_top()), rng);
    CHECK(std::abs(e.log_value - truth.log_likelihood(x)) < 0.01);
  }
}

TEST_CASE("missing interface marginals are reported") {
  RngStream rng(19);
  const DbnModel dbn({random_rbm(4, 3, rng), random_srbm(3, 3, rng), random_rbm(3, 2, rng)});
  const MarginalProvider analytic = MarginalProvider::analytic(dbn);
  CHECK(analytic.has(0));
  CHECK_FALSE(analytic.has(1));
  try {
    estimate_dbn_log_likelihood(dbn, random_binary(4, rng), 3, analytic, exact(0.0), rng);
    FAIL("expected an error");
  } catch (const EstimationError& e) {
    CHECK(std::string(e.what()).find("interface 2") != std::string::npos);
  }
}

TEST_CASE("lower bound") {
  CHECK(bernoulli_entropy(Vector::Constant(6, 0.5)) == doctest::Approx(6 * std::numbers::ln2).epsilon(1e-15));
  CHECK(bernoulli_entropy(Vector{{0.0, 1.0}}) == 0.0);

  RngStream rng(20);
  const GrbmParams g = random_grbm(2, 5, rng, 0.7, 0.6);
  const DbnModel init({g, init_srbm_from_grbm(g, 3)});
  const ExactDbnEvaluator init_truth(init);
  for (int t = 0; t < 5; ++t) {
    const Vector x = random_vector(2, 1.0, rng);
    CHECK(exact_lower_bound(init, x, init_truth.log_partition_top()) ==
          doctest::Approx(init_truth.log_likelihood(x)).epsilon(1e-8));
  }

  int violations = 0;
  for (int t = 0; t < 100; ++t) {
    const DbnModel dbn({random_rbm(3, 4, rng, 1.0), random_srbm(4, 3, rng, 1.0)});
    const ExactDbnEvaluator truth(dbn);
    for (std::uint64_t k = 0; k < 8; ++k) {
      const Vector x = binary_state(k, 3);
      if (exact_lower_bound(dbn, x, truth.log_partition_top()) > truth.log_likelihood(x) + 1e-12) ++violations;
    }
  }
  CHECK(violations == 0);

  const DbnModel dbn({random_rbm(4, 5, rng, 1.0), random_rbm(5, 3, rng, 1.0)});
  const ExactDbnEvaluator truth(dbn);
  const Vector x = random_binary(4, rng);
  const LogEstimate mc = estimate_lower_bound(dbn, x, 20000, exact(truth.log_partition_top()), rng);
  CHECK(std::abs(mc.log_value - exact_lower_bound(dbn, x, truth.log_partition_top())) < 4 * mc.standard_error);
  CHECK_THROWS_AS(exact_lower_bound(DbnModel({random_rbm(4, 3, rng)}), x, 0.0), std::invalid_argument);
}

TEST_CASE("potential log-loss") {
  RngStream rng(21);
  GrbmParams flat{Matrix::Zero(3, 4), random_vector(3, 1.0, rng), random_vector(4, 1.0, rng), 0.8};
  const Matrix data = random_matrix(200, 3, 1.0, rng);
  double expected = 0.0;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    expected -= iso_gaussian_log_density(data.row(r).transpose(), flat.visible_bias, flat.sigma);
  }
  expected /= data.rows() * std::numbers::ln2 * 3;
  CHECK(estimate_potential_log_loss(flat, data, data, 1, rng) == doctest::Approx(expected).epsilon(1e-12));

  const LayerParams g = random_grbm(3, 4, rng, 0.8, 0.5);
  const Matrix one = data.topRows(1);
  RngStream a(1), b(1);
  const double single = estimate_potential_log_loss(g, one, one, 1, a);
  const Vector y = sample_hidden(g, one.row(0).transpose(), b);
  CHECK(single == doctest::Approx(-log_visible_conditional(g, one.row(0).transpose(), y) / std::numbers::ln2 / 3)
                      .epsilon(1e-12));

  const LayerParams rbm = random_rbm(4, 3, rng, 1.0);
  const Matrix bits = random_binary_rows(5, 4, rng);
  RngStream c(2), d(2);
  double manual = 0.0;
  std::vector<Vector> ys;
  for (Eigen::Index r = 0; r < bits.rows(); ++r)
    for (int k = 0; k < 3; ++k) ys.push_back(sample_hidden(rbm, bits.row(r).transpose(), d));
  for (Eigen::Index r = 0; r < bits.rows(); ++r) {
    std::vector<double> terms;
    for (const auto& yy : ys) terms.push_back(log_visible_conditional(rbm, bits.row(r).transpose(), yy));
    manual -= log_mean_exp(terms);
  }
  manual /= bits.rows() * std::numbers::ln2 * 4;
  CHECK(estimate_potential_log_loss(rbm, bits, bits, 3, c, 2) == doctest::Approx(manual).epsilon(1e-12));

  double small = 0.0, large = 0.0;
  for (int s = 0; s < 5; ++s) {
    const Matrix set = random_matrix(2000, 3, 1.0, rng);
    small += estimate_potential_log_loss(g, set.topRows(100), set.topRows(100), 1, rng);
    large += estimate_potential_log_loss(g, set, set, 1, rng);
  }
  CHECK(large > small);
}

TEST_CASE("end-to-end estimator") {
  RngStream rng(22);
  const DbnModel dbn({random_rbm(5, 6, rng, 0.5), random_srbm(6, 5, rng, 0.5), random_rbm(5, 4, rng, 0.5)});
  const ExactDbnEvaluator truth(dbn);
  const Matrix data = random_binary_rows(20, 5, rng);

  EstimatorSettings exact_settings;
  exact_settings.exact_partition = true;
  exact_settings.exact_marginals = true;
  exact_settings.n_is = 20000;
  const DbnLikelihoodEstimator exact_est(dbn, exact_settings, 1, &data);
  CHECK(exact_est.interface_methods() == std::vector<std::string>{"analytic", "exact"});
  CHECK(exact_est.log_partition_top().log_value == truth.log_partition_top());
  const auto values = exact_est.evaluate(data, 5);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const LogEstimate& e = values[static_cast<std::size_t>(i)];
    CHECK(std::abs(e.log_value - truth.log_likelihood(data.row(i).transpose())) < 4 * e.standard_error + 1e-9);
  }

  EstimatorSettings ais;
  ais.n_is = 1000;
  ais.ais_betas = 200;
  ais.top_chains = 200;
  ais.interface_chains = 2000;
  const DbnLikelihoodEstimator one(dbn, ais, 3, &data);
  ais.threads = 3;
  const DbnLikelihoodEstimator three(dbn, ais, 3, &data);
  CHECK(one.interface_methods()[1] == "ais");
  const auto a = one.evaluate(data, 4);
  const auto b = three.evaluate(data, 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].log_value == b[i].log_value);
    const double err = a[i].log_value - truth.log_likelihood(data.row(static_cast<Eigen::Index>(i)).transpose());
    CHECK(std::abs(err) < 4 * a[i].standard_error + 4 * one.log_partition_top().standard_error + 0.05);
  }
}
