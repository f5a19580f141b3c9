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
#include <map>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "dbneval/models.hpp"
#include "test_support.hpp"

using namespace dbneval;
using namespace dbneval::testing;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST_CASE("energy of trivial models") {
  const LayerParams rbm = make_zero_layer(LayerKind::rbm, 3, 2);
  CHECK(energy(rbm, Vector::Ones(3), Vector::Ones(2)) == 0.0);
  GrbmParams g = std::get<GrbmParams>(make_zero_layer(LayerKind::grbm, 3, 2, 0.7));
  g.visible_bias << 0.3, -1.0, 2.0;
  CHECK(energy(g, g.visible_bias, Vector::Ones(2)) == 0.0);
  CHECK_THROWS_AS(energy(rbm, Vector::Ones(4), Vector::Ones(2)), std::invalid_argument);
}

TEST_CASE("joint energy enumeration matches the brute-force partition function") {
  RngStream rng(1);
  for (int t = 0; t < 5; ++t) {
    const LayerParams rbm = random_rbm(3, 2, rng, 1.0);
    CHECK(brute_force_log_partition(rbm) ==
          doctest::Approx(joint_enumeration_log_z(rbm)).epsilon(1e-12));
    const LayerParams srbm = random_srbm(4, 3, rng, 1.0);
    CHECK(brute_force_log_partition(srbm) ==
          doctest::Approx(joint_enumeration_log_z(srbm)).epsilon(1e-12));
  }
}

TEST_CASE("hidden_conditional") {
  const LayerParams zero = make_zero_layer(LayerKind::rbm, 4, 3);
  const Vector p = hidden_conditional(zero, Vector::Ones(4));
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(p[j] == 0.5);

  RngStream rng(2);
  const std::vector<LayerParams> models{random_rbm(3, 4, rng, 1.0), random_grbm(2, 3, rng, 1.0),
                                        random_srbm(3, 4, rng, 1.0)};
  for (const auto& model : models) {
    const Vector x = kind_of(model) == LayerKind::grbm ? random_vector(2, 1.0, rng)
                                                       : random_binary(3, rng);
    double total = 0.0;
    const double log_norm = enumerate_visible_marginal(model, x);
    const auto n = hidden_size(model);
    for (std::uint64_t k = 0; k < (1ULL << n); ++k) {
      const Vector y = binary_state(k, n);
      const double lq = log_hidden_conditional(model, x, y);
      total += std::exp(lq);
      // Bayes posterior q*(x, y) / sum_y q*(x, y).
      CHECK(lq == doctest::Approx(-energy(model, x, y) - log_norm).epsilon(1e-12));
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(hidden_conditional(zero, Vector::Ones(5)), std::invalid_argument);
}

TEST_CASE("tiny GRBM posterior over all hidden states") {
  RngStream rng(3);
  const LayerParams g = random_grbm(2, 3, rng, 1.2, 0.6);
  const Vector x = random_vector(2, 1.0, rng);
  const Vector p = hidden_conditional(g, x);
  std::vector<double> joint(8);
  for (std::uint64_t k = 0; k < 8; ++k) joint[k] = -energy(g, x, binary_state(k, 3));
  const double norm = log_sum_exp(joint);
  for (Eigen::Index j = 0; j < 3; ++j) {
    double marginal = 0.0;
    for (std::uint64_t k = 0; k < 8; ++k)
      if ((k >> j) & 1U) marginal += std::exp(joint[k] - norm);
    CHECK(p[j] == doctest::Approx(marginal).epsilon(1e-12));
  }
}

TEST_CASE("sample_visible: GRBM with zero weights has mean b") {
  GrbmParams g = std::get<GrbmParams>(make_zero_layer(LayerKind::grbm, 3, 2, 0.5));
  g.visible_bias << 1.0, -2.0, 0.25;
  RngStream rng(4);
  Vector sum = Vector::Zero(3);
  const int n = 100000;
  const Vector y = Vector::Ones(2);
  for (int i = 0; i < n; ++i) sum += sample_visible(g, y, rng);
  const Vector mean = sum / n;
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(std::abs(mean[i] - g.visible_bias[i]) < 4.0 * 0.5 / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("sample_visible: RBM state frequencies match q(x|y)") {
  RngStream rng(5);
  const LayerParams rbm = random_rbm(3, 2, rng, 1.0);
  const Vector y = Vector::Ones(2);
  std::vector<double> counts(8, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[binary_index(sample_visible(rbm, y, rng))] += 1.0;
  std::vector<double> joint(8);
  for (std::uint64_t k = 0; k < 8; ++k) joint[k] = -energy(rbm, binary_state(k, 3), y);
  const double norm = log_sum_exp(joint);
  for (std::uint64_t k = 0; k < 8; ++k) {
    const double p = std::exp(joint[k] - norm);
    CHECK(std::abs(counts[k] / n - p) < 3.0 * binomial_se(p, n));
    CHECK(std::exp(log_visible_conditional(rbm, binary_state(k, 3), y)) ==
          doctest::Approx(p).epsilon(1e-12));
  }
}

TEST_CASE("sample_visible: SRBM with L = 0 reduces to the factorial conditional") {
  RngStream rng(6);
  SrbmParams s = random_srbm(4, 3, rng, 1.0);
  s.lateral.setZero();
  const Vector y = random_binary(3, rng);
  const Vector expected = (s.weights * y + s.visible_bias).unaryExpr([](double a) { return logistic(a); });
  Vector x = Vector::Zero(4);
  Vector freq = Vector::Zero(4);
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    x = sample_visible(s, y, rng, x);
    freq += x;
  }
  freq /= n;
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(std::abs(freq[i] - expected[i]) < 3.0 * binomial_se(expected[i], n));
  }
  CHECK_THROWS_AS(sample_visible(s, y, rng), std::invalid_argument);
}

TEST_CASE("SRBM sequential Gibbs leaves q(x|y) invariant") {
  RngStream rng(7);
  const SrbmParams s = random_srbm(4, 3, rng, 1.0);
  const Vector y = random_binary(3, rng);
  std::vector<double> logp(16);
  for (std::uint64_t k = 0; k < 16; ++k) logp[k] = -energy(s, binary_state(k, 4), y);
  const double norm = log_sum_exp(logp);
  std::vector<double> p(16), cdf(16);
  double acc = 0.0;
  for (std::uint64_t k = 0; k < 16; ++k) {
    p[k] = std::exp(logp[k] - norm);
    acc += p[k];
    cdf[k] = acc;
  }
  const int n = 100000;
  std::vector<double> before(16, 0.0), after(16, 0.0);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform() * acc;
    std::uint64_t k = 0;
    while (k < 15 && cdf[k] < u) ++k;
    before[k] += 1.0;
    Vector x = binary_state(k, 4);
    gibbs_sweep_visible(s, y, x, rng);
    after[binary_index(x)] += 1.0;
  }
  for (std::uint64_t k = 0; k < 16; ++k) {
    CHECK(std::abs(before[k] / n - p[k]) < 3.0 * binomial_se(p[k], n));
    CHECK(std::abs(after[k] / n - p[k]) < 3.0 * binomial_se(p[k], n));
  }
}

TEST_CASE("mean_field_visible") {
  RngStream rng(8);
  SrbmParams s = random_srbm(5, 3, rng, 1.0);
  const Vector y = random_binary(3, rng);
  const Vector drive = s.weights * y + s.visible_bias;

  SrbmParams decoupled = s;
  decoupled.lateral.setZero();
  const Vector one = mean_field_visible(decoupled, y, 1, 0.0);
  for (Eigen::Index i = 0; i < 5; ++i) CHECK(one[i] == doctest::Approx(logistic(drive[i])).epsilon(1e-15));

  const Vector frozen = mean_field_visible(s, y, 1, 0.999);
  for (Eigen::Index i = 0; i < 5; ++i) CHECK(std::abs(frozen[i] - 0.5) <= 0.0005 + 1e-15);

  s.lateral = random_lateral(5, 0.5, rng);
  const Vector mu = mean_field_visible(s, y, 500, 0.2);
  const Vector residual =
      mu - (s.lateral * mu + drive).unaryExpr([](double a) { return logistic(a); });
  CHECK(residual.cwiseAbs().maxCoeff() < 1e-6);

  CHECK_THROWS_AS(mean_field_visible(s, y, 0, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(mean_field_visible(s, y, 5, 1.0), std::invalid_argument);
}

TEST_CASE("analytic visible marginal equals enumeration over hidden states") {
  const LayerParams zero = make_zero_layer(LayerKind::rbm, 3, 5);
  CHECK(log_unnorm_visible_marginal(zero, Vector::Ones(3)) ==
        doctest::Approx(5.0 * std::log(2.0)).epsilon(1e-15));

  RngStream rng(9);
  for (int t = 0; t < 20; ++t) {
    const std::vector<LayerParams> models{random_rbm(4, 5, rng, 1.0), random_srbm(4, 5, rng, 1.0),
                                          random_grbm(3, 5, rng, 1.0, 0.7)};
    for (const auto& model : models) {
      const Vector x = kind_of(model) == LayerKind::grbm ? random_vector(3, 1.0, rng)
                                                         : random_binary(4, rng);
      CHECK(rel_err(std::exp(log_unnorm_visible_marginal(model, x)),
                    std::exp(enumerate_visible_marginal(model, x))) < 1e-10);
    }
  }
}

TEST_CASE("analytic hidden marginal") {
  RngStream rng(10);
  RbmParams r = std::get<RbmParams>(make_zero_layer(LayerKind::rbm, 4, 3));
  r.hidden_bias << 0.5, -1.0, 2.0;
  const Vector y = Vector::Ones(3);
  CHECK(log_unnorm_hidden_marginal(r, y) ==
        doctest::Approx(1.5 + 4.0 * std::log(2.0)).epsilon(1e-15));

  GrbmParams g = std::get<GrbmParams>(make_zero_layer(LayerKind::grbm, 2, 3, 0.6));
  g.hidden_bias << 0.5, -1.0, 2.0;
  g.visible_bias << 3.0, -1.0;
  CHECK(log_unnorm_hidden_marginal(g, y) ==
        doctest::Approx(std::log(2.0 * std::numbers::pi * 0.36) + 1.5).epsilon(1e-14));

  // Quadrature of exp(-E(x, y)) over x for a tiny GRBM.
  const GrbmParams q = random_grbm(2, 3, rng, 0.7, 0.8);
  for (std::uint64_t k = 0; k < 8; ++k) {
    const Vector yk = binary_state(k, 3);
    const Vector mu = q.visible_bias + q.sigma * (q.weights * yk);
    const double span = 12.0 * q.sigma;
    const double integral = quadrature_2d(
        [&](double a, double b) {
          Vector x(2);
          x << a, b;
          return std::exp(-energy(q, x, yk));
        },
        mu[0] - span, mu[0] + span, mu[1] - span, mu[1] + span, 401);
    CHECK(rel_err(std::exp(log_unnorm_hidden_marginal(q, yk)), integral) < 1e-6);
  }

  CHECK_THROWS_WITH_AS(log_unnorm_hidden_marginal(random_srbm(3, 2, rng), Vector::Ones(2)),
                       "hidden marginal not analytic for SRBM", std::invalid_argument);
}

TEST_CASE("brute_force_log_partition") {
  CHECK(brute_force_log_partition(make_zero_layer(LayerKind::rbm, 3, 4)) ==
        doctest::Approx(7.0 * std::log(2.0)).epsilon(1e-15));

  RngStream rng(11);
  for (int t = 0; t < 10; ++t) {
    const LayerParams r = random_rbm(6, 7, rng, 1.0);
    const double v = brute_force_log_partition(r, kDefaultEnumerationBudget, EnumerationSide::visible);
    const double h = brute_force_log_partition(r, kDefaultEnumerationBudget, EnumerationSide::hidden);
    CHECK(std::abs(v - h) < 1e-10);
  }

  const double sigma = 0.9;
  const LayerParams g = make_zero_layer(LayerKind::grbm, 2, 1, sigma);
  CHECK(brute_force_log_partition(g) ==
        doctest::Approx(std::log(2.0 * (2.0 * std::numbers::pi * sigma * sigma))).epsilon(1e-14));

  CHECK_THROWS_AS(brute_force_log_partition(make_zero_layer(LayerKind::rbm, 30, 30)),
                  EnumerationBudgetExceeded);
  CHECK_THROWS_AS(brute_force_log_partition(make_zero_layer(LayerKind::rbm, 8, 8), 16),
                  EnumerationBudgetExceeded);
}

TEST_CASE("brute_force_hidden_marginal_srbm") {
  RngStream rng(12);
  SrbmParams s = random_srbm(5, 4, rng, 1.0);
  SrbmParams no_lateral = s;
  no_lateral.lateral.setZero();
  const RbmParams as_rbm{s.weights, s.visible_bias, s.hidden_bias};
  for (std::uint64_t k = 0; k < 16; ++k) {
    const Vector y = binary_state(k, 4);
    CHECK(std::abs(brute_force_hidden_marginal_srbm(no_lateral, y) -
                   log_unnorm_hidden_marginal(as_rbm, y)) < 1e-10);
  }

  SrbmParams no_weights = s;
  no_weights.weights.setZero();
  const double base = brute_force_hidden_marginal_srbm(no_weights, Vector::Zero(4));
  for (std::uint64_t k = 0; k < 16; ++k) {
    const Vector y = binary_state(k, 4);
    CHECK(brute_force_hidden_marginal_srbm(no_weights, y) - no_weights.hidden_bias.dot(y) ==
          doctest::Approx(base).epsilon(1e-13));
  }

  const SrbmParams big = random_srbm(8, 5, rng, 0.7);
  std::vector<double> terms;
  for (std::uint64_t k = 0; k < 32; ++k) terms.push_back(brute_force_hidden_marginal_srbm(big, binary_state(k, 5)));
  CHECK(log_sum_exp(terms) == doctest::Approx(brute_force_log_partition(big)).epsilon(1e-12));

  CHECK_THROWS_AS(brute_force_hidden_marginal_srbm(big, Vector::Zero(5), 8), EnumerationBudgetExceeded);
}

TEST_CASE("GRBM density equals its explicit Gaussian mixture") {
  RngStream rng(13);
  const GrbmParams g = random_grbm(4, 6, rng, 0.6, 0.7);
  const double log_z = brute_force_log_partition(g);
  const double s2 = g.sigma * g.sigma;
  for (int t = 0; t < 20; ++t) {
    const Vector x = random_vector(4, 1.5, rng);
    const double density = std::exp(log_unnorm_visible_marginal(g, x) - log_z);
    double mixture = 0.0;
    for (std::uint64_t k = 0; k < 64; ++k) {
      const Vector y = binary_state(k, 6);
      const double prior = std::exp(log_unnorm_hidden_marginal(g, y) - log_z);
      const Vector mu = g.visible_bias + g.sigma * (g.weights * y);
      mixture += prior * std::exp(-(x - mu).squaredNorm() / (2.0 * s2)) /
                 std::pow(2.0 * std::numbers::pi * s2, 2.0);
    }
    CHECK(rel_err(density, mixture) < 1e-10);
  }
}

TEST_CASE("validate rejects malformed layers") {
  GrbmParams g = std::get<GrbmParams>(make_zero_layer(LayerKind::grbm, 2, 2));
  g.sigma = 0.0;
  CHECK_THROWS_AS(validate(g), std::invalid_argument);
  SrbmParams s = std::get<SrbmParams>(make_zero_layer(LayerKind::srbm, 3, 2));
  s.lateral(0, 1) = 1.0;
  CHECK_THROWS_AS(validate(s), std::invalid_argument);
  s.lateral(1, 0) = 1.0;
  CHECK_NOTHROW(validate(s));
  s.lateral(2, 2) = 0.5;
  CHECK_THROWS_AS(validate(s), std::invalid_argument);
  RbmParams r = std::get<RbmParams>(make_zero_layer(LayerKind::rbm, 2, 2));
  r.visible_bias = Vector::Zero(3);
  CHECK_THROWS_AS(validate(r), std::invalid_argument);

  RngStream rng(1);
  const LayerParams fresh = init_layer(LayerKind::srbm, 4, 3, rng);
  CHECK_NOTHROW(validate(fresh));
  CHECK(std::get<SrbmParams>(fresh).hidden_bias == Vector::Constant(3, -1.0));
  CHECK(std::get<SrbmParams>(fresh).visible_bias == Vector::Zero(4));
}
