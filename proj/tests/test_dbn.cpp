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
#include <vector>

#include "doctest.h"
#include "dbneval/dbn.hpp"
#include "test_support.hpp"

using namespace dbneval;
using namespace dbneval::testing;

namespace {

// p(x) = sum_{y,z} exp(-E1(x,y)) / q1*(y) * exp(-E2(y,z)) / Z2, every term from
// raw energies.
double double_loop_log_likelihood(const LayerParams& l1, const LayerParams& l2, const Vector& x) {
  const auto m = visible_size(l1);
  const auto n1 = hidden_size(l1);
  const auto n2 = hidden_size(l2);
  const double log_z2 = joint_enumeration_log_z(l2);
  std::vector<double> terms;
  for (std::uint64_t b = 0; b < (1ULL << n1); ++b) {
    const Vector y = binary_state(b, n1);
    std::vector<double> q_star;
    for (std::uint64_t a = 0; a < (1ULL << m); ++a) q_star.push_back(-energy(l1, binary_state(a, m), y));
    const double log_q_y = log_sum_exp(q_star);
    for (std::uint64_t c = 0; c < (1ULL << n2); ++c) {
      terms.push_back(-energy(l1, x, y) - log_q_y - energy(l2, y, binary_state(c, n2)) - log_z2);
    }
  }
  return log_sum_exp(terms);
}

// Pearson statistic of observed counts against exact probabilities.
double chi_square(const std::vector<double>& counts, const std::vector<double>& probs, double n) {
  double chi = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const double e = n * probs[k];
    chi += (counts[k] - e) * (counts[k] - e) / e;
  }
  return chi;
}

}  // namespace

TEST_CASE("DbnModel validation") {
  RngStream rng(1);
  CHECK_THROWS_AS(DbnModel(std::vector<LayerParams>{}), std::invalid_argument);
  CHECK_THROWS_AS(DbnModel({random_rbm(4, 3, rng), random_rbm(4, 2, rng)}), std::invalid_argument);
  CHECK_THROWS_AS(DbnModel({random_rbm(4, 3, rng), random_grbm(3, 2, rng)}), std::invalid_argument);
  CHECK_THROWS_AS(DbnModel({random_srbm(4, 3, rng), random_rbm(3, 2, rng)}), std::invalid_argument);
  const DbnModel ok({random_grbm(4, 3, rng), random_srbm(3, 5, rng), random_rbm(5, 2, rng)});
  CHECK(ok.depth() == 3);
  CHECK(ok.unit_counts() == std::vector<Eigen::Index>{4, 3, 5, 2});
}

TEST_CASE("1-layer likelihood is the normalized visible marginal") {
  RngStream rng(2);
  const LayerParams rbm = random_rbm(5, 4, rng);
  const DbnModel dbn({rbm});
  const Vector x = random_binary(5, rng);
  CHECK(brute_force_log_likelihood(dbn, x) ==
        doctest::Approx(log_unnorm_visible_marginal(rbm, x) - brute_force_log_partition(rbm)).epsilon(1e-14));
}

TEST_CASE("random 2-layer likelihood matches a double loop over (y, z)") {
  RngStream rng(3);
  for (int t = 0; t < 3; ++t) {
    const LayerParams l1 = random_rbm(4, 6, rng, 0.8);
    const LayerParams l2 = random_rbm(6, 5, rng, 0.8);
    const ExactDbnEvaluator eval(DbnModel({l1, l2}));
    for (int s = 0; s < 4; ++s) {
      const Vector x = random_binary(4, rng);
      CHECK(eval.log_likelihood(x) == doctest::Approx(double_loop_log_likelihood(l1, l2, x)).epsilon(1e-10));
    }
    const LayerParams s2 = random_srbm(6, 5, rng, 0.8);
    const ExactDbnEvaluator eval_s(DbnModel({l1, s2}));
    const Vector x = random_binary(4, rng);
    CHECK(eval_s.log_likelihood(x) == doctest::Approx(double_loop_log_likelihood(l1, s2, x)).epsilon(1e-10));
  }
}

TEST_CASE("binary-visible stacks are normalized") {
  RngStream rng(4);
  const std::vector<DbnModel> stacks{
      DbnModel({random_rbm(4, 3, rng, 1.0), random_srbm(3, 4, rng, 1.0)}),
      DbnModel({random_rbm(5, 4, rng, 1.0), random_rbm(4, 3, rng, 1.0), random_srbm(3, 3, rng, 1.0)}),
      DbnModel({random_rbm(3, 5, rng, 1.0), random_srbm(5, 4, rng, 1.0), random_rbm(4, 2, rng, 1.0)})};
  for (const auto& dbn : stacks) {
    const ExactDbnEvaluator eval(dbn);
    const auto m = dbn.visible_size();
    std::vector<double> logs;
    for (std::uint64_t a = 0; a < (1ULL << m); ++a) logs.push_back(eval.log_likelihood(binary_state(a, m)));
    CHECK(std::exp(log_sum_exp(logs)) == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("GRBM-bottom stack integrates to one") {
  RngStream rng(5);
  const DbnModel dbn({random_grbm(2, 3, rng, 0.6, 0.9), random_srbm(3, 3, rng, 0.8)});
  const ExactDbnEvaluator eval(dbn);
  const double total = quadrature_2d(
      [&](double a, double b) { return std::exp(eval.log_likelihood(Vector{{a, b}})); }, -9, 9, -9, 9, 241);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("ancestral samples follow the exact likelihood") {
  RngStream rng(6);
  const std::vector<DbnModel> stacks{DbnModel({random_rbm(4, 3, rng, 0.8)}),
                                     DbnModel({random_rbm(4, 3, rng, 0.8), random_srbm(3, 3, rng, 0.8)})};
  const int n = 20000;
  for (const auto& dbn : stacks) {
    const ExactDbnEvaluator eval(dbn);
    std::vector<double> probs(16), counts(16, 0.0);
    for (std::uint64_t k = 0; k < 16; ++k) probs[k] = std::exp(eval.log_likelihood(binary_state(k, 4)));
    RngStream draws(7, dbn.depth());
    for (int i = 0; i < n; ++i) counts[binary_index(ancestral_sample(dbn, draws, {30, 30}))] += 1.0;
    // 99th percentile of chi-square with 15 degrees of freedom.
    CHECK(chi_square(counts, probs, n) < 30.578);
  }
}

TEST_CASE("ancestral sampling from a zero-weight top layer") {
  RbmParams top = std::get<RbmParams>(make_zero_layer(LayerKind::rbm, 3, 2));
  top.visible_bias << 1.0, -0.5, 0.0;
  const DbnModel dbn({top});
  RngStream rng(8);
  const int n = 20000;
  Vector mean = Vector::Zero(3);
  for (int i = 0; i < n; ++i) mean += ancestral_sample(dbn, rng, {1, 0});
  mean /= n;
  for (Eigen::Index i = 0; i < 3; ++i) {
    const double p = logistic(top.visible_bias[i]);
    CHECK(std::abs(mean[i] - p) < 3.0 * binomial_se(p, n));
  }
  CHECK_THROWS_AS(ancestral_sample(dbn, rng, {0, 0}), std::invalid_argument);
}

TEST_CASE("feed_forward_sample") {
  RngStream rng(9);
  const DbnModel single({random_rbm(3, 2, rng)});
  CHECK(feed_forward_sample(single, Vector::Ones(3), rng).empty());

  RbmParams sat{Matrix::Zero(3, 2), Vector::Zero(3), Vector::Zero(2)};
  sat.weights << 1e6, -1e6, 1e6, -1e6, 1e6, -1e6;
  const DbnModel saturated({LayerParams{sat}, random_rbm(2, 2, rng)});
  const Vector x{{1.0, 0.0, 1.0}};
  for (int i = 0; i < 10; ++i) {
    const auto path = feed_forward_sample(saturated, x, rng);
    REQUIRE(path.size() == 1);
    CHECK(path[0] == Vector{{1.0, 0.0}});
  }

  const LayerParams l1 = random_rbm(4, 3, rng, 1.0);
  const DbnModel two({l1, random_rbm(3, 2, rng)});
  const Vector x0{{1.0, 1.0, 0.0, 1.0}};
  const Vector p = hidden_conditional(l1, x0);
  const int n = 20000;
  Vector freq = Vector::Zero(3);
  for (int i = 0; i < n; ++i) freq += feed_forward_sample(two, x0, rng)[0];
  freq /= n;
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(std::abs(freq[j] - p[j]) < 3.0 * binomial_se(p[j], n));
  CHECK_THROWS_AS(feed_forward_sample(two, Vector::Ones(3), rng), std::invalid_argument);
}

TEST_CASE("average_log_loss") {
  const DbnModel uniform({make_zero_layer(LayerKind::rbm, 6, 2)});
  const ExactDbnEvaluator eval(uniform);
  RngStream rng(10);
  Matrix bits(50, 6);
  for (Eigen::Index i = 0; i < bits.rows(); ++i) bits.row(i) = random_binary(6, rng).transpose();
  CHECK(average_log_loss(bits, [&](const Vector& x) { return eval.log_likelihood(x); }) ==
        doctest::Approx(1.0).epsilon(1e-14));

  const int n = 100000;
  Matrix gauss(n, 1);
  for (int i = 0; i < n; ++i) gauss(i, 0) = rng.normal();
  const auto std_normal = [](const Vector& x) { return -0.5 * std::log(2 * std::numbers::pi) - 0.5 * x.squaredNorm(); };
  const double expected = 0.5 * std::log2(2 * std::numbers::pi * std::numbers::e);
  const double se = std::sqrt(0.5) / std::numbers::ln2 / std::sqrt(double(n));
  CHECK(std::abs(average_log_loss(gauss, std_normal, 4) - expected) < 4 * se);

  CHECK_THROWS_AS(average_log_loss(Matrix(0, 2), std_normal), std::invalid_argument);
  try {
    average_log_loss(bits, [](const Vector& x) { return x[0] > 0.5 ? std::nan("") : 0.0; });
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).rfind("sample ", 0) == 0);
  }
}
