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

#ifndef DBNEVAL_MODELS_HPP
#define DBNEVAL_MODELS_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

#include <Eigen/Dense>

#include "dbneval/numerics.hpp"

namespace dbneval {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Binary-visible, binary-hidden RBM:
///   E(x, y) = -x'Wy - b'x - c'y
struct RbmParams {
  Matrix weights;       // m x n
  Vector visible_bias;  // m
  Vector hidden_bias;   // n
};

/// Gaussian-visible RBM with a single scale shared by all visible units:
///   E(x, y) = |x - b|^2 / (2 sigma^2) - x'Wy / sigma - c'y
///
/// Conditionals follow from the energy: q(y_j = 1 | x) = g(w_j'x / sigma + c_j)
/// and q(x | y) = Normal(b + sigma W y, sigma^2 I).
///
/// Integrating x out gives the analytic hidden marginal
///   log q*(y) = (m/2) log(2 pi sigma^2) + c'y + b'Wy / sigma + |Wy|^2 / 2,
/// by completing the square around mu = b + sigma W y:
///   |x-b|^2 - 2 sigma x'Wy = |x - mu|^2 - |mu|^2 + |b|^2,
///   (|mu|^2 - |b|^2) / (2 sigma^2) = b'Wy / sigma + |Wy|^2 / 2.
struct GrbmParams {
  Matrix weights;
  Vector visible_bias;
  Vector hidden_bias;
  double sigma = 1.0;
};

/// RBM with symmetric, zero-diagonal lateral couplings among the visibles:
///   E(x, y) = -x'Wy - b'x - c'y - x'Lx / 2
struct SrbmParams {
  Matrix weights;
  Vector visible_bias;
  Vector hidden_bias;
  Matrix lateral;  // m x m
};

using LayerParams = std::variant<RbmParams, GrbmParams, SrbmParams>;

enum class LayerKind { rbm, grbm, srbm };

std::string_view kind_name(LayerKind kind);
LayerKind parse_kind(std::string_view name);
LayerKind kind_of(const LayerParams& model);

Eigen::Index visible_size(const LayerParams& model);
Eigen::Index hidden_size(const LayerParams& model);

/// Throws std::invalid_argument on shape errors, non-finite entries,
/// sigma <= 0 or a lateral matrix that is not symmetric with zero diagonal.
void validate(const LayerParams& model);

/// Zero-parameter model of the given variant (sigma used for GRBM only).
LayerParams make_zero_layer(LayerKind kind, Eigen::Index visible, Eigen::Index hidden,
                            double sigma = 1.0);

/// Fresh layer for training: weights ~ Normal(0, weight_sd^2), visible
/// biases 0, hidden biases -1, lateral couplings 0.
LayerParams init_layer(LayerKind kind, Eigen::Index visible, Eigen::Index hidden,
                       RngStream& rng, double sigma = 1.0, double weight_sd = 0.01);

class EnumerationBudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kDefaultEnumerationBudget = std::uint64_t{1} << 25;

/// Throws EnumerationBudgetExceeded when 2^bits exceeds the budget.
void check_enumeration_budget(Eigen::Index bits, std::uint64_t budget, std::string_view what);

/// Binary vector whose unit i is bit i of `index`.
Vector binary_state(std::uint64_t index, Eigen::Index bits);
std::uint64_t binary_index(const Vector& state);

// ---------------------------------------------------------------------------
// Energies and conditionals

double energy(const LayerParams& model, const Vector& x, const Vector& y);

/// Total input to each hidden unit (logit of q(y_j = 1 | x)).
Vector hidden_input(const LayerParams& model, const Vector& x);
Vector hidden_conditional(const LayerParams& model, const Vector& x);
Vector sample_hidden(const LayerParams& model, const Vector& x, RngStream& rng);

/// log q(y | x) for the factorial hidden posterior.
double log_hidden_conditional(const LayerParams& model, const Vector& x, const Vector& y);

/// E[x | y]. Not defined for SRBM, whose visible conditional is not factorial.
Vector visible_mean(const LayerParams& model, const Vector& y);

/// RBM: exact factorial draw. GRBM: Normal(b + sigma W y, sigma^2 I).
/// SRBM: one sequential Gibbs sweep over the visibles starting at `current`.
Vector sample_visible(const LayerParams& model, const Vector& y, RngStream& rng,
                      const Vector& current);
/// As above; SRBM requires a starting state and throws here.
Vector sample_visible(const LayerParams& model, const Vector& y, RngStream& rng);

/// In-place sequential Gibbs sweep of SRBM visibles given y.
void gibbs_sweep_visible(const SrbmParams& model, const Vector& y, Vector& x, RngStream& rng);

/// Damped parallel mean-field for q(x | y) of an SRBM, started at 0.5:
///   mu <- (1 - d) g(L mu + W y + b) + d mu
Vector mean_field_visible(const SrbmParams& model, const Vector& y, int steps, double damping);

/// log q(x | y) for RBM and GRBM (analytic).
double log_visible_conditional(const LayerParams& model, const Vector& x, const Vector& y);

// ---------------------------------------------------------------------------
// Unnormalized marginals and brute-force oracles

LogValue log_unnorm_visible_marginal(const LayerParams& model, const Vector& x);

/// Analytic log q*(y) for RBM and GRBM. Throws std::invalid_argument
/// ("hidden marginal not analytic") for SRBM.
LogValue log_unnorm_hidden_marginal(const LayerParams& model, const Vector& y);

enum class EnumerationSide { automatic, visible, hidden };

/// Exact log Z by enumerating analytic marginals of one side. The automatic
/// choice is the smaller side for RBM, hidden for GRBM and visible for SRBM.
LogValue brute_force_log_partition(const LayerParams& model,
                                   std::uint64_t budget = kDefaultEnumerationBudget,
                                   EnumerationSide side = EnumerationSide::automatic);

/// log sum_x exp(-E(x, y)) for an SRBM by visible enumeration.
LogValue brute_force_hidden_marginal_srbm(const SrbmParams& model, const Vector& y,
                                          std::uint64_t budget = kDefaultEnumerationBudget);

}  // namespace dbneval

#endif  // DBNEVAL_MODELS_HPP
