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

#ifndef DBNEVAL_ESTIMATION_HPP
#define DBNEVAL_ESTIMATION_HPP

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dbneval/dbn.hpp"
#include "dbneval/models.hpp"

namespace dbneval {

/// A likelihood estimate could not be formed, for example because an
/// interface marginal is unavailable.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Annealed importance sampling
//
// Intermediate distributions follow the geometric path between the base and
// target unnormalized marginals,
//   log f_t(v) = log s*(v) + t (log q*(v) - log s*(v)),   t = 0 ... 1,
// over a binary state space: the visible units for RBM and SRBM targets and
// the hidden units for GRBM targets (whose hidden marginal is analytic and
// whose visibles are continuous). The transition at each t is one sequential
// single-site Gibbs sweep on f_t with the other side summed out, which leaves
// f_t invariant exactly. The base is a zero-weight model of the same variant,
// so s* is a product of independent Bernoulli factors with a known Z.

struct AisSchedule {
  /// Nondecreasing, betas.front() == 0, betas.back() == 1.
  std::vector<double> betas;
  int chains = 100;
  LayerParams base;
};

/// K + 1 evenly spaced betas from 0 to 1 (K >= 1).
std::vector<double> linear_betas(int k);

/// Zero-weight base of the same variant as `target`. With `data` (rows of
/// visible states) the base factors match the data's base rates: visible
/// rates for RBM/SRBM, mean hidden activations for GRBM. Without data the
/// target's own first-order terms are used. Logits are clipped to +-10.
LayerParams make_ais_base(const LayerParams& target, const Matrix* data = nullptr);

AisSchedule make_ais_schedule(const LayerParams& target, int chains, int k, const Matrix* data = nullptr);

/// log Z of a zero-weight layer.
LogValue base_log_partition(const LayerParams& base);

enum class AnnealedSide { visible, hidden };

struct AisRun {
  std::vector<LogValue> log_weights;
  /// Final chain states (one row per chain) on the annealed side.
  Matrix final_samples;
  AnnealedSide side = AnnealedSide::visible;
  LogValue log_z_base = 0.0;
  LogEstimate log_z_estimate;
  std::size_t n_betas = 0;
  std::uint64_t target_fingerprint = 0;
};

/// Runs schedule.chains independent chains; chain c uses rng.substream(c), so
/// the result does not depend on `threads`.
AisRun run_ais(const LayerParams& target, const AisSchedule& schedule, const RngStream& rng, int threads = 1);

/// Hash of the parameter bytes, used to tie an AisRun to its target.
std::uint64_t fingerprint(const LayerParams& model);

// ---------------------------------------------------------------------------
// Unnormalized hidden marginals from AIS samples
//
//   q*(y) = Z E_{x ~ q(x)}[q(y | x)]  ~  Z_base (1/N) sum_n w_n q(y | x_n)

class MarginalEstimator {
 public:
  MarginalEstimator(const AisRun& run, const LayerParams& target);

  /// Memoized per bit pattern; safe to call from several threads.
  LogEstimate estimate(const Vector& y) const;
  std::size_t cache_size() const;
  std::size_t n_samples() const { return log_weights_.size(); }

 private:
  Matrix hidden_input_;  // N x n
  std::vector<double> offsets_;  // log w_n - sum_j softplus(u_nj)
  std::vector<double> log_weights_;
  double log_z_base_ = 0.0;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, LogEstimate> cache_;
};

LogEstimate estimate_unnorm_marginal(const AisRun& run, const LayerParams& target, const Vector& y);

// ---------------------------------------------------------------------------
// DBN likelihood

/// Supplies log q_l*(x_l), the unnormalized hidden marginal of layer l
/// (0-based) for every layer below the top.
class MarginalProvider {
 public:
  using Fn = std::function<LogValue(const Vector&)>;

  MarginalProvider() = default;
  explicit MarginalProvider(std::size_t layers_below_top) : fns_(layers_below_top) {}

  /// Analytic marginals for every RBM/GRBM layer below the top; SRBM slots
  /// are left empty.
  static MarginalProvider analytic(const DbnModel& dbn);

  void set(std::size_t layer, Fn fn);
  bool has(std::size_t layer) const { return layer < fns_.size() && static_cast<bool>(fns_[layer]); }
  LogValue operator()(std::size_t layer, const Vector& hidden_state) const;
  std::size_t size() const { return fns_.size(); }

 private:
  std::vector<Fn> fns_;
};

/// log p(x_0) ~ log q_1*(x_0) - log Z_L
///              + log mean over n_is feed-forward paths of
///                sum_l [log q_{l+1}*(x_l) - log q_l*(x_l)].
/// The returned standard error covers the path sampling only.
LogEstimate estimate_dbn_log_likelihood(const DbnModel& dbn, const Vector& x0, int n_is,
                                        const MarginalProvider& marginals, const LogEstimate& log_z_top,
                                        RngStream& rng);

/// Variational bound for a 2-layer DBN,
///   E_{q(y|x)}[log r*(y) + log q(x|y)] + H[q(y|x)] - log Z_r,
/// with the expectation averaged over `n_samples` draws of y.
LogEstimate estimate_lower_bound(const DbnModel& dbn, const Vector& x, int n_samples, const LogEstimate& log_z_top,
                                 RngStream& rng);

/// Same bound with the expectation enumerated over all hidden states.
LogValue exact_lower_bound(const DbnModel& dbn, const Vector& x, LogValue log_z_top,
                           std::uint64_t budget = kDefaultEnumerationBudget);

/// Entropy of independent Bernoulli units, in nats.
double bernoulli_entropy(const Vector& p);

/// Potential log-loss in bits per component:
///   -(1/|T|) sum_{x in T} log2[(1/|S|) sum_{x0 in S} q0(x | x0)] / D,
/// with q0(x | x0) averaged over k_recon hidden draws y ~ q(y | x0).
double estimate_potential_log_loss(const LayerParams& layer1, const Matrix& eval_set, const Matrix& recon_set,
                                   int k_recon, RngStream& rng, int threads = 1);

// ---------------------------------------------------------------------------
// End-to-end evaluator

struct EstimatorSettings {
  int n_is = 100;
  int ais_betas = 1000;
  /// Chains for the top-layer partition function (GRBM tops use grbm_chains).
  int top_chains = 1000;
  int grbm_chains = 100;
  /// Chains for each SRBM interface, shared between its Z and its marginals.
  int interface_chains = 100000;
  /// Enumerate Z of the top layer / SRBM interface marginals instead of AIS.
  bool exact_partition = false;
  bool exact_marginals = false;
  std::uint64_t budget = kDefaultEnumerationBudget;
  int threads = 1;
  /// Rows used to fit AIS base rates (0 disables data-fitted bases).
  int base_rate_rows = 1000;
};

/// Prepares the top-layer partition function and interface marginals once,
/// then estimates log p(x) for any number of points.
class DbnLikelihoodEstimator {
 public:
  DbnLikelihoodEstimator(DbnModel dbn, const EstimatorSettings& settings, std::uint64_t seed,
                         const Matrix* base_data = nullptr);

  const DbnModel& model() const { return dbn_; }
  const LogEstimate& log_partition_top() const { return log_z_top_; }
  bool exact_partition() const { return exact_z_; }
  const MarginalProvider& marginals() const { return marginals_; }
  /// Which interfaces use AIS, exact enumeration or analytic marginals.
  const std::vector<std::string>& interface_methods() const { return methods_; }

  /// Per-row estimates; row i uses RngStream(seed, 0).substream(i).
  std::vector<LogEstimate> evaluate(const Matrix& data, std::uint64_t seed) const;
  /// Same with a different number of importance samples per row.
  std::vector<LogEstimate> evaluate(const Matrix& data, std::uint64_t seed, int n_is) const;

 private:
  DbnModel dbn_;
  EstimatorSettings settings_;
  LogEstimate log_z_top_;
  bool exact_z_ = false;
  MarginalProvider marginals_;
  std::vector<std::shared_ptr<MarginalEstimator>> estimators_;
  std::vector<std::string> methods_;
};

}  // namespace dbneval

#endif  // DBNEVAL_ESTIMATION_HPP
