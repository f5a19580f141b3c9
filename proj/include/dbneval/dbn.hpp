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

#ifndef DBNEVAL_DBN_HPP
#define DBNEVAL_DBN_HPP

#include <functional>
#include <vector>

#include "dbneval/models.hpp"

namespace dbneval {

/// Stack of layers. Layer l's hidden units are layer l+1's visible units; the
/// bottom layer may be an RBM or GRBM, upper layers are RBMs or SRBMs. The
/// lower layers are directed, the top layer is an undirected prior.
class DbnModel {
 public:
  DbnModel() = default;
  explicit DbnModel(std::vector<LayerParams> layers);

  const std::vector<LayerParams>& layers() const { return layers_; }
  const LayerParams& layer(std::size_t i) const { return layers_.at(i); }
  const LayerParams& top() const { return layers_.back(); }
  std::size_t depth() const { return layers_.size(); }
  Eigen::Index visible_size() const;

  /// Sizes of x_0 ... x_L.
  std::vector<Eigen::Index> unit_counts() const;

 private:
  std::vector<LayerParams> layers_;
};

/// Throws std::invalid_argument when the stack is empty, incompatible or
/// places a GRBM above the bottom.
void validate(const DbnModel& dbn);

struct AncestralOptions {
  int gibbs_steps = 100;
  /// Sequential Gibbs sweeps used to draw from the non-factorial conditional
  /// of an SRBM below the top layer.
  int srbm_conditional_sweeps = 100;
};

/// Runs `gibbs_steps` alternating sweeps in the top layer from a random start
/// and maps the result down through the directed layers.
Vector ancestral_sample(const DbnModel& dbn, RngStream& rng, const AncestralOptions& options = {});

/// x_1 ... x_{L-1} drawn in turn from the factorial hidden conditionals.
std::vector<Vector> feed_forward_sample(const DbnModel& dbn, const Vector& x0, RngStream& rng);

/// Exact log p(x_0) by nested enumeration of the hidden layers below the top.
///
/// Tables f_l(x_l) = log p(x_l) are built top-down: f_{L-1} from the top
/// layer's normalized visible marginal, then
///   f_l(x_l) = log sum_{x_{l+1}} exp(f_{l+1}(x_{l+1}) + log q_l(x_l | x_{l+1})),
/// with log q_l(x_l | x_{l+1}) = -E_l - log q_l*(x_{l+1}). Each table step
/// enumerates 2^(|x_l| + |x_{l+1}|) pairs, which must fit the budget. After
/// construction each likelihood costs one sum over x_1.
class ExactDbnEvaluator {
 public:
  explicit ExactDbnEvaluator(DbnModel dbn, std::uint64_t budget = kDefaultEnumerationBudget);

  LogValue log_likelihood(const Vector& x0) const;
  LogValue log_partition_top() const { return log_z_top_; }
  const DbnModel& model() const { return dbn_; }

 private:
  DbnModel dbn_;
  LogValue log_z_top_ = 0.0;
  // log p(x_1) over all states of x_1, and log q_1*(x_1) of the bottom layer.
  std::vector<double> log_prior_x1_;
  std::vector<double> log_hidden_marginal_x1_;
};

LogValue brute_force_log_likelihood(const DbnModel& dbn, const Vector& x,
                                    std::uint64_t budget = kDefaultEnumerationBudget);

/// -(1/N) sum_i log2 p(x_i) / D over the rows of `data`. Evaluation errors are
/// rethrown with the offending row index.
double average_log_loss(const Matrix& data, const std::function<LogValue(const Vector&)>& log_density,
                        int threads = 1);

/// Per-row log densities in nats, evaluated in parallel in a fixed order.
std::vector<LogValue> evaluate_rows(const Matrix& data,
                                    const std::function<LogValue(std::size_t, const Vector&)>& log_density,
                                    int threads = 1);

}  // namespace dbneval

#endif  // DBNEVAL_DBN_HPP
