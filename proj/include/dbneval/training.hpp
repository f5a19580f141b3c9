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

#ifndef DBNEVAL_TRAINING_HPP
#define DBNEVAL_TRAINING_HPP

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbneval/dbn.hpp"
#include "dbneval/models.hpp"

namespace dbneval {

struct TrainConfig {
  int cd_steps = 1;
  int epochs = 100;
  double lr_start = 1e-2;
  double lr_end = 1e-4;
  double momentum = 0.9;
  double weight_decay = 0.01;  // multiplies lr; applied to W and L only
  int batch_size = 100;
  std::uint64_t seed = 1;
  int mean_field_steps = 20;
  double mean_field_damping = 0.2;
  double weight_init_sd = 0.01;
  /// Use the enumerated likelihood gradient instead of CD (tiny models only).
  bool exact_gradient = false;
  /// Record the exact per-epoch log-loss when the layer's partition function
  /// can be enumerated within this many states; 0 disables it.
  std::uint64_t exact_log_loss_budget = std::uint64_t{1} << 16;
};

void validate(const TrainConfig& config);

/// Ascent direction for each parameter group. `lateral` is empty for RBM and
/// GRBM. The lateral entry (i, j) is the derivative with respect to the shared
/// coupling L_ij = L_ji, so it is symmetric with a zero diagonal.
struct Gradient {
  Matrix weights;
  Vector visible_bias;
  Vector hidden_bias;
  Matrix lateral;

  double squared_norm() const;
};

Gradient zero_gradient_like(const LayerParams& model);

/// CD(n): positive statistics from q(y|x) means on the batch; negative
/// statistics from an n-step reconstruction chain (binary hidden draws,
/// exact visible draws for RBM/GRBM, damped mean-field visibles for SRBM).
Gradient cd_gradient(const LayerParams& model, const Matrix& batch, int n, RngStream& rng,
                     int mean_field_steps = 20, double mean_field_damping = 0.2);

/// Exact gradient of the mean log-likelihood of `batch`, both expectations
/// enumerated. GRBM sigma is fixed and gets no gradient.
Gradient exact_ml_gradient(const LayerParams& model, const Matrix& batch,
                           std::uint64_t budget = kDefaultEnumerationBudget);

/// Learning rate of the linear schedule from lr_start (first epoch) to lr_end
/// (last epoch).
double learning_rate(const TrainConfig& config, int epoch);

/// velocity <- momentum * velocity + lr * (grad - decay * weights); params += velocity.
void apply_update(LayerParams& model, const Gradient& grad, Gradient& velocity,
                  const TrainConfig& config, int epoch);

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochRecord {
  int epoch = 0;  // 0 is the untrained model
  double learning_rate = 0.0;
  double reconstruction_error = 0.0;
  std::optional<double> exact_log_loss_bits;
  double wall_seconds = 0.0;
};

struct TrainResult {
  LayerParams model;
  std::vector<EpochRecord> history;
};

using EpochDataFn = std::function<Matrix(int epoch)>;

/// Shuffled mini-batch training for config.epochs epochs.
TrainResult train_layer(LayerParams model, const Matrix& data, const TrainConfig& config);
/// As above with data regenerated for every epoch (1-based epoch index).
TrainResult train_layer(LayerParams model, const EpochDataFn& data_for_epoch, const TrainConfig& config);

/// Mean squared error between each row and its one-step reconstruction mean.
double reconstruction_error(const LayerParams& model, const Matrix& data, RngStream& rng,
                            int mean_field_steps = 20, double mean_field_damping = 0.2);

void write_training_log_csv(const std::string& path, const std::vector<EpochRecord>& history);

/// SRBM whose visible marginal is proportional to the GRBM hidden marginal:
///   L = offdiag(W'W),  b = c + W'b_g / sigma + diag(W'W) / 2,  W_srbm = 0,
///   c_srbm = -1.
/// Expanding |Wy|^2 / 2 = sum_{i != j} (W'W)_ij y_i y_j / 2 + sum_i (W'W)_ii y_i / 2
/// (binary y) matches the SRBM's b'v + v'Lv / 2 term for term; the hidden
/// units then only contribute a constant factor.
SrbmParams init_srbm_from_grbm(const GrbmParams& grbm, Eigen::Index hidden_units);

struct LayerSpec {
  LayerKind kind = LayerKind::rbm;
  Eigen::Index hidden_units = 1;
  double sigma = 1.0;
  /// Initialize an SRBM above a GRBM so the DBN likelihood is unchanged.
  bool init_from_below = true;
};

struct GreedyResult {
  DbnModel dbn;
  std::vector<std::vector<EpochRecord>> histories;
};

/// Trains layer 1 on `data`, then each higher layer on fresh feed-forward
/// samples drawn every epoch through the already trained layers.
GreedyResult train_dbn_greedy(const std::vector<LayerSpec>& specs, const Matrix& data,
                              const std::vector<TrainConfig>& configs);

}  // namespace dbneval

#endif  // DBNEVAL_TRAINING_HPP
