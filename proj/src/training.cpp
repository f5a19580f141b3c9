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

#include "dbneval/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "dbneval/serialization.hpp"

namespace dbneval {

namespace {

template <typename... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <typename... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_batch(const LayerParams& model, const Matrix& batch) {
  if (batch.rows() == 0) throw std::invalid_argument("empty batch");
  if (batch.cols() != visible_size(model)) {
    throw std::invalid_argument("dimension mismatch: batch has " + std::to_string(batch.cols()) +
                                " columns, model expects " + std::to_string(visible_size(model)));
  }
}

// Adds w * (-dE/dtheta) at (x, h) where h holds hidden means or states.
void accumulate(const LayerParams& model, const Vector& x, const Vector& h, double w, Gradient& g) {
  std::visit(Overloaded{[&](const RbmParams&) {
                          g.weights.noalias() += w * x * h.transpose();
                          g.visible_bias += w * x;
                          g.hidden_bias += w * h;
                        },
                        [&](const GrbmParams& p) {
                          g.weights.noalias() += (w / p.sigma) * x * h.transpose();
                          g.visible_bias += (w / (p.sigma * p.sigma)) * (x - p.visible_bias);
                          g.hidden_bias += w * h;
                        },
                        [&](const SrbmParams&) {
                          g.weights.noalias() += w * x * h.transpose();
                          g.visible_bias += w * x;
                          g.hidden_bias += w * h;
                          g.lateral.noalias() += w * x * x.transpose();
                        }},
             model);
}

void finish_lateral(Gradient& g) {
  if (g.lateral.size() > 0) g.lateral.diagonal().setZero();
}

Gradient& axpy(Gradient& g, double a, const Gradient& o) {
  g.weights += a * o.weights;
  g.visible_bias += a * o.visible_bias;
  g.hidden_bias += a * o.hidden_bias;
  if (g.lateral.size() > 0) g.lateral += a * o.lateral;
  return g;
}

// Positive-phase statistics: data expectation with exact hidden means.
Gradient data_statistics(const LayerParams& model, const Matrix& batch) {
  Gradient g = zero_gradient_like(model);
  const double w = 1.0 / static_cast<double>(batch.rows());
  for (Eigen::Index r = 0; r < batch.rows(); ++r) {
    const Vector x = batch.row(r).transpose();
    accumulate(model, x, hidden_conditional(model, x), w, g);
  }
  return g;
}

// Model expectation of -dE/dtheta by enumeration.
Gradient model_statistics(const LayerParams& model, std::uint64_t budget) {
  Gradient g = zero_gradient_like(model);
  const Eigen::Index m = visible_size(model);
  const Eigen::Index n = hidden_size(model);
  const LogValue log_z = brute_force_log_partition(model, budget);
  const bool hidden_side = kind_of(model) == LayerKind::grbm || (kind_of(model) == LayerKind::rbm && n < m);
  if (hidden_side) {
    check_enumeration_budget(n, budget, "the model expectation");
    for (std::uint64_t k = 0; k < (std::uint64_t{1} << n); ++k) {
      const Vector y = binary_state(k, n);
      const double p = std::exp(log_unnorm_hidden_marginal(model, y) - log_z);
      // Every statistic is linear in x given y, so E[x | y] suffices.
      accumulate(model, visible_mean(model, y), y, p, g);
    }
  } else {
    check_enumeration_budget(m, budget, "the model expectation");
    for (std::uint64_t k = 0; k < (std::uint64_t{1} << m); ++k) {
      const Vector x = binary_state(k, m);
      const double p = std::exp(log_unnorm_visible_marginal(model, x) - log_z);
      accumulate(model, x, hidden_conditional(model, x), p, g);
    }
  }
  return g;
}

double max_abs(const LayerParams& model) {
  double out = 0.0;
  bool finite = true;
  std::visit(
      [&](const auto& p) {
        finite = p.weights.allFinite() && p.visible_bias.allFinite() && p.hidden_bias.allFinite();
        out = std::max({p.weights.cwiseAbs().maxCoeff(), p.visible_bias.cwiseAbs().maxCoeff(),
                        p.hidden_bias.cwiseAbs().maxCoeff()});
      },
      model);
  if (const auto* s = std::get_if<SrbmParams>(&model)) {
    finite = finite && s->lateral.allFinite();
    out = std::max(out, s->lateral.cwiseAbs().maxCoeff());
  }
  return finite ? out : std::numeric_limits<double>::infinity();
}

// Number of states the cheapest exact partition function enumerates.
Eigen::Index enumeration_bits(const LayerParams& model) {
  switch (kind_of(model)) {
    case LayerKind::rbm:
      return std::min(visible_size(model), hidden_size(model));
    case LayerKind::grbm:
      return hidden_size(model);
    case LayerKind::srbm:
      return visible_size(model);
  }
  return 64;
}

std::optional<double> exact_log_loss(const LayerParams& model, const Matrix& data, std::uint64_t budget) {
  if (budget == 0 || enumeration_bits(model) >= 63 ||
      (std::uint64_t{1} << enumeration_bits(model)) > budget || data.rows() == 0) {
    return std::nullopt;
  }
  const LogValue log_z = brute_force_log_partition(model, budget);
  double sum = 0.0;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    sum += log_unnorm_visible_marginal(model, data.row(r).transpose()) - log_z;
  }
  return -sum / static_cast<double>(data.rows()) / kLn2 / static_cast<double>(data.cols());
}

}  // namespace

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid training config: " + msg); };
  if (c.cd_steps < 1) fail("cd_steps must be >= 1");
  if (c.epochs < 0) fail("epochs must be >= 0");
  if (!(c.lr_start > 0.0) || !(c.lr_end > 0.0)) fail("learning rates must be positive");
  if (c.lr_end > c.lr_start) fail("lr_end must not exceed lr_start");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(c.weight_decay >= 0.0)) fail("weight_decay must be nonnegative");
  if (c.batch_size < 1) fail("batch_size must be >= 1");
  if (c.mean_field_steps < 1) fail("mean_field_steps must be >= 1");
  if (!(c.mean_field_damping >= 0.0 && c.mean_field_damping < 1.0)) fail("mean_field_damping must lie in [0, 1)");
  if (!(c.weight_init_sd >= 0.0)) fail("weight_init_sd must be nonnegative");
}

double Gradient::squared_norm() const {
  return weights.squaredNorm() + visible_bias.squaredNorm() + hidden_bias.squaredNorm() +
         (lateral.size() > 0 ? lateral.squaredNorm() : 0.0);
}

Gradient zero_gradient_like(const LayerParams& model) {
  const auto m = visible_size(model);
  const auto n = hidden_size(model);
  Gradient g{Matrix::Zero(m, n), Vector::Zero(m), Vector::Zero(n), Matrix()};
  if (kind_of(model) == LayerKind::srbm) g.lateral = Matrix::Zero(m, m);
  return g;
}

Gradient cd_gradient(const LayerParams& model, const Matrix& batch, int n, RngStream& rng,
                     int mean_field_steps, double mean_field_damping) {
  if (n < 1) throw std::invalid_argument("cd_gradient needs n >= 1");
  check_batch(model, batch);
  Gradient g = data_statistics(model, batch);
  const double w = -1.0 / static_cast<double>(batch.rows());
  const auto* srbm = std::get_if<SrbmParams>(&model);
  for (Eigen::Index r = 0; r < batch.rows(); ++r) {
    Vector x = batch.row(r).transpose();
    for (int s = 0; s < n; ++s) {
      const Vector y = sample_hidden(model, x, rng);
      x = srbm ? mean_field_visible(*srbm, y, mean_field_steps, mean_field_damping) : sample_visible(model, y, rng);
    }
    accumulate(model, x, hidden_conditional(model, x), w, g);
  }
  finish_lateral(g);
  return g;
}

Gradient exact_ml_gradient(const LayerParams& model, const Matrix& batch, std::uint64_t budget) {
  check_batch(model, batch);
  Gradient g = data_statistics(model, batch);
  axpy(g, -1.0, model_statistics(model, budget));
  finish_lateral(g);
  return g;
}

double learning_rate(const TrainConfig& c, int epoch) {
  if (epoch < 1 || epoch > std::max(c.epochs, 1)) {
    throw std::invalid_argument("epoch " + std::to_string(epoch) + " outside the schedule");
  }
  if (c.epochs <= 1) return c.lr_start;
  const double t = static_cast<double>(epoch - 1) / static_cast<double>(c.epochs - 1);
  return c.lr_start + t * (c.lr_end - c.lr_start);
}

void apply_update(LayerParams& model, const Gradient& grad, Gradient& velocity, const TrainConfig& c, int epoch) {
  const double lr = learning_rate(c, epoch);
  std::visit(
      [&](auto& p) {
        velocity.weights = c.momentum * velocity.weights + lr * (grad.weights - c.weight_decay * p.weights);
        velocity.visible_bias = c.momentum * velocity.visible_bias + lr * grad.visible_bias;
        velocity.hidden_bias = c.momentum * velocity.hidden_bias + lr * grad.hidden_bias;
        p.weights += velocity.weights;
        p.visible_bias += velocity.visible_bias;
        p.hidden_bias += velocity.hidden_bias;
      },
      model);
  if (auto* s = std::get_if<SrbmParams>(&model)) {
    velocity.lateral = c.momentum * velocity.lateral + lr * (grad.lateral - c.weight_decay * s->lateral);
    // Symmetrize against rounding drift and keep the diagonal at exactly zero.
    velocity.lateral = 0.5 * (velocity.lateral + velocity.lateral.transpose());
    velocity.lateral.diagonal().setZero();
    s->lateral += velocity.lateral;
    s->lateral = 0.5 * (s->lateral + s->lateral.transpose()).eval();
    s->lateral.diagonal().setZero();
  }
}

double reconstruction_error(const LayerParams& model, const Matrix& data, RngStream& rng, int mean_field_steps,
                            double mean_field_damping) {
  check_batch(model, data);
  const auto* srbm = std::get_if<SrbmParams>(&model);
  double sum = 0.0;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    const Vector x = data.row(r).transpose();
    const Vector y = sample_hidden(model, x, rng);
    const Vector mean = srbm ? mean_field_visible(*srbm, y, mean_field_steps, mean_field_damping) : visible_mean(model, y);
    sum += (mean - x).squaredNorm();
  }
  return sum / static_cast<double>(data.size());
}

TrainResult train_layer(LayerParams model, const Matrix& data, const TrainConfig& config) {
  return train_layer(std::move(model), [&](int) -> Matrix { return data; }, config);
}

TrainResult train_layer(LayerParams model, const EpochDataFn& data_for_epoch, const TrainConfig& config) {
  validate(config);
  validate(model);
  const auto start = std::chrono::steady_clock::now();
  const RngStream root(config.seed, 0);
  auto seconds = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  auto diagnostics = [&](int epoch, double lr, const Matrix& data) {
    RngStream diag = root.substream(2 * static_cast<std::uint64_t>(epoch) + 1);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = lr;
    rec.reconstruction_error =
        reconstruction_error(model, data, diag, config.mean_field_steps, config.mean_field_damping);
    rec.exact_log_loss_bits = exact_log_loss(model, data, config.exact_log_loss_budget);
    rec.wall_seconds = seconds();
    return rec;
  };

  TrainResult result{model, {}};
  {
    const Matrix data = data_for_epoch(0);
    check_batch(model, data);
    result.history.push_back(diagnostics(0, 0.0, data));
  }
  Gradient velocity = zero_gradient_like(model);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const Matrix data = data_for_epoch(epoch);
    check_batch(model, data);
    RngStream rng = root.substream(2 * static_cast<std::uint64_t>(epoch));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      Matrix batch(static_cast<Eigen::Index>(end - begin), data.cols());
      for (std::size_t i = begin; i < end; ++i) batch.row(static_cast<Eigen::Index>(i - begin)) = data.row(order[i]);
      const Gradient g = config.exact_gradient
                             ? exact_ml_gradient(model, batch)
                             : cd_gradient(model, batch, config.cd_steps, rng, config.mean_field_steps,
                                           config.mean_field_damping);
      apply_update(model, g, velocity, config, epoch);
      const double largest = max_abs(model);
      if (!(largest <= 1e6)) {
        throw DivergenceError("training diverged in epoch " + std::to_string(epoch) +
                              ": parameter magnitude " + format_double(largest) + " exceeds 1e6");
      }
    }
    result.history.push_back(diagnostics(epoch, learning_rate(config, epoch), data));
    const auto& now = result.history.back().exact_log_loss_bits;
    if (epoch >= 10 && now && result.history[static_cast<std::size_t>(epoch - 10)].exact_log_loss_bits) {
      const double before = *result.history[static_cast<std::size_t>(epoch - 10)].exact_log_loss_bits;
      if (*now - before > 1.0) {
        throw DivergenceError("training diverged in epoch " + std::to_string(epoch) + ": log-loss rose from " +
                              format_double(before) + " to " + format_double(*now) + " bits over 10 epochs");
      }
    }
  }
  result.model = std::move(model);
  return result;
}

void write_training_log_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::string out = "epoch,lr,reconstruction_error,exact_log_loss_bits,wall_seconds\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + format_double(r.learning_rate) + "," +
           format_double(r.reconstruction_error) + "," +
           (r.exact_log_loss_bits ? format_double(*r.exact_log_loss_bits) : std::string()) + "," +
           format_double(r.wall_seconds) + "\n";
  }
  write_text_file(path, out);
}

SrbmParams init_srbm_from_grbm(const GrbmParams& grbm, Eigen::Index hidden_units) {
  validate(LayerParams{grbm});
  if (hidden_units < 1) throw std::invalid_argument("init_srbm_from_grbm needs at least one hidden unit");
  const Matrix wtw = grbm.weights.transpose() * grbm.weights;
  SrbmParams s;
  s.lateral = wtw;
  s.lateral.diagonal().setZero();
  s.visible_bias = grbm.hidden_bias + grbm.weights.transpose() * grbm.visible_bias / grbm.sigma +
                   0.5 * wtw.diagonal();
  s.weights = Matrix::Zero(grbm.weights.cols(), hidden_units);
  s.hidden_bias = Vector::Constant(hidden_units, -1.0);
  return s;
}

GreedyResult train_dbn_greedy(const std::vector<LayerSpec>& specs, const Matrix& data,
                              const std::vector<TrainConfig>& configs) {
  if (specs.empty()) throw std::invalid_argument("train_dbn_greedy needs at least one layer spec");
  if (configs.size() != specs.size()) {
    throw std::invalid_argument("train_dbn_greedy needs one training config per layer");
  }
  for (std::size_t l = 0; l < specs.size(); ++l) {
    if (l > 0 && specs[l].kind == LayerKind::grbm) {
      throw std::invalid_argument("incompatible stack: only the bottom layer may be a GRBM");
    }
    if (specs[l].hidden_units < 1) throw std::invalid_argument("incompatible stack: empty hidden layer");
  }
  GreedyResult out;
  std::vector<LayerParams> trained;
  Eigen::Index visible = data.cols();
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const LayerSpec& spec = specs[l];
    const TrainConfig& config = configs[l];
    validate(config);
    LayerParams init;
    if (l == 1 && spec.kind == LayerKind::srbm && spec.init_from_below && kind_of(trained[0]) == LayerKind::grbm) {
      init = init_srbm_from_grbm(std::get<GrbmParams>(trained[0]), spec.hidden_units);
    } else {
      RngStream init_rng(config.seed, 1);
      init = init_layer(spec.kind, visible, spec.hidden_units, init_rng, spec.sigma, config.weight_init_sd);
    }
    TrainResult r;
    if (l == 0) {
      r = train_layer(std::move(init), data, config);
    } else {
      const DbnModel below(trained);
      const RngStream feed_root(config.seed, 2);
      r = train_layer(
          std::move(init),
          [&](int epoch) {
            RngStream rng = feed_root.substream(static_cast<std::uint64_t>(epoch));
            Matrix upper(data.rows(), visible);
            for (Eigen::Index i = 0; i < data.rows(); ++i) {
              Vector x = data.row(i).transpose();
              for (const auto& layer : below.layers()) x = sample_hidden(layer, x, rng);
              upper.row(i) = x.transpose();
            }
            return upper;
          },
          config);
    }
    trained.push_back(r.model);
    out.histories.push_back(std::move(r.history));
    visible = spec.hidden_units;
  }
  out.dbn = DbnModel(std::move(trained));
  return out;
}

}  // namespace dbneval
