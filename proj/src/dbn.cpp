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

#include "dbneval/dbn.hpp"

#include <stdexcept>
#include <string>

namespace dbneval {

namespace {

// log q*(h) of a layer's hidden units, analytic where possible.
double hidden_marginal_any(const LayerParams& layer, const Vector& h, std::uint64_t budget) {
  if (const auto* s = std::get_if<SrbmParams>(&layer)) {
    return brute_force_hidden_marginal_srbm(*s, h, budget);
  }
  return log_unnorm_hidden_marginal(layer, h);
}

Vector random_start(const LayerParams& layer, RngStream& rng) {
  const auto m = visible_size(layer);
  Vector x(m);
  if (const auto* g = std::get_if<GrbmParams>(&layer)) {
    for (Eigen::Index i = 0; i < m; ++i) x[i] = g->visible_bias[i] + g->sigma * rng.normal();
  } else {
    for (Eigen::Index i = 0; i < m; ++i) x[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  return x;
}

}  // namespace

DbnModel::DbnModel(std::vector<LayerParams> layers) : layers_(std::move(layers)) {
  validate(*this);
}

Eigen::Index DbnModel::visible_size() const { return dbneval::visible_size(layers_.front()); }

std::vector<Eigen::Index> DbnModel::unit_counts() const {
  std::vector<Eigen::Index> d;
  d.push_back(dbneval::visible_size(layers_.front()));
  for (const auto& l : layers_) d.push_back(hidden_size(l));
  return d;
}

void validate(const DbnModel& dbn) {
  const auto& layers = dbn.layers();
  if (layers.empty()) throw std::invalid_argument("a DBN needs at least one layer");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    validate(layers[l]);
    if (l > 0 && kind_of(layers[l]) == LayerKind::grbm) {
      throw std::invalid_argument("only the bottom layer of a DBN may be a GRBM");
    }
    if (l == 0 && kind_of(layers[l]) == LayerKind::srbm && layers.size() > 1) {
      throw std::invalid_argument("the bottom layer of a multi-layer DBN must be an RBM or GRBM");
    }
    if (l + 1 < layers.size() && hidden_size(layers[l]) != visible_size(layers[l + 1])) {
      throw std::invalid_argument("incompatible stack: layer " + std::to_string(l) + " has " +
                                  std::to_string(hidden_size(layers[l])) + " hidden units but layer " +
                                  std::to_string(l + 1) + " has " +
                                  std::to_string(visible_size(layers[l + 1])) + " visible units");
    }
  }
}

Vector ancestral_sample(const DbnModel& dbn, RngStream& rng, const AncestralOptions& options) {
  if (options.gibbs_steps < 1) throw std::invalid_argument("ancestral_sample needs gibbs_steps >= 1");
  const LayerParams& top = dbn.top();
  Vector x = random_start(top, rng);
  for (int s = 0; s < options.gibbs_steps; ++s) {
    const Vector y = sample_hidden(top, x, rng);
    x = sample_visible(top, y, rng, x);
  }
  for (std::size_t l = dbn.depth() - 1; l-- > 0;) {
    const LayerParams& layer = dbn.layer(l);
    if (const auto* s = std::get_if<SrbmParams>(&layer)) {
      const Vector drive = s->weights * x + s->visible_bias;
      Vector v(drive.size());
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.bernoulli(logistic(drive[i])) ? 1.0 : 0.0;
      for (int k = 0; k < options.srbm_conditional_sweeps; ++k) gibbs_sweep_visible(*s, x, v, rng);
      x = std::move(v);
    } else {
      x = sample_visible(layer, x, rng);
    }
  }
  return x;
}

std::vector<Vector> feed_forward_sample(const DbnModel& dbn, const Vector& x0, RngStream& rng) {
  if (x0.size() != dbn.visible_size()) {
    throw std::invalid_argument("dimension mismatch: x0 does not match the DBN's visible layer");
  }
  std::vector<Vector> states;
  Vector x = x0;
  for (std::size_t l = 0; l + 1 < dbn.depth(); ++l) {
    x = sample_hidden(dbn.layer(l), x, rng);
    states.push_back(x);
  }
  return states;
}

ExactDbnEvaluator::ExactDbnEvaluator(DbnModel dbn, std::uint64_t budget) : dbn_(std::move(dbn)) {
  validate(dbn_);
  const auto d = dbn_.unit_counts();
  const std::size_t depth = dbn_.depth();
  log_z_top_ = brute_force_log_partition(dbn_.top(), budget);
  if (depth == 1) return;

  // log p(x_{L-1}) from the top layer.
  const Eigen::Index top_bits = d[depth - 1];
  check_enumeration_budget(top_bits, budget, "the top-layer visible states");
  std::vector<double> table(std::size_t{1} << top_bits);
  for (std::uint64_t k = 0; k < table.size(); ++k) {
    table[k] = log_unnorm_visible_marginal(dbn_.top(), binary_state(k, top_bits)) - log_z_top_;
  }

  for (std::size_t l = depth - 1; l-- > 1;) {
    const LayerParams& layer = dbn_.layer(l);
    const Eigen::Index lo = d[l];
    const Eigen::Index hi = d[l + 1];
    check_enumeration_budget(lo + hi, budget, "layer " + std::to_string(l) + " joint states");
    std::vector<double> hidden_marginal(std::size_t{1} << hi);
    std::vector<Vector> hidden_states(hidden_marginal.size());
    for (std::uint64_t k = 0; k < hidden_marginal.size(); ++k) {
      hidden_states[k] = binary_state(k, hi);
      hidden_marginal[k] = hidden_marginal_any(layer, hidden_states[k], budget);
    }
    std::vector<double> next(std::size_t{1} << lo);
    for (std::uint64_t a = 0; a < next.size(); ++a) {
      const Vector x = binary_state(a, lo);
      LogSumExpAccumulator acc;
      for (std::uint64_t b = 0; b < hidden_states.size(); ++b) {
        acc.add(table[b] - energy(layer, x, hidden_states[b]) - hidden_marginal[b]);
      }
      next[a] = acc.value();
    }
    table = std::move(next);
  }
  log_prior_x1_ = std::move(table);

  const LayerParams& bottom = dbn_.layer(0);
  log_hidden_marginal_x1_.resize(log_prior_x1_.size());
  for (std::uint64_t k = 0; k < log_prior_x1_.size(); ++k) {
    log_hidden_marginal_x1_[k] = hidden_marginal_any(bottom, binary_state(k, d[1]), budget);
  }
}

LogValue ExactDbnEvaluator::log_likelihood(const Vector& x0) const {
  const LayerParams& bottom = dbn_.layer(0);
  if (x0.size() != visible_size(bottom)) {
    throw std::invalid_argument("dimension mismatch: x0 does not match the DBN's visible layer");
  }
  if (dbn_.depth() == 1) return log_unnorm_visible_marginal(bottom, x0) - log_z_top_;
  const Eigen::Index bits = hidden_size(bottom);
  LogSumExpAccumulator acc;
  for (std::uint64_t k = 0; k < log_prior_x1_.size(); ++k) {
    acc.add(log_prior_x1_[k] - energy(bottom, x0, binary_state(k, bits)) - log_hidden_marginal_x1_[k]);
  }
  return acc.value();
}

LogValue brute_force_log_likelihood(const DbnModel& dbn, const Vector& x, std::uint64_t budget) {
  return ExactDbnEvaluator(dbn, budget).log_likelihood(x);
}

std::vector<LogValue> evaluate_rows(const Matrix& data,
                                    const std::function<LogValue(std::size_t, const Vector&)>& log_density,
                                    int threads) {
  std::vector<LogValue> out(static_cast<std::size_t>(data.rows()));
  parallel_for(out.size(), threads, [&](std::size_t i) {
    try {
      const Vector x = data.row(static_cast<Eigen::Index>(i)).transpose();
      out[i] = log_density(i, x);
      require_not_nan(out[i], "log density");
    } catch (const std::exception& e) {
      throw std::runtime_error("sample " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

double average_log_loss(const Matrix& data, const std::function<LogValue(const Vector&)>& log_density,
                        int threads) {
  if (data.rows() == 0) throw std::invalid_argument("average_log_loss needs a nonempty dataset");
  const auto values =
      evaluate_rows(data, [&](std::size_t, const Vector& x) { return log_density(x); }, threads);
  double sum = 0.0;
  for (double v : values) sum += v;
  return -sum / static_cast<double>(values.size()) / kLn2 / static_cast<double>(data.cols());
}

}  // namespace dbneval
