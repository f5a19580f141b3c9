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

#include "dbneval/models.hpp"

#include <cmath>
#include <numbers>

namespace dbneval {

namespace {

template <typename... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <typename... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_visible(const LayerParams& model, const Vector& x) {
  if (x.size() != visible_size(model)) {
    throw std::invalid_argument("dimension mismatch: visible state has " +
                                std::to_string(x.size()) + " entries, model expects " +
                                std::to_string(visible_size(model)));
  }
}

void check_hidden(const LayerParams& model, const Vector& y) {
  if (y.size() != hidden_size(model)) {
    throw std::invalid_argument("dimension mismatch: hidden state has " +
                                std::to_string(y.size()) + " entries, model expects " +
                                std::to_string(hidden_size(model)));
  }
}

double sum_softplus(const Vector& a) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < a.size(); ++j) s += softplus_log(a[j]);
  return s;
}

// sum_i [x_i a_i - softplus(a_i)]: log-probability of a binary vector under
// independent Bernoulli units with logits a.
double bernoulli_log_prob(const Vector& x, const Vector& a) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) s += x[i] * a[i] - softplus_log(a[i]);
  return s;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

std::string_view kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::rbm:
      return "rbm";
    case LayerKind::grbm:
      return "grbm";
    case LayerKind::srbm:
      return "srbm";
  }
  return "unknown";
}

LayerKind parse_kind(std::string_view name) {
  if (name == "rbm") return LayerKind::rbm;
  if (name == "grbm") return LayerKind::grbm;
  if (name == "srbm") return LayerKind::srbm;
  throw std::invalid_argument("unknown layer type '" + std::string(name) + "'");
}

LayerKind kind_of(const LayerParams& model) {
  return static_cast<LayerKind>(model.index());
}

Eigen::Index visible_size(const LayerParams& model) {
  return std::visit([](const auto& p) { return p.weights.rows(); }, model);
}

Eigen::Index hidden_size(const LayerParams& model) {
  return std::visit([](const auto& p) { return p.weights.cols(); }, model);
}

void validate(const LayerParams& model) {
  std::visit(
      [](const auto& p) {
        const auto m = p.weights.rows();
        const auto n = p.weights.cols();
        if (m < 1 || n < 1) throw std::invalid_argument("layer needs m >= 1 and n >= 1");
        if (p.visible_bias.size() != m || p.hidden_bias.size() != n) {
          throw std::invalid_argument("bias dimensions do not match weight matrix");
        }
        if (!all_finite(p.weights) || !p.visible_bias.allFinite() || !p.hidden_bias.allFinite()) {
          throw std::invalid_argument("non-finite layer parameters");
        }
      },
      model);
  if (const auto* g = std::get_if<GrbmParams>(&model)) {
    if (!(g->sigma > 0.0) || !std::isfinite(g->sigma)) {
      throw std::invalid_argument("GRBM sigma must be positive and finite");
    }
  }
  if (const auto* s = std::get_if<SrbmParams>(&model)) {
    const auto m = s->weights.rows();
    if (s->lateral.rows() != m || s->lateral.cols() != m) {
      throw std::invalid_argument("lateral matrix must be m x m");
    }
    if (!all_finite(s->lateral)) throw std::invalid_argument("non-finite lateral matrix");
    for (Eigen::Index i = 0; i < m; ++i) {
      if (s->lateral(i, i) != 0.0) throw std::invalid_argument("lateral diagonal must be zero");
      for (Eigen::Index j = i + 1; j < m; ++j) {
        if (s->lateral(i, j) != s->lateral(j, i)) {
          throw std::invalid_argument("lateral matrix must be symmetric");
        }
      }
    }
  }
}

LayerParams make_zero_layer(LayerKind kind, Eigen::Index visible, Eigen::Index hidden,
                            double sigma) {
  const Matrix w = Matrix::Zero(visible, hidden);
  const Vector b = Vector::Zero(visible);
  const Vector c = Vector::Zero(hidden);
  switch (kind) {
    case LayerKind::rbm:
      return RbmParams{w, b, c};
    case LayerKind::grbm:
      return GrbmParams{w, b, c, sigma};
    case LayerKind::srbm:
      return SrbmParams{w, b, c, Matrix::Zero(visible, visible)};
  }
  throw std::invalid_argument("unknown layer kind");
}

LayerParams init_layer(LayerKind kind, Eigen::Index visible, Eigen::Index hidden,
                       RngStream& rng, double sigma, double weight_sd) {
  LayerParams layer = make_zero_layer(kind, visible, hidden, sigma);
  std::visit(
      [&](auto& p) {
        for (Eigen::Index j = 0; j < hidden; ++j) {
          for (Eigen::Index i = 0; i < visible; ++i) p.weights(i, j) = weight_sd * rng.normal();
        }
        p.hidden_bias.setConstant(-1.0);
      },
      layer);
  return layer;
}

void check_enumeration_budget(Eigen::Index bits, std::uint64_t budget, std::string_view what) {
  if (bits >= 63 || (std::uint64_t{1} << bits) > budget) {
    throw EnumerationBudgetExceeded("enumerating 2^" + std::to_string(bits) + " states for " +
                                    std::string(what) +
                                    " exceeds the enumeration budget; use AIS estimation instead");
  }
}

Vector binary_state(std::uint64_t index, Eigen::Index bits) {
  Vector s(bits);
  for (Eigen::Index i = 0; i < bits; ++i) s[i] = static_cast<double>((index >> i) & 1U);
  return s;
}

std::uint64_t binary_index(const Vector& state) {
  std::uint64_t idx = 0;
  for (Eigen::Index i = 0; i < state.size(); ++i) {
    if (state[i] != 0.0) idx |= std::uint64_t{1} << i;
  }
  return idx;
}

double energy(const LayerParams& model, const Vector& x, const Vector& y) {
  check_visible(model, x);
  check_hidden(model, y);
  return std::visit(
      Overloaded{
          [&](const RbmParams& p) {
            return -x.dot(p.weights * y) - p.visible_bias.dot(x) - p.hidden_bias.dot(y);
          },
          [&](const GrbmParams& p) {
            const double s2 = p.sigma * p.sigma;
            return (x - p.visible_bias).squaredNorm() / (2.0 * s2) -
                   x.dot(p.weights * y) / p.sigma - p.hidden_bias.dot(y);
          },
          [&](const SrbmParams& p) {
            return -x.dot(p.weights * y) - p.visible_bias.dot(x) - p.hidden_bias.dot(y) -
                   0.5 * x.dot(p.lateral * x);
          }},
      model);
}

Vector hidden_input(const LayerParams& model, const Vector& x) {
  check_visible(model, x);
  return std::visit(Overloaded{[&](const GrbmParams& p) -> Vector {
                                 return p.weights.transpose() * x / p.sigma + p.hidden_bias;
                               },
                               [&](const auto& p) -> Vector {
                                 return p.weights.transpose() * x + p.hidden_bias;
                               }},
                    model);
}

Vector hidden_conditional(const LayerParams& model, const Vector& x) {
  return hidden_input(model, x).unaryExpr([](double a) { return logistic(a); });
}

Vector sample_hidden(const LayerParams& model, const Vector& x, RngStream& rng) {
  const Vector p = hidden_conditional(model, x);
  Vector y(p.size());
  for (Eigen::Index j = 0; j < p.size(); ++j) y[j] = rng.bernoulli(p[j]) ? 1.0 : 0.0;
  return y;
}

double log_hidden_conditional(const LayerParams& model, const Vector& x, const Vector& y) {
  check_hidden(model, y);
  return bernoulli_log_prob(y, hidden_input(model, x));
}

Vector visible_mean(const LayerParams& model, const Vector& y) {
  check_hidden(model, y);
  return std::visit(
      Overloaded{[&](const RbmParams& p) -> Vector {
                   return (p.weights * y + p.visible_bias).unaryExpr([](double a) {
                     return logistic(a);
                   });
                 },
                 [&](const GrbmParams& p) -> Vector {
                   return p.visible_bias + p.sigma * (p.weights * y);
                 },
                 [&](const SrbmParams&) -> Vector {
                   throw std::invalid_argument(
                       "SRBM visible conditional is not factorial; use mean_field_visible");
                 }},
      model);
}

void gibbs_sweep_visible(const SrbmParams& p, const Vector& y, Vector& x, RngStream& rng) {
  const Vector drive = p.weights * y + p.visible_bias;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double a = drive[i] + p.lateral.row(i).dot(x);
    x[i] = rng.bernoulli(logistic(a)) ? 1.0 : 0.0;
  }
}

Vector sample_visible(const LayerParams& model, const Vector& y, RngStream& rng,
                      const Vector& current) {
  check_hidden(model, y);
  return std::visit(
      Overloaded{[&](const RbmParams& p) -> Vector {
                   const Vector a = p.weights * y + p.visible_bias;
                   Vector x(a.size());
                   for (Eigen::Index i = 0; i < a.size(); ++i) {
                     x[i] = rng.bernoulli(logistic(a[i])) ? 1.0 : 0.0;
                   }
                   return x;
                 },
                 [&](const GrbmParams& p) -> Vector {
                   Vector x = p.visible_bias + p.sigma * (p.weights * y);
                   for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += p.sigma * rng.normal();
                   return x;
                 },
                 [&](const SrbmParams& p) -> Vector {
                   check_visible(model, current);
                   Vector x = current;
                   gibbs_sweep_visible(p, y, x, rng);
                   return x;
                 }},
      model);
}

Vector sample_visible(const LayerParams& model, const Vector& y, RngStream& rng) {
  if (std::holds_alternative<SrbmParams>(model)) {
    throw std::invalid_argument("SRBM visible sampling needs a starting visible state");
  }
  return sample_visible(model, y, rng, Vector());
}

Vector mean_field_visible(const SrbmParams& p, const Vector& y, int steps, double damping) {
  if (steps < 1) throw std::invalid_argument("mean field needs steps >= 1");
  if (!(damping >= 0.0 && damping < 1.0)) {
    throw std::invalid_argument("mean field damping must lie in [0, 1)");
  }
  if (y.size() != p.weights.cols()) throw std::invalid_argument("dimension mismatch");
  const Vector drive = p.weights * y + p.visible_bias;
  Vector mu = Vector::Constant(drive.size(), 0.5);
  for (int s = 0; s < steps; ++s) {
    const Vector target = (p.lateral * mu + drive).unaryExpr([](double a) { return logistic(a); });
    mu = (1.0 - damping) * target + damping * mu;
  }
  return mu;
}

double log_visible_conditional(const LayerParams& model, const Vector& x, const Vector& y) {
  check_visible(model, x);
  check_hidden(model, y);
  return std::visit(
      Overloaded{[&](const RbmParams& p) {
                   return bernoulli_log_prob(x, p.weights * y + p.visible_bias);
                 },
                 [&](const GrbmParams& p) {
                   const double s2 = p.sigma * p.sigma;
                   const Vector mu = p.visible_bias + p.sigma * (p.weights * y);
                   return -(x - mu).squaredNorm() / (2.0 * s2) -
                          0.5 * static_cast<double>(x.size()) *
                              std::log(2.0 * std::numbers::pi * s2);
                 },
                 [&](const SrbmParams&) -> double {
                   throw std::invalid_argument(
                       "SRBM visible conditional needs the hidden marginal; not analytic");
                 }},
      model);
}

LogValue log_unnorm_visible_marginal(const LayerParams& model, const Vector& x) {
  check_visible(model, x);
  return std::visit(
      Overloaded{[&](const RbmParams& p) {
                   return p.visible_bias.dot(x) +
                          sum_softplus(p.weights.transpose() * x + p.hidden_bias);
                 },
                 [&](const GrbmParams& p) {
                   return -(x - p.visible_bias).squaredNorm() / (2.0 * p.sigma * p.sigma) +
                          sum_softplus(p.weights.transpose() * x / p.sigma + p.hidden_bias);
                 },
                 [&](const SrbmParams& p) {
                   return p.visible_bias.dot(x) + 0.5 * x.dot(p.lateral * x) +
                          sum_softplus(p.weights.transpose() * x + p.hidden_bias);
                 }},
      model);
}

LogValue log_unnorm_hidden_marginal(const LayerParams& model, const Vector& y) {
  check_hidden(model, y);
  return std::visit(
      Overloaded{[&](const RbmParams& p) {
                   return p.hidden_bias.dot(y) + sum_softplus(p.weights * y + p.visible_bias);
                 },
                 [&](const GrbmParams& p) {
                   const Vector wy = p.weights * y;
                   const double m = static_cast<double>(p.weights.rows());
                   return 0.5 * m * std::log(2.0 * std::numbers::pi * p.sigma * p.sigma) +
                          p.hidden_bias.dot(y) + p.visible_bias.dot(wy) / p.sigma +
                          0.5 * wy.squaredNorm();
                 },
                 [&](const SrbmParams&) -> double {
                   throw std::invalid_argument("hidden marginal not analytic for SRBM");
                 }},
      model);
}

LogValue brute_force_log_partition(const LayerParams& model, std::uint64_t budget,
                                   EnumerationSide side) {
  validate(model);
  const Eigen::Index m = visible_size(model);
  const Eigen::Index n = hidden_size(model);
  if (side == EnumerationSide::automatic) {
    switch (kind_of(model)) {
      case LayerKind::rbm:
        side = n <= m ? EnumerationSide::hidden : EnumerationSide::visible;
        break;
      case LayerKind::grbm:
        side = EnumerationSide::hidden;
        break;
      case LayerKind::srbm:
        side = EnumerationSide::visible;
        break;
    }
  }
  LogSumExpAccumulator acc;
  if (side == EnumerationSide::hidden) {
    if (kind_of(model) == LayerKind::srbm) {
      throw std::invalid_argument("hidden marginal not analytic for SRBM");
    }
    check_enumeration_budget(n, budget, "the partition function");
    for (std::uint64_t k = 0; k < (std::uint64_t{1} << n); ++k) {
      acc.add(log_unnorm_hidden_marginal(model, binary_state(k, n)));
    }
  } else {
    if (kind_of(model) == LayerKind::grbm) {
      throw std::invalid_argument("GRBM visibles are continuous; enumerate the hidden side");
    }
    check_enumeration_budget(m, budget, "the partition function");
    for (std::uint64_t k = 0; k < (std::uint64_t{1} << m); ++k) {
      acc.add(log_unnorm_visible_marginal(model, binary_state(k, m)));
    }
  }
  return acc.value();
}

LogValue brute_force_hidden_marginal_srbm(const SrbmParams& p, const Vector& y,
                                          std::uint64_t budget) {
  const Eigen::Index m = p.weights.rows();
  if (y.size() != p.weights.cols()) throw std::invalid_argument("dimension mismatch");
  check_enumeration_budget(m, budget, "the SRBM hidden marginal");
  const Vector drive = p.weights * y + p.visible_bias;
  LogSumExpAccumulator acc;
  for (std::uint64_t k = 0; k < (std::uint64_t{1} << m); ++k) {
    const Vector x = binary_state(k, m);
    acc.add(drive.dot(x) + 0.5 * x.dot(p.lateral * x));
  }
  return p.hidden_bias.dot(y) + acc.value();
}

}  // namespace dbneval
