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

#ifndef DBNEVAL_NUMERICS_HPP
#define DBNEVAL_NUMERICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

namespace dbneval {

// Log-domain quantity in nats. Probability zero is -inf; NaN is never valid.
using LogValue = double;

inline constexpr double kLn2 = 0.69314718055994530942;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Point estimate of a log quantity with a Monte Carlo standard error.
///
/// `standard_error` is the standard error of the linear-domain mean divided
/// by that mean, which by the delta method is the standard error of
/// `log_value`. It is reported as 0 when only a single sample is available.
struct LogEstimate {
  LogValue log_value = 0.0;
  double standard_error = 0.0;
  std::size_t n_samples = 1;
};

/// Throws std::domain_error when `v` is NaN.
void require_not_nan(double v, const char* what);

LogValue log_sum_exp(std::span<const LogValue> values);
LogValue log_mean_exp(std::span<const LogValue> values);

/// Streaming log-sum-exp. Order of `add` calls determines the rounding, so
/// reductions that must be reproducible feed values in a fixed order.
class LogSumExpAccumulator {
 public:
  void add(LogValue v);
  LogValue value() const;
  std::size_t count() const { return count_; }

 private:
  double max_ = kNegInf;
  double scaled_sum_ = 0.0;
  std::size_t count_ = 0;
};

inline double logistic(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + exp(x)).
inline double softplus_log(double x) {
  if (x > 0.0) {
    return x + std::log1p(std::exp(-x));
  }
  return std::log1p(std::exp(x));
}

/// Log of the sample mean of exp(log_weights), with its relative standard
/// error. Requires at least two weights.
LogEstimate monte_carlo_se(std::span<const LogValue> log_weights);

/// Seeded random stream. Identical (seed, stream_id) pairs produce identical
/// draw sequences; substreams are derived without consuming parent state.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0);

  RngStream substream(std::uint64_t id) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  double uniform();
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t below(std::uint64_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> gauss_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

/// Thread count from DBNEVAL_THREADS, or 1.
int default_thread_count();

/// Runs fn(i) for i in [0, n) over `threads` workers with static chunking.
/// The first exception (lowest chunk) is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = n * w / workers;
    const std::size_t end = n * (w + 1) / workers;
    pool.emplace_back([&, w, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace dbneval

#endif  // DBNEVAL_NUMERICS_HPP
