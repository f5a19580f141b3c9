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

#include "dbneval/numerics.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

namespace dbneval {

void require_not_nan(double v, const char* what) {
  if (std::isnan(v)) {
    throw std::domain_error(std::string("NaN encountered in ") + what);
  }
}

LogValue log_sum_exp(std::span<const LogValue> values) {
  if (values.empty()) {
    throw std::invalid_argument("empty reduction");
  }
  double hi = kNegInf;
  for (double v : values) {
    require_not_nan(v, "log_sum_exp");
    hi = std::max(hi, v);
  }
  if (hi == kNegInf) return kNegInf;
  if (std::isinf(hi)) return hi;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - hi);
  return hi + std::log(sum);
}

LogValue log_mean_exp(std::span<const LogValue> values) {
  if (values.empty()) {
    throw std::invalid_argument("empty reduction");
  }
  return log_sum_exp(values) - std::log(static_cast<double>(values.size()));
}

void LogSumExpAccumulator::add(LogValue v) {
  require_not_nan(v, "LogSumExpAccumulator");
  ++count_;
  if (v == kNegInf) return;
  if (v <= max_) {
    scaled_sum_ += std::exp(v - max_);
  } else {
    scaled_sum_ = (max_ == kNegInf ? 0.0 : scaled_sum_ * std::exp(max_ - v)) + 1.0;
    max_ = v;
  }
}

LogValue LogSumExpAccumulator::value() const {
  if (count_ == 0) {
    throw std::invalid_argument("empty reduction");
  }
  if (max_ == kNegInf) return kNegInf;
  return max_ + std::log(scaled_sum_);
}

LogEstimate monte_carlo_se(std::span<const LogValue> log_weights) {
  const std::size_t n = log_weights.size();
  if (n < 2) {
    throw std::invalid_argument("monte_carlo_se needs at least 2 samples");
  }
  double hi = kNegInf;
  for (double v : log_weights) {
    require_not_nan(v, "monte_carlo_se");
    hi = std::max(hi, v);
  }
  LogEstimate out;
  out.n_samples = n;
  if (hi == kNegInf) {
    out.log_value = kNegInf;
    return out;
  }
  double mean = 0.0;
  for (double v : log_weights) mean += std::exp(v - hi);
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : log_weights) {
    const double d = std::exp(v - hi) - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  out.log_value = hi + std::log(mean);
  out.standard_error = sd / std::sqrt(static_cast<double>(n)) / mean;
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id) {
  const std::uint64_t a = splitmix64(seed);
  const std::uint64_t b = splitmix64(stream_id ^ 0xD1B54A32D192ED03ULL);
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  engine_.seed(seq);
}

RngStream RngStream::substream(std::uint64_t id) const {
  return RngStream(splitmix64(seed_ ^ splitmix64(stream_id_ + 0x632BE59BD9B4E019ULL)), id);
}

double RngStream::uniform() { return unit_(engine_); }

double RngStream::normal() { return gauss_(engine_); }

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("RngStream::below(0)");
  std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
  return dist(engine_);
}

int default_thread_count() {
  if (const char* env = std::getenv("DBNEVAL_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

}  // namespace dbneval
