#pragma once

// Log-error metrics. Each caller context has its own epsilon:
//   training loss        kLossEpsilon   = 1e-16
//   reported RMSLE       kReportEpsilon = 1e-36
//   normalization offset kNormEpsilon   = 1e-20

#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "scalelaw/errors.hpp"

namespace scalelaw {

inline constexpr double kLossEpsilon = 1e-16;
inline constexpr double kReportEpsilon = 1e-36;
inline constexpr double kNormEpsilon = 1e-20;

struct MetricInputs {
  std::span<const double> actual;     // y
  std::span<const double> predicted;  // y hat
  double epsilon = kReportEpsilon;
};

namespace detail {

inline void check_metric_inputs(const MetricInputs& in, std::size_t min_n) {
  if (in.actual.size() != in.predicted.size())
    throw ArgumentError("metric: actual and predicted lengths differ");
  if (in.actual.size() < min_n)
    throw ArgumentError("metric: need at least " + std::to_string(min_n) + " points");
  if (!(in.epsilon >= 0.0)) throw ArgumentError("metric: epsilon must be nonnegative");
}

inline double squared_log_error(const MetricInputs& in, std::size_t i) {
  const double e = std::log(in.actual[i] + in.epsilon) - std::log(in.predicted[i] + in.epsilon);
  return e * e;
}

}  // namespace detail

inline double msle(const MetricInputs& in) {
  detail::check_metric_inputs(in, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < in.actual.size(); ++i) s += detail::squared_log_error(in, i);
  return s / static_cast<double>(in.actual.size());
}

inline double rmsle(const MetricInputs& in) { return std::sqrt(msle(in)); }

// sqrt(mu + sigma / sqrt(N)) - sqrt(mu) over the squared log errors, with
// sigma the N-1 sample standard deviation.
inline double root_standard_log_error(const MetricInputs& in) {
  detail::check_metric_inputs(in, 2);
  const std::size_t n = in.actual.size();
  double mu = 0.0;
  for (std::size_t i = 0; i < n; ++i) mu += detail::squared_log_error(in, i);
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = detail::squared_log_error(in, i) - mu;
    var += d * d;
  }
  const double sigma = std::sqrt(var / static_cast<double>(n - 1));
  return std::sqrt(mu + sigma / std::sqrt(static_cast<double>(n))) - std::sqrt(mu);
}

}  // namespace scalelaw
