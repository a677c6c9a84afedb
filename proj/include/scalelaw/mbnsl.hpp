#pragma once

// Multivariate broken power law kernel, evaluated in log space.
//
//   K(x) = b * prod_i x_i^-c_i0 * prod_j (1 + (prod_i x_i^c_ij / d_j)^|1/f_j|)^-f_j
//
// In log space each break contributes -f_j * softplus(|1/f_j| * (c_j . log x - log d_j)),
// so nothing overflows for any finite log x.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "scalelaw/errors.hpp"
#include "scalelaw/numeric.hpp"

namespace scalelaw {

inline constexpr double kDefaultSharpnessFloor = 1e-3;

struct Break {
  std::vector<double> exponents;  // c_ij, one per entry of the kernel's index set
  double log_location = 0.0;      // log d_j
  double sharpness = 1.0;         // f_j, nonzero
};

struct MbnslParams {
  int kernel_id = 0;
  std::vector<int> index_set;  // 0-based input dimensions
  double log_offset = 0.0;     // log b
  std::vector<double> init_exponents;
  std::vector<Break> breaks;

  std::size_t dims() const { return index_set.size(); }
  std::size_t break_count() const { return breaks.size(); }

  // Number of scalars in the flat parameter layout:
  // [log_offset, init_exponents..., (exponents..., log_location, sharpness) per break].
  std::size_t flat_size() const { return 1 + dims() + breaks.size() * (dims() + 2); }

  void validate(double f_floor = kDefaultSharpnessFloor) const {
    if (index_set.empty())
      throw ArgumentError("kernel " + std::to_string(kernel_id) + ": empty index set");
    if (init_exponents.size() != dims())
      throw ArgumentError("kernel " + std::to_string(kernel_id) +
                          ": init_exponents length does not match index set");
    for (const auto& br : breaks) {
      if (br.exponents.size() != dims())
        throw ArgumentError("kernel " + std::to_string(kernel_id) +
                            ": break exponents length does not match index set");
      if (!(std::abs(br.sharpness) >= f_floor))
        throw ArgumentError("kernel " + std::to_string(kernel_id) + ": |sharpness| " +
                            std::to_string(std::abs(br.sharpness)) + " below floor");
    }
  }
};

namespace detail {

inline void check_arity(const MbnslParams& k, std::size_t n) {
  if (n != k.dims())
    throw ArgumentError("kernel " + std::to_string(k.kernel_id) + " expects " +
                        std::to_string(k.dims()) + " inputs, got " + std::to_string(n));
}

// at(i) returns log x for the i-th entry of the kernel's index set.
template <typename At>
double kernel_log_value(const MbnslParams& k, const At& at) {
  double out = k.log_offset;
  for (std::size_t i = 0; i < k.dims(); ++i) out -= k.init_exponents[i] * at(i);
  for (const auto& br : k.breaks) {
    double s = -br.log_location;
    for (std::size_t i = 0; i < k.dims(); ++i) s += br.exponents[i] * at(i);
    out -= br.sharpness * softplus(std::abs(1.0 / br.sharpness) * s);
  }
  return out;
}

// Accumulates scale * d(log K)/d(params) into d_params (flat layout) and
// scale * d(log K)/d(log x) into d_log_x (one slot per index-set entry).
// Either span may be empty. Returns log K.
template <typename At>
double kernel_log_grad(const MbnslParams& k, const At& at, double scale,
                       std::span<double> d_params, std::span<double> d_log_x) {
  const std::size_t m = k.dims();
  double out = k.log_offset;
  if (!d_params.empty()) d_params[0] += scale;
  for (std::size_t i = 0; i < m; ++i) {
    const double lx = at(i);
    out -= k.init_exponents[i] * lx;
    if (!d_params.empty()) d_params[1 + i] -= scale * lx;
    if (!d_log_x.empty()) d_log_x[i] -= scale * k.init_exponents[i];
  }
  std::size_t off = 1 + m;
  for (const auto& br : k.breaks) {
    const double f = br.sharpness;
    const double sign_f = f > 0 ? 1.0 : -1.0;
    const double g = std::abs(1.0 / f);
    double s = -br.log_location;
    for (std::size_t i = 0; i < m; ++i) s += br.exponents[i] * at(i);
    const double z = g * s;
    const double sp = softplus(z);
    const double sg = sigmoid(z);
    out -= f * sp;
    // f * |1/f| = sign(f)
    const double slope = sign_f * sg;
    if (!d_params.empty()) {
      for (std::size_t i = 0; i < m; ++i) d_params[off + i] -= scale * slope * at(i);
      d_params[off + m] += scale * slope;
      // d|1/f|/df = -sign(f) / f^2
      d_params[off + m + 1] += scale * (-sp + f * sg * s * sign_f / (f * f));
    }
    if (!d_log_x.empty())
      for (std::size_t i = 0; i < m; ++i) d_log_x[i] -= scale * slope * br.exponents[i];
    off += m + 2;
  }
  return out;
}

}  // namespace detail

// log K at log_x, where log_x has one entry per element of the index set.
inline double log_eval_mbnsl(const MbnslParams& params, std::span<const double> log_x) {
  detail::check_arity(params, log_x.size());
  return detail::kernel_log_value(params, [&](std::size_t i) { return log_x[i]; });
}

inline double eval_mbnsl(const MbnslParams& params, std::span<const double> x) {
  detail::check_arity(params, x.size());
  std::vector<double> lx(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0)) throw DomainError("eval_mbnsl: input must be positive");
    lx[i] = std::log(x[i]);
  }
  return std::exp(log_eval_mbnsl(params, lx));
}

}  // namespace scalelaw
