#pragma once

// Baseline forms.
//
//   CF: y = a + b1 x1^-c1 + b2 x2^-c2
//   DC: y = a + b1 (U_N + U_N d1 (1 - e^(-R_N/d1)))^-c1 + b2 (x3 + x3 d2 (1 - e^(-R_D/d2)))^-c2
//       R_D = max(0, x2/x3 - 1)
//       G   = ((c1 b1) / (c2 b2))^(1/(c1+c2))
//       U_N = min(x1, (x3 G)^(c2/c1) G)
//       R_N = max(0, x1/U_N - 1)
//
// DC kinks are evaluated exactly. At a tie the branch valid just below the
// kink is taken: max(0, z) -> 0 at z = 0 and min(x1, cap) -> x1 at x1 = cap.

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "scalelaw/dual.hpp"
#include "scalelaw/errors.hpp"
#include "scalelaw/numeric.hpp"

namespace scalelaw {

struct CfParams {
  double log_a = 0.0;
  double log_b1 = 0.0;
  double c1 = 0.0;
  double log_b2 = 0.0;
  double c2 = 0.0;

  static constexpr std::size_t kSize = 5;
  std::array<double, kSize> flat() const { return {log_a, log_b1, c1, log_b2, c2}; }
  static CfParams from_flat(std::span<const double> v) { return {v[0], v[1], v[2], v[3], v[4]}; }
};

struct DcParams {
  double log_a = 0.0;
  double log_b1 = 0.0;
  double c1 = 1.0;
  double log_b2 = 0.0;
  double c2 = 1.0;
  double log_d1 = 0.0;
  double log_d2 = 0.0;

  static constexpr std::size_t kSize = 7;
  std::array<double, kSize> flat() const { return {log_a, log_b1, c1, log_b2, c2, log_d1, log_d2}; }
  static DcParams from_flat(std::span<const double> v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
  }

  void validate() const {
    if (c1 == 0.0) throw DomainError("DC: c1 must be nonzero");
    if (c1 + c2 == 0.0) throw DomainError("DC: c1 + c2 must be nonzero");
    if (!(c1 * c2 > 0.0)) throw DomainError("DC: c1 and c2 must share a sign for G to be real");
  }
};

namespace detail {

inline void require_positive(std::initializer_list<double> xs, const char* what) {
  for (double x : xs)
    if (!(x > 0.0)) throw DomainError(std::string(what) + ": inputs must be positive");
}

template <typename T>
T cf_log_value(const T& log_a, const T& log_b1, const T& c1, const T& log_b2, const T& c2,
               const T& lx1, const T& lx2) {
  using std::exp, std::log;
  const T t1 = log_b1 - c1 * lx1;
  const T t2 = log_b2 - c2 * lx2;
  // log-sum-exp over (log_a, t1, t2)
  T hi = log_a;
  if (hi < t1) hi = t1;
  if (hi < t2) hi = t2;
  return hi + log(exp(log_a - hi) + exp(t1 - hi) + exp(t2 - hi));
}

template <typename T>
T positive_part(const T& z) {
  return z > T(0.0) ? z : T(0.0);
}

// p: [log_a, log_b1, c1, log_b2, c2, log_d1, log_d2], x: raw positive inputs.
template <typename T>
T dc_log_value(const std::array<T, 7>& p, const std::array<T, 3>& x) {
  using std::exp, std::expm1, std::log, std::log1p;
  const T& log_a = p[0];
  const T& log_b1 = p[1];
  const T& c1 = p[2];
  const T& log_b2 = p[3];
  const T& c2 = p[4];
  const T lx1 = log(x[0]);
  const T lx2 = log(x[1]);
  const T lx3 = log(x[2]);

  const T log_g = (log(c1 / c2) + log_b1 - log_b2) / (c1 + c2);
  const T log_cap = (c2 / c1) * (lx3 + log_g) + log_g;
  const T log_un = lx1 <= log_cap ? lx1 : log_cap;
  const T r_n = positive_part(expm1(lx1 - log_un));
  const T r_d = positive_part(expm1(lx2 - lx3));

  const T d1 = exp(p[5]);
  const T d2 = exp(p[6]);
  const T eff_n = log_un + log1p(d1 * -expm1(-r_n / d1));
  const T eff_d = lx3 + log1p(d2 * -expm1(-r_d / d2));
  return cf_log_value(log_a, log_b1, c1, log_b2, c2, eff_n, eff_d);
}

}  // namespace detail

inline double log_eval_cf(const CfParams& p, double x1, double x2) {
  detail::require_positive({x1, x2}, "eval_cf");
  return detail::cf_log_value(p.log_a, p.log_b1, p.c1, p.log_b2, p.c2, std::log(x1), std::log(x2));
}

inline double eval_cf(const CfParams& p, double x1, double x2) {
  return std::exp(log_eval_cf(p, x1, x2));
}

inline double log_eval_dc(const DcParams& p, double x1, double x2, double x3) {
  detail::require_positive({x1, x2, x3}, "eval_dc");
  p.validate();
  return detail::dc_log_value<double>(p.flat(), {x1, x2, x3});
}

inline double eval_dc(const DcParams& p, double x1, double x2, double x3) {
  return std::exp(log_eval_dc(p, x1, x2, x3));
}

// d(log y) with respect to the flat parameters and the raw inputs.
struct LogGradient {
  double log_value = 0.0;
  std::vector<double> d_params;
  std::vector<double> d_inputs;
};

inline LogGradient log_grad_cf(const CfParams& p, double x1, double x2) {
  const double lx1 = std::log(x1), lx2 = std::log(x2);
  const double ly = log_eval_cf(p, x1, x2);
  const double w0 = std::exp(p.log_a - ly);
  const double w1 = std::exp(p.log_b1 - p.c1 * lx1 - ly);
  const double w2 = std::exp(p.log_b2 - p.c2 * lx2 - ly);
  LogGradient g;
  g.log_value = ly;
  g.d_params = {w0, w1, -w1 * lx1, w2, -w2 * lx2};
  g.d_inputs = {-w1 * p.c1 / x1, -w2 * p.c2 / x2};
  return g;
}

inline LogGradient log_grad_dc(const DcParams& p, double x1, double x2, double x3) {
  detail::require_positive({x1, x2, x3}, "eval_dc");
  p.validate();
  using D = detail::Dual<10>;
  const auto flat = p.flat();
  std::array<D, 7> dp;
  for (std::size_t i = 0; i < 7; ++i) dp[i] = D::variable(flat[i], i);
  const std::array<D, 3> dx{D::variable(x1, 7), D::variable(x2, 8), D::variable(x3, 9)};
  const D ly = detail::dc_log_value<D>(dp, dx);
  LogGradient g;
  g.log_value = ly.v;
  g.d_params.assign(ly.d.begin(), ly.d.begin() + 7);
  g.d_inputs.assign(ly.d.begin() + 7, ly.d.end());
  return g;
}

}  // namespace scalelaw
