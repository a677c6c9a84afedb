#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace scalelaw {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/////////////////////
// log(1 + exp(z)) //
/////////////////////

template <typename T>
inline T softplus(T z) {
  using std::abs, std::exp, std::log1p, std::max;
  if (z == -std::numeric_limits<T>::infinity()) return T(0);
  return max(z, T(0)) + log1p(exp(-abs(z)));
}

/////////////////////
// 1/(1 + exp(-z)) //
/////////////////////

template <typename T>
inline T sigmoid(T z) {
  using std::exp;
  if (z >= T(0)) return T(1) / (T(1) + exp(-z));
  const T e = exp(z);
  return e / (T(1) + e);
}

// log(exp(a) + exp(b)); either side may be -inf.
template <typename T>
inline T log_add_exp(T a, T b) {
  constexpr T ninf = -std::numeric_limits<T>::infinity();
  if (a == ninf) return b;
  if (b == ninf) return a;
  return std::max(a, b) + softplus(-std::abs(a - b));
}

// log(sum exp(v_i)) with the running maximum subtracted. Empty or all -inf
// input yields -inf.
template <typename T>
inline T log_sum_exp(std::span<const T> v) {
  constexpr T ninf = -std::numeric_limits<T>::infinity();
  T hi = ninf;
  for (T x : v) hi = std::max(hi, x);
  if (hi == ninf) return ninf;
  T acc = 0;
  for (T x : v) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

// log((exp(log_body)^-1 + exp(log_inverse))^-1): combine a quantity with a
// limit a via (Y^-1 + a^-1)^-1. log_inverse = -inf means a = inf.
template <typename T>
inline T limit_combine_log(T log_body, T log_inverse) {
  constexpr T ninf = -std::numeric_limits<T>::infinity();
  if (log_inverse == ninf || log_body == ninf) return log_body;
  return log_body - softplus(log_body + log_inverse);
}

}  // namespace scalelaw
