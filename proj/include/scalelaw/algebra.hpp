#pragma once

// Closed-form manipulations of MBNSL kernels.
//
// Additive pair:   y = b prod x_i^-c_i0 + g prod x_i^h_i
// Single break:    y = b prod x_i^-c_i0 (1 + (prod x_i^c_i1 / d)^|1/f|)^-f
// The two coincide exactly when f = -1, c_i1 = c_i0 + h_i and d = b / g.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "scalelaw/errors.hpp"
#include "scalelaw/mbnsl.hpp"

namespace scalelaw {

struct AdditivePair {
  double log_b = 0.0;
  std::vector<double> c0;
  double log_g = 0.0;
  std::vector<double> h;
};

// Monomial w_b * prod x_i^w_c_i touching a kernel in multi-log space.
struct TangentPlane {
  double log_wb = 0.0;
  std::vector<double> w_c;
};

inline double log_eval_additive(const AdditivePair& p, std::span<const double> log_x) {
  if (log_x.size() != p.c0.size() || p.h.size() != p.c0.size())
    throw ArgumentError("additive pair: dimension mismatch");
  double t1 = p.log_b, t2 = p.log_g;
  for (std::size_t i = 0; i < log_x.size(); ++i) {
    t1 -= p.c0[i] * log_x[i];
    t2 += p.h[i] * log_x[i];
  }
  return log_add_exp(t1, t2);
}

inline MbnslParams additive_to_single_break(const AdditivePair& p) {
  if (p.c0.size() != p.h.size() || p.c0.empty())
    throw ArgumentError("additive pair: c0 and h must have the same nonzero length");
  MbnslParams k;
  k.index_set.resize(p.c0.size());
  std::iota(k.index_set.begin(), k.index_set.end(), 0);
  k.log_offset = p.log_b;
  k.init_exponents = p.c0;
  Break br;
  br.exponents.resize(p.c0.size());
  for (std::size_t i = 0; i < p.c0.size(); ++i) br.exponents[i] = p.c0[i] + p.h[i];
  br.log_location = p.log_b - p.log_g;
  br.sharpness = -1.0;
  k.breaks.push_back(std::move(br));
  return k;
}

// Only kernels with exactly one break of sharpness exactly -1 have an
// additive-pair form; anything else is strictly more expressive.
inline AdditivePair single_break_to_additive(const MbnslParams& k) {
  if (k.break_count() != 1)
    throw NotRepresentableError("additive form needs exactly one break, kernel has " +
                                std::to_string(k.break_count()));
  const Break& br = k.breaks.front();
  if (br.sharpness != -1.0)
    throw NotRepresentableError("additive form needs sharpness exactly -1, got " +
                                std::to_string(br.sharpness));
  k.validate(0.0);
  AdditivePair p;
  p.log_b = k.log_offset;
  p.c0 = k.init_exponents;
  p.log_g = k.log_offset - br.log_location;
  p.h.resize(k.dims());
  for (std::size_t i = 0; i < k.dims(); ++i) p.h[i] = br.exponents[i] - k.init_exponents[i];
  return p;
}

// x has one positive entry per element of the kernel's index set.
inline TangentPlane tangent_hyperplane(const MbnslParams& k, std::span<const double> x) {
  detail::check_arity(k, x.size());
  std::vector<double> lx(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0)) throw DomainError("tangent_hyperplane: inputs must be positive");
    lx[i] = std::log(x[i]);
  }
  TangentPlane tp;
  tp.w_c.assign(k.dims(), 0.0);
  const double ly =
      detail::kernel_log_grad(k, [&](std::size_t i) { return lx[i]; }, 1.0, {}, tp.w_c);
  tp.log_wb = ly;
  for (std::size_t i = 0; i < k.dims(); ++i) tp.log_wb -= tp.w_c[i] * lx[i];
  return tp;
}

inline double log_eval_tangent(const TangentPlane& tp, std::span<const double> log_x) {
  if (log_x.size() != tp.w_c.size()) throw ArgumentError("tangent plane: dimension mismatch");
  double v = tp.log_wb;
  for (std::size_t i = 0; i < log_x.size(); ++i) v += tp.w_c[i] * log_x[i];
  return v;
}

}  // namespace scalelaw
