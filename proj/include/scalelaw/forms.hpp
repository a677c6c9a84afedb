#pragma once

// Evaluation and exact gradients of every supported form behind one
// interface. y is always computed in log space; eval_form exponentiates
// only at the end.

#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "scalelaw/baselines.hpp"
#include "scalelaw/errors.hpp"
#include "scalelaw/mbnsl.hpp"
#include "scalelaw/wiring.hpp"

namespace scalelaw {

using FormParams = std::variant<ParamSet, CfParams, DcParams>;

struct FormGradient {
  double value = 0.0;              // y
  std::vector<double> d_params;    // dy/d(flat params), see flatten()
  std::vector<double> d_inputs;    // dy/dx
};

namespace detail {

inline std::vector<int> input_order(const FormSpec& spec) {
  if (spec.input_order.empty()) return spec.all_dims();
  if (static_cast<int>(spec.input_order.size()) != spec.arity)
    throw ConfigError("input_order must have one entry per form input");
  return spec.input_order;
}

inline std::vector<double> log_inputs(std::span<const double> x, std::size_t arity) {
  if (x.size() != arity)
    throw ArgumentError("expected " + std::to_string(arity) + " inputs, got " +
                        std::to_string(x.size()));
  std::vector<double> lx(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !std::isfinite(x[i]))
      throw DomainError("input " + std::to_string(i) + " must be positive and finite");
    lx[i] = std::log(x[i]);
  }
  return lx;
}

template <typename P>
const P& expect(const FormSpec& spec, const FormParams& params) {
  if (const P* p = std::get_if<P>(&params)) return *p;
  throw ConfigError("parameter type does not match form " + to_string(spec.kind));
}

// Per-kernel, per-limit log values of a ParamSet laid out by wiring slot.
struct SlotValues {
  std::vector<const MbnslParams*> kernels;
  std::vector<double> limit_logs;
};

inline SlotValues slot_values(const Wiring& w, const ParamSet& p) {
  SlotValues sv;
  for (const auto& ks : w.kernels) sv.kernels.push_back(&p.kernels.at(ks.id));
  for (const auto& ls : w.limits) sv.limit_logs.push_back(p.limits.at(ls.role).log_value);
  return sv;
}

}  // namespace detail

// Number of scalars in the flat parameter layout of params.
inline std::size_t flat_size(const FormParams& params) {
  if (const auto* ps = std::get_if<ParamSet>(&params)) {
    std::size_t n = ps->limits.size();
    for (const auto& [id, k] : ps->kernels) n += k.flat_size();
    return n;
  }
  if (std::holds_alternative<CfParams>(params)) return CfParams::kSize;
  return DcParams::kSize;
}

// Flat layout: kernels in ascending id order (each in MbnslParams::flat_size
// order), then limit log values in ascending role order. CF/DC use their own
// field order.
inline std::vector<double> flatten(const FormParams& params) {
  std::vector<double> v;
  if (const auto* ps = std::get_if<ParamSet>(&params)) {
    for (const auto& [id, k] : ps->kernels) {
      v.push_back(k.log_offset);
      v.insert(v.end(), k.init_exponents.begin(), k.init_exponents.end());
      for (const auto& br : k.breaks) {
        v.insert(v.end(), br.exponents.begin(), br.exponents.end());
        v.push_back(br.log_location);
        v.push_back(br.sharpness);
      }
    }
    for (const auto& [role, l] : ps->limits) v.push_back(l.log_value);
  } else if (const auto* cf = std::get_if<CfParams>(&params)) {
    const auto a = cf->flat();
    v.assign(a.begin(), a.end());
  } else {
    const auto a = std::get<DcParams>(params).flat();
    v.assign(a.begin(), a.end());
  }
  return v;
}

// Inverse of flatten, using `shape` for structure.
inline FormParams unflatten(const FormParams& shape, std::span<const double> v) {
  if (v.size() != flat_size(shape)) throw ArgumentError("unflatten: wrong vector length");
  if (const auto* ps = std::get_if<ParamSet>(&shape)) {
    ParamSet out = *ps;
    std::size_t i = 0;
    for (auto& [id, k] : out.kernels) {
      k.log_offset = v[i++];
      for (auto& c : k.init_exponents) c = v[i++];
      for (auto& br : k.breaks) {
        for (auto& c : br.exponents) c = v[i++];
        br.log_location = v[i++];
        br.sharpness = v[i++];
      }
    }
    for (auto& [role, l] : out.limits) l.log_value = v[i++];
    return out;
  }
  if (std::holds_alternative<CfParams>(shape)) return CfParams::from_flat(v);
  return DcParams::from_flat(v);
}

// Checks that params structurally matches spec. Throws ConfigError.
inline void check_params(const FormSpec& spec, const FormParams& params,
                         double f_floor = kDefaultSharpnessFloor) {
  switch (spec.kind) {
    case FormKind::cf:
      detail::expect<CfParams>(spec, params);
      if (spec.arity != 2) throw ConfigError("CF requires arity 2");
      break;
    case FormKind::dc:
      detail::expect<DcParams>(spec, params);
      if (spec.arity != 3) throw ConfigError("DC requires arity 3");
      break;
    default:
      check_structure(Wiring::build(spec), detail::expect<ParamSet>(spec, params), f_floor);
  }
  detail::input_order(spec);
}

// log y for the form at x (raw, positive inputs; x.size() == spec.arity).
inline double log_eval_form(const FormSpec& spec, const FormParams& params,
                            std::span<const double> x) {
  switch (spec.kind) {
    case FormKind::cf: {
      const auto& p = detail::expect<CfParams>(spec, params);
      const auto ord = detail::input_order(spec);
      detail::log_inputs(x, 2);
      return log_eval_cf(p, x[ord[0]], x[ord[1]]);
    }
    case FormKind::dc: {
      const auto& p = detail::expect<DcParams>(spec, params);
      const auto ord = detail::input_order(spec);
      detail::log_inputs(x, 3);
      return log_eval_dc(p, x[ord[0]], x[ord[1]], x[ord[2]]);
    }
    default: {
      const auto& ps = detail::expect<ParamSet>(spec, params);
      const Wiring w = Wiring::build(spec);
      check_structure(w, ps, std::numeric_limits<double>::min());
      const auto lx = detail::log_inputs(x, static_cast<std::size_t>(spec.arity));
      const auto sv = detail::slot_values(w, ps);
      std::vector<double> kl(w.kernels.size());
      for (std::size_t i = 0; i < kl.size(); ++i) {
        const MbnslParams& k = *sv.kernels[i];
        kl[i] = detail::kernel_log_value(k, [&](std::size_t j) { return lx[k.index_set[j]]; });
      }
      std::vector<double> nodes;
      return w.forward(kl, sv.limit_logs, nodes);
    }
  }
}

inline double eval_form(const FormSpec& spec, const FormParams& params, std::span<const double> x) {
  return std::exp(log_eval_form(spec, params, x));
}

// Exact reverse-mode derivatives of y with respect to the flat parameters
// (flatten() order) and the inputs.
inline FormGradient grad_form(const FormSpec& spec, const FormParams& params,
                              std::span<const double> x) {
  FormGradient out;
  double ly = 0.0;
  std::vector<double> dlog_params, dlog_x(static_cast<std::size_t>(spec.arity), 0.0);
  if (spec.is_baseline()) {
    const auto ord = detail::input_order(spec);
    detail::log_inputs(x, static_cast<std::size_t>(spec.arity));
    LogGradient g = spec.kind == FormKind::cf
                        ? log_grad_cf(detail::expect<CfParams>(spec, params), x[ord[0]], x[ord[1]])
                        : log_grad_dc(detail::expect<DcParams>(spec, params), x[ord[0]], x[ord[1]],
                                      x[ord[2]]);
    ly = g.log_value;
    dlog_params = std::move(g.d_params);
    for (std::size_t k = 0; k < ord.size(); ++k) dlog_x[ord[k]] += g.d_inputs[k] * x[ord[k]];
  } else {
    const auto& ps = detail::expect<ParamSet>(spec, params);
    const Wiring w = Wiring::build(spec);
    check_structure(w, ps, std::numeric_limits<double>::min());
    const auto lx = detail::log_inputs(x, static_cast<std::size_t>(spec.arity));
    const auto sv = detail::slot_values(w, ps);
    std::vector<double> kl(w.kernels.size());
    for (std::size_t i = 0; i < kl.size(); ++i) {
      const MbnslParams& k = *sv.kernels[i];
      kl[i] = detail::kernel_log_value(k, [&](std::size_t j) { return lx[k.index_set[j]]; });
    }
    std::vector<double> nodes;
    ly = w.forward(kl, sv.limit_logs, nodes);
    std::vector<double> d_kernel(w.kernels.size(), 0.0), d_limit(w.limits.size(), 0.0);
    w.backward(nodes, sv.limit_logs, d_kernel, d_limit);

    // Offsets of each kernel / limit in the flat layout (ascending id / role).
    dlog_params.assign(flat_size(params), 0.0);
    std::map<int, std::size_t> kernel_off, limit_off;
    std::size_t off = 0;
    for (const auto& [id, k] : ps.kernels) {
      kernel_off[id] = off;
      off += k.flat_size();
    }
    for (const auto& [role, l] : ps.limits) limit_off[role] = off++;

    std::vector<double> dlocal;
    for (std::size_t i = 0; i < w.kernels.size(); ++i) {
      const MbnslParams& k = *sv.kernels[i];
      dlocal.assign(k.dims(), 0.0);
      std::span<double> dp(dlog_params.data() + kernel_off[k.kernel_id], k.flat_size());
      detail::kernel_log_grad(k, [&](std::size_t j) { return lx[k.index_set[j]]; }, d_kernel[i], dp,
                              dlocal);
      for (std::size_t j = 0; j < k.dims(); ++j) dlog_x[k.index_set[j]] += dlocal[j];
    }
    for (std::size_t i = 0; i < w.limits.size(); ++i)
      dlog_params[limit_off[w.limits[i].role]] += d_limit[i];
  }
  out.value = std::exp(ly);
  out.d_params.resize(dlog_params.size());
  for (std::size_t i = 0; i < dlog_params.size(); ++i) out.d_params[i] = out.value * dlog_params[i];
  out.d_inputs.resize(dlog_x.size());
  for (std::size_t i = 0; i < dlog_x.size(); ++i) out.d_inputs[i] = out.value * dlog_x[i] / x[i];
  return out;
}

}  // namespace scalelaw
