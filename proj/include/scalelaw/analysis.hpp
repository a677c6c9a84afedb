#pragma once

// Noiseless simulation, compute-optimal allocation and multi-form comparison.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "scalelaw/data.hpp"
#include "scalelaw/errors.hpp"
#include "scalelaw/fit.hpp"
#include "scalelaw/forms.hpp"

namespace scalelaw {

////////////////
// Simulation //
////////////////

inline ScalingDataset simulate_noiseless(const FormSpec& spec, const FormParams& params,
                                         const std::vector<std::vector<double>>& grid,
                                         std::vector<std::string> dim_names = {},
                                         std::string metric_name = "y") {
  if (dim_names.empty())
    for (int i = 0; i < spec.arity; ++i) dim_names.push_back("x" + std::to_string(i + 1));
  if (static_cast<int>(dim_names.size()) != spec.arity)
    throw ArgumentError("simulate: need one dimension name per form input");
  std::vector<DataPoint> pts;
  pts.reserve(grid.size());
  for (const auto& x : grid) pts.push_back({x, eval_form(spec, params, x)});
  return ScalingDataset(std::move(pts), std::move(dim_names), std::move(metric_name));
}

// Cartesian product of per-dimension value lists.
inline std::vector<std::vector<double>> product_grid(const std::vector<std::vector<double>>& axes) {
  std::vector<std::vector<double>> out{{}};
  for (const auto& axis : axes) {
    std::vector<std::vector<double>> next;
    for (const auto& prefix : out)
      for (double v : axis) {
        auto p = prefix;
        p.push_back(v);
        next.push_back(std::move(p));
      }
    out = std::move(next);
  }
  return out;
}

// count values log-spaced over [lo, hi].
inline std::vector<double> log_space(double lo, double hi, int count) {
  if (!(lo > 0.0) || !(hi >= lo) || count < 1) throw ArgumentError("log_space: need 0 < lo <= hi");
  std::vector<double> v(static_cast<std::size_t>(count));
  const double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < count; ++i)
    v[static_cast<std::size_t>(i)] = count == 1 ? lo : std::exp(a + (b - a) * i / (count - 1));
  return v;
}

/////////////////////
// Compute optimal //
/////////////////////

struct ComputeBudget {
  double C = 1.0;
  double C0 = 6.0;
  std::vector<int> compute_dims;  // D, 0-based
  std::vector<int> free_dims;     // H, 0-based
  // Values of the dimensions outside D and H (entries for D and H are
  // ignored; H entries, when positive, center the starts). Empty: all 1.
  std::vector<double> fixed_x;

  void validate(int arity) const {
    if (!(C > 0.0) || !std::isfinite(C)) throw ArgumentError("compute budget C must be positive");
    if (!(C0 > 0.0) || !std::isfinite(C0)) throw ArgumentError("C0 must be positive");
    if (compute_dims.empty()) throw ArgumentError("compute dimensions must be nonempty");
    std::vector<int> seen(static_cast<std::size_t>(arity), 0);
    for (int d : compute_dims) {
      if (d < 0 || d >= arity) throw ArgumentError("compute dimension out of range");
      if (seen[static_cast<std::size_t>(d)]++) throw ArgumentError("compute dimension repeated");
    }
    for (int d : free_dims) {
      if (d < 0 || d >= arity) throw ArgumentError("free dimension out of range");
      if (seen[static_cast<std::size_t>(d)]++)
        throw ArgumentError("free dimensions must be disjoint from compute dimensions");
    }
    if (!fixed_x.empty() && static_cast<int>(fixed_x.size()) != arity)
      throw ArgumentError("fixed_x needs one entry per dimension");
  }
};

struct SolverOptions {
  int starts = 16;
  int max_iterations = 500;
  double gradient_tol = 1e-8;  // on d log y / d log x along the budget surface
  double spread = 3.0;         // start offsets in log x
  std::uint64_t seed = 0;
};

struct ComputeOptimum {
  std::vector<double> x;
  double y = kNaN;
  double multiplier = kNaN;            // lambda in dy/dx_l + lambda C / x_l = 0
  double gradient_residual = kNaN;     // infinity norm, log space
  double constraint_residual = kNaN;   // |C - C0 prod x_D| / C
  int converged_starts = 0;
};

// Carries the best point found when no start reached the tolerance.
class ComputeOptimumError : public SolverError {
 public:
  ComputeOptimumError(const std::string& what, ComputeOptimum best)
      : SolverError(what), best_(std::move(best)) {}
  const ComputeOptimum& best() const { return best_; }

 private:
  ComputeOptimum best_;
};

namespace detail {

// Reduced coordinates: log x of D minus its last entry, then log x of H. The
// last D entry is log(C / C0) minus the sum of the others.
struct BudgetSurface {
  const FormSpec& spec;
  const FormParams& params;
  const ComputeBudget& budget;
  double log_total;  // log(C / C0)

  int size() const {
    return static_cast<int>(budget.compute_dims.size() - 1 + budget.free_dims.size());
  }

  std::vector<double> point(const Eigen::VectorXd& v) const {
    std::vector<double> x(static_cast<std::size_t>(spec.arity), 1.0);
    if (!budget.fixed_x.empty()) x = budget.fixed_x;
    const std::size_t k = budget.compute_dims.size();
    double rest = log_total;
    for (std::size_t i = 0; i + 1 < k; ++i) {
      x[static_cast<std::size_t>(budget.compute_dims[i])] = std::exp(v[static_cast<Eigen::Index>(i)]);
      rest -= v[static_cast<Eigen::Index>(i)];
    }
    x[static_cast<std::size_t>(budget.compute_dims[k - 1])] = std::exp(rest);
    for (std::size_t j = 0; j < budget.free_dims.size(); ++j)
      x[static_cast<std::size_t>(budget.free_dims[j])] =
          std::exp(v[static_cast<Eigen::Index>(k - 1 + j)]);
    return x;
  }

  // Beyond this the gradient of y underflows and a runaway looks stationary.
  static constexpr double kMaxLogX = 230.0;

  // log y and its gradient in reduced coordinates; false outside the domain.
  bool eval(const Eigen::VectorXd& v, double& f, Eigen::VectorXd* g) const {
    const auto x = point(v);
    for (double xi : x)
      if (!(xi > 0.0) || !std::isfinite(xi) || std::abs(std::log(xi)) > kMaxLogX) return false;
    try {
      if (!g) {
        f = log_eval_form(spec, params, x);
        return std::isfinite(f);
      }
      const FormGradient fg = grad_form(spec, params, x);
      if (!(fg.value > 0.0)) return false;
      f = std::log(fg.value);
      std::vector<double> s(x.size());  // d log y / d log x
      for (std::size_t i = 0; i < x.size(); ++i) s[i] = fg.d_inputs[i] * x[i] / fg.value;
      const std::size_t k = budget.compute_dims.size();
      const double last = s[static_cast<std::size_t>(budget.compute_dims[k - 1])];
      g->resize(size());
      for (std::size_t i = 0; i + 1 < k; ++i)
        (*g)[static_cast<Eigen::Index>(i)] = s[static_cast<std::size_t>(budget.compute_dims[i])] - last;
      for (std::size_t j = 0; j < budget.free_dims.size(); ++j)
        (*g)[static_cast<Eigen::Index>(k - 1 + j)] = s[static_cast<std::size_t>(budget.free_dims[j])];
      return std::isfinite(f) && g->allFinite();
    } catch (const DomainError&) {
      return false;
    }
  }
};

struct LocalResult {
  Eigen::VectorXd v;
  double f = kInf;
  double grad_norm = kInf;
};

// BFGS with backtracking, then Newton steps on a finite-difference Hessian of
// the exact gradient.
inline LocalResult local_minimize(const BudgetSurface& s, Eigen::VectorXd v, const SolverOptions& o) {
  LocalResult out;
  const int p = s.size();
  double f;
  Eigen::VectorXd g;
  if (!s.eval(v, f, &g)) return out;
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(p, p);
  for (int it = 0; it < o.max_iterations && g.lpNorm<Eigen::Infinity>() > 1e-6; ++it) {
    Eigen::VectorXd d = -Hinv * g;
    if (d.dot(g) >= 0) {
      Hinv.setIdentity();
      d = -g;
    }
    const double dn = d.lpNorm<Eigen::Infinity>();
    if (dn > 2.0) d *= 2.0 / dn;
    double t = 1.0, fn = kInf;
    Eigen::VectorXd vn, gn;
    bool ok = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      vn = v + t * d;
      if (s.eval(vn, fn, &gn) && fn <= f + 1e-4 * t * d.dot(g)) {
        ok = true;
        break;
      }
    }
    if (!ok) break;
    const Eigen::VectorXd sv = vn - v, yv = gn - g;
    const double sy = sv.dot(yv);
    if (sy > 1e-300) {
      const double r = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(p, p);
      Hinv = (I - r * sv * yv.transpose()) * Hinv * (I - r * yv * sv.transpose()) +
             r * sv * sv.transpose();
    }
    v = vn;
    f = fn;
    g = gn;
  }
  for (int it = 0; it < 50 && g.lpNorm<Eigen::Infinity>() > 1e-14; ++it) {
    Eigen::MatrixXd H(p, p);
    bool ok = true;
    for (int j = 0; j < p && ok; ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(v[j]));
      Eigen::VectorXd a = v, b = v, ga, gb;
      a[j] += h;
      b[j] -= h;
      double fa, fb;
      ok = s.eval(a, fa, &ga) && s.eval(b, fb, &gb);
      if (ok) H.col(j) = (ga - gb) / (2.0 * h);
    }
    if (!ok) break;
    H = 0.5 * (H + H.transpose());
    Eigen::VectorXd step = H.ldlt().solve(-g);
    if (!step.allFinite() || step.dot(g) >= 0) break;
    const double sn = step.lpNorm<Eigen::Infinity>();
    if (sn > 1.0) step /= sn;
    double fn;
    Eigen::VectorXd gn;
    const Eigen::VectorXd vn = v + step;
    if (!s.eval(vn, fn, &gn) || gn.lpNorm<Eigen::Infinity>() >= g.lpNorm<Eigen::Infinity>()) break;
    v = vn;
    f = fn;
    g = gn;
  }
  out.v = v;
  out.f = f;
  out.grad_norm = g.lpNorm<Eigen::Infinity>();
  return out;
}

}  // namespace detail

// Minimizes y subject to C = C0 * prod_{l in D} x_l over the D and H
// coordinates. Throws ComputeOptimumError when no start reaches the
// gradient tolerance.
inline ComputeOptimum compute_optimal(const FormSpec& spec, const FormParams& params,
                                      const ComputeBudget& budget, const SolverOptions& opt = {}) {
  budget.validate(spec.arity);
  const detail::BudgetSurface surf{spec, params, budget, std::log(budget.C / budget.C0)};
  const int p = surf.size();
  const std::size_t k = budget.compute_dims.size();
  const double share = surf.log_total / static_cast<double>(k);

  Eigen::VectorXd center(p);
  for (std::size_t i = 0; i + 1 < k; ++i) center[static_cast<Eigen::Index>(i)] = share;
  for (std::size_t j = 0; j < budget.free_dims.size(); ++j) {
    const double fx =
        budget.fixed_x.empty() ? 1.0 : budget.fixed_x[static_cast<std::size_t>(budget.free_dims[j])];
    center[static_cast<Eigen::Index>(k - 1 + j)] = fx > 0.0 ? std::log(fx) : 0.0;
  }

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> off(-opt.spread, opt.spread);
  detail::LocalResult best;
  int converged = 0;
  for (int st = 0; st < std::max(1, opt.starts); ++st) {
    Eigen::VectorXd v0 = center;
    if (st > 0)
      for (int i = 0; i < p; ++i) v0[i] += off(rng);
    detail::LocalResult r = p == 0 ? detail::LocalResult{} : detail::local_minimize(surf, v0, opt);
    if (p == 0) {
      r.v = v0;
      if (!surf.eval(v0, r.f, nullptr)) continue;
      r.grad_norm = 0.0;
    }
    if (!std::isfinite(r.f)) continue;
    const bool conv = r.grad_norm <= opt.gradient_tol;
    converged += conv;
    const bool best_conv = best.grad_norm <= opt.gradient_tol;
    if ((conv && !best_conv) || (conv == best_conv && r.f < best.f)) best = r;
  }

  ComputeOptimum out;
  out.converged_starts = converged;
  if (!std::isfinite(best.f)) throw ComputeOptimumError("compute_optimal: no start evaluated", out);
  out.x = surf.point(best.v);
  out.y = std::exp(best.f);
  out.gradient_residual = best.grad_norm;
  double prod = 0.0;
  for (int d : budget.compute_dims) prod += std::log(out.x[static_cast<std::size_t>(d)]);
  out.constraint_residual = std::abs(1.0 - budget.C0 * std::exp(prod) / budget.C);
  const FormGradient fg = grad_form(spec, params, out.x);
  double lam = 0.0;
  for (int d : budget.compute_dims)
    lam -= fg.d_inputs[static_cast<std::size_t>(d)] * out.x[static_cast<std::size_t>(d)] / budget.C;
  out.multiplier = lam / static_cast<double>(k);
  if (converged == 0) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "compute_optimal: no stationary point (best gradient %.3g)",
                  best.grad_norm);
    throw ComputeOptimumError(buf, out);
  }
  return out;
}

/////////////////
// Comparisons //
/////////////////

struct CompareEntry {
  std::string label;
  FormSpec spec;  // template; grid cells are applied to it
  HyperGrid grid;
};

struct ComparisonRow {
  std::string label;
  int n = 0;
  int S = 0;
  double lambda = 0.0;
  MetricPair train, test;
  double wall_seconds = 0.0;
  std::string error;  // nonempty: the fit failed and the metrics are NaN
  bool winner = false;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
  std::vector<FitResult> fits;  // parallel to rows; default-constructed on error
};

// Fits every entry on split.train (hyperparameters selected per entry) and
// scores split.test. The row with the lowest test RMSLE is the winner.
inline ComparisonTable compare_forms(const Split& split, const std::vector<CompareEntry>& entries,
                                     const FitConfig& cfg) {
  ComparisonTable t;
  for (const auto& e : entries) {
    ComparisonRow row;
    row.label = e.label;
    const auto t0 = std::chrono::steady_clock::now();
    FitResult fit;
    try {
      fit = fit_selected(split.train, split.test, e.spec, e.grid, cfg);
      row.n = fit.n;
      row.S = fit.S;
      row.lambda = fit.lambda;
      row.train = fit.train;
      row.test = fit.test;
    } catch (const Error& err) {
      row.error = err.what();
    }
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    t.rows.push_back(std::move(row));
    t.fits.push_back(std::move(fit));
  }
  int best = -1;
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    if (std::isfinite(t.rows[i].test.rmsle) &&
        (best < 0 || t.rows[i].test.rmsle < t.rows[static_cast<std::size_t>(best)].test.rmsle))
      best = static_cast<int>(i);
  if (best >= 0) t.rows[static_cast<std::size_t>(best)].winner = true;
  return t;
}

inline void write_comparison_tsv(std::ostream& out, const ComparisonTable& t) {
  out << "form\tn\tS\tlambda\ttrain_rmsle\ttrain_rsle\ttest_rmsle\ttest_rsle\twall_seconds\n";
  for (const auto& r : t.rows)
    out << r.label << '\t' << r.n << '\t' << r.S << '\t' << format_number(r.lambda) << '\t'
        << format_number(r.train.rmsle) << '\t' << format_number(r.train.rsle) << '\t'
        << format_number(r.test.rmsle) << '\t' << format_number(r.test.rsle) << '\t'
        << format_number(r.wall_seconds) << '\n';
}

inline void write_comparison_table(std::ostream& out, const ComparisonTable& t) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "  %-10s %2s %2s %8s  %-22s %-22s %8s\n", "form", "n", "S",
                "lambda", "train RMSLE +- RSLE", "test RMSLE +- RSLE", "seconds");
  out << buf;
  for (const auto& r : t.rows) {
    if (!r.error.empty()) {
      std::snprintf(buf, sizeof buf, "  %-10s failed: ", r.label.c_str());
      out << buf << r.error << '\n';
      continue;
    }
    std::snprintf(buf, sizeof buf, "%c %-10s %2d %2d %8.1e  %9.3e +- %9.3e %9.3e +- %9.3e %8.1f\n",
                  r.winner ? '*' : ' ', r.label.c_str(), r.n, r.S, r.lambda, r.train.rmsle,
                  r.train.rsle, r.test.rmsle, r.test.rsle, r.wall_seconds);
    out << buf;
  }
}

}  // namespace scalelaw
