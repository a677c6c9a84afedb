#pragma once

// Multi-start fitting of a form to a training set, and (n, S, lambda)
// selection on a Pareto-frontier validation split.
//
// Every kernel is trained in normalized coordinates z = (log x - mean) / std:
//
//   log K = b + w.z + sum_j v_j softplus(u_j.z + beta_j)
//
// and the whole prediction is shifted by the mean log target. b, beta_j and
// the limit constants are biases; w, u_j and v_j are the weights that
// initialization draws from LeCun normal and that the L2 penalty covers.
// After training the network is mapped back to canonical parameters.
//
// Minimizer: Adam warmup, then Levenberg-Marquardt, on
//   mean(((log(yhat + eps) - log(y + eps)) / std)^2) + lambda * 0.5 * sum(weights^2)
// keeping the best point seen.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "scalelaw/baselines.hpp"
#include "scalelaw/data.hpp"
#include "scalelaw/dual.hpp"
#include "scalelaw/errors.hpp"
#include "scalelaw/forms.hpp"
#include "scalelaw/metrics.hpp"
#include "scalelaw/wiring.hpp"

namespace scalelaw {

enum class InitScaleRule { fan_in_normal };

struct OptimizerBudget {
  // Stop once the best objective has improved by less than rel_tol
  // (relative) over `patience` consecutive iterations.
  double rel_tol = 1e-8;
  int patience = 200;
  double grad_tol = 1e-15;
  double max_damping = 1e20;
  double initial_damping = 1.0;
  double max_step = 1.0;  // infinity norm of one update
  int warmup_steps = 10000;
  double warmup_rate = 1e-2;
};

struct FitConfig {
  int seeds = 20;
  int max_steps = 20000;
  double lambda = 0.0;
  double loss_epsilon = kLossEpsilon;
  double norm_epsilon = kNormEpsilon;
  double f_floor = kDefaultSharpnessFloor;
  InitScaleRule init_scale_rule = InitScaleRule::fan_in_normal;
  OptimizerBudget budget;
  std::uint64_t seed_base = 0;
  int threads = 0;  // 0: SCALELAW_THREADS, else hardware concurrency

  void validate() const {
    if (seeds < 1) throw ConfigError("seeds must be >= 1");
    if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    if (!(f_floor > 0.0)) throw ConfigError("f_floor must be > 0");
  }
};

struct MetricPair {
  double rmsle = kNaN;
  double rsle = kNaN;  // root standard log error; NaN below 2 points
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  double train_loss = kNaN;  // NaN: diverged
  int steps = 0;
  std::string note;
};

struct FitResult {
  FormSpec spec;
  FormParams best_params;
  NormStats stats;
  std::uint64_t best_seed = 0;
  std::vector<double> per_seed_train_loss;
  std::vector<SeedOutcome> seeds;
  MetricPair train, val, test;
  int n = 0;
  int S = 0;
  double lambda = 0.0;
};

// Predictions and scores of canonical parameters on a dataset.
inline std::vector<double> predict(const FormSpec& spec, const FormParams& params,
                                   const ScalingDataset& ds) {
  std::vector<double> out;
  out.reserve(ds.size());
  for (const auto& p : ds.points()) out.push_back(eval_form(spec, params, p.x));
  return out;
}

inline MetricPair score(const FormSpec& spec, const FormParams& params, const ScalingDataset& ds,
                        double epsilon = kReportEpsilon) {
  MetricPair m;
  if (ds.empty()) return m;
  const auto y = ds.ys();
  const auto yhat = predict(spec, params, ds);
  const MetricInputs in{y, yhat, epsilon};
  m.rmsle = rmsle(in);
  if (ds.size() >= 2) m.rsle = root_standard_log_error(in);
  return m;
}

namespace detail {

inline int thread_count(int requested, int jobs) {
  int n = requested;
  if (n <= 0) {
    if (const char* env = std::getenv("SCALELAW_THREADS")) n = std::atoi(env);
  }
  if (n <= 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return std::max(1, std::min(n, jobs));
}

// Runs job(i) for i in [0, jobs) on up to `threads` workers.
template <typename Job>
void parallel_for(int jobs, int threads, const Job& job) {
  if (threads <= 1 || jobs <= 1) {
    for (int i = 0; i < jobs; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next++; i < jobs; i = next++) job(i);
    });
  for (auto& th : pool) th.join();
}

// LeCun normal: truncated at two standard deviations, rescaled so the
// variance is exactly 1 / fan_in.
inline double lecun_normal(std::mt19937_64& rng, int fan_in) {
  constexpr double kTruncatedStd = 0.87962566103423978;
  std::normal_distribution<double> nd(0.0, 1.0);
  double v;
  do v = nd(rng);
  while (std::abs(v) > 2.0);
  return v / kTruncatedStd / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
}

// Training set in normalized coordinates.
struct TrainData {
  std::vector<std::vector<double>> z;  // per point, per dim
  std::vector<double> target;          // log(y + loss eps)
  double u = 0.0;                      // mean log target
  double y_std = 1.0;
  double log_eps = 0.0;
  NormStats stats;
};

inline TrainData make_train_data(const ScalingDataset& train, const FitConfig& cfg) {
  TrainData d;
  d.stats = compute_norm_stats(train, cfg.norm_epsilon);
  d.u = d.stats.log_y_mean;
  d.y_std = d.stats.log_y_std;
  d.log_eps = std::log(cfg.loss_epsilon);
  for (const auto& p : train.points()) {
    std::vector<double> lx(p.x.size());
    for (std::size_t i = 0; i < lx.size(); ++i) lx[i] = std::log(p.x[i]);
    d.z.push_back(d.stats.apply_x(lx));
    d.target.push_back(std::log(p.y + cfg.loss_epsilon));
  }
  return d;
}

// Per-parameter role in the network.
enum class Slot : unsigned char {
  bias,    // free, unpenalized
  weight,  // free, penalized as itself
  amp,     // rho of the break amplitude v = sign * (f_floor + softplus(rho)), penalized as v
  sign,    // sign of v, fixed at initialization
};

class TrainableModel {
 public:
  virtual ~TrainableModel() = default;
  std::size_t size() const { return slots_.size(); }
  const std::vector<Slot>& slots() const { return slots_; }
  // Initial point in the floored parameterization.
  virtual std::vector<double> initial(std::mt19937_64& rng) const = 0;
  // Normalized log prediction g (log yhat = g + u) of point i, and dg/dtheta
  // into row when non-null. Returns false on non-finite output.
  virtual bool evaluate(const std::vector<double>& theta, std::size_t i, double& g,
                        double* row) const = 0;
  // Canonical parameters of a floored theta.
  virtual FormParams to_params(const std::vector<double>& theta) const = 0;

  // Penalized weight value and its derivative for parameter k (0 for
  // unpenalized slots).
  std::pair<double, double> weight(const std::vector<double>& th, std::size_t k) const {
    switch (slots_[k]) {
      case Slot::weight: return {th[k], 1.0};
      case Slot::amp: return {amplitude(th, k), amplitude_derivative(th, k)};
      default: return {0.0, 0.0};
    }
  }

  // Maps raw amplitudes v in the amp slots onto (rho, sign).
  std::vector<double> to_floored(std::vector<double> th) const {
    for (std::size_t k = 0; k < th.size(); ++k)
      if (slots_[k] == Slot::amp) {
        const double v = th[k];
        const double excess = std::max(std::abs(v) - f_floor_, 1e-12);
        th[k] = excess > 30.0 ? excess : std::log(std::expm1(excess));
        th[k + 1] = v < 0 ? -1.0 : 1.0;
      }
    return th;
  }

 protected:
  explicit TrainableModel(double f_floor) : f_floor_(f_floor) {}
  double amplitude(const std::vector<double>& th, std::size_t k) const {
    return th[k + 1] * (f_floor_ + softplus(th[k]));
  }
  double amplitude_derivative(const std::vector<double>& th, std::size_t k) const {
    return th[k + 1] * sigmoid(th[k]);
  }
  std::vector<Slot> slots_;
  double f_floor_;
};

// UNSL, A1-A3 and CF through the wiring. Per kernel slot the layout is
// [b, w..., per break (u..., beta, rho, sign)], then one value per limit.
class GraphModel final : public TrainableModel {
 public:
  GraphModel(const FormSpec& spec, const TrainData& data, double f_floor)
      : TrainableModel(f_floor), spec_(spec), data_(data) {
    wiring_ = Wiring::build(spec);
    if (spec.kind == FormKind::cf) {
      const auto ord = input_order(spec);
      for (auto& ks : wiring_.kernels) ks.dims = {ord[static_cast<std::size_t>(ks.t - 1)]};
    }
    for (const auto& ks : wiring_.kernels) {
      offsets_.push_back(slots_.size());
      const std::size_t d = ks.dims.size();
      slots_.push_back(Slot::bias);
      slots_.insert(slots_.end(), d, Slot::weight);
      for (int j = 0; j < ks.breaks; ++j) {
        slots_.insert(slots_.end(), d, Slot::weight);
        slots_.push_back(Slot::bias);
        slots_.push_back(Slot::amp);
        slots_.push_back(Slot::sign);
      }
    }
    limit_offset_ = slots_.size();
    slots_.insert(slots_.end(), wiring_.limits.size(), Slot::bias);
  }

  std::vector<double> initial(std::mt19937_64& rng) const override {
    std::vector<double> th(size(), 0.0);
    for (std::size_t s = 0; s < wiring_.kernels.size(); ++s) {
      const auto& ks = wiring_.kernels[s];
      const int d = static_cast<int>(ks.dims.size());
      std::size_t o = offsets_[s] + 1;
      for (int i = 0; i < d; ++i) th[o++] = lecun_normal(rng, d);
      // Break weights are drawn as one d x n matrix, then the n x 1 output.
      std::vector<double> u(static_cast<std::size_t>(d * ks.breaks));
      for (double& v : u) v = lecun_normal(rng, d);
      for (int j = 0; j < ks.breaks; ++j) {
        for (int i = 0; i < d; ++i) th[o++] = u[static_cast<std::size_t>(i * ks.breaks + j)];
        th[o++] = 0.0;
        th[o++] = lecun_normal(rng, ks.breaks);
        th[o++] = 1.0;
      }
    }
    return to_floored(th);
  }

  bool evaluate(const std::vector<double>& th, std::size_t pt, double& g,
                double* row) const override {
    const auto& z = data_.z[pt];
    const std::size_t nk = wiring_.kernels.size();
    thread_local std::vector<double> kl, ll, nodes, dk, dl;
    kl.assign(nk, 0.0);
    ll.assign(wiring_.limits.size(), 0.0);
    for (std::size_t s = 0; s < nk; ++s) kl[s] = kernel_value(th, s, z, nullptr, 0.0);
    for (std::size_t l = 0; l < ll.size(); ++l) ll[l] = th[limit_offset_ + l];
    g = wiring_.forward(kl, ll, nodes);
    if (!std::isfinite(g)) return false;
    if (!row) return true;
    dk.assign(nk, 0.0);
    dl.assign(ll.size(), 0.0);
    wiring_.backward(nodes, ll, dk, dl);
    for (std::size_t s = 0; s < nk; ++s) kernel_value(th, s, z, row, dk[s]);
    for (std::size_t l = 0; l < ll.size(); ++l) row[limit_offset_ + l] = dl[l];
    return true;
  }

  FormParams to_params(const std::vector<double>& th) const override {
    const NormStats& st = data_.stats;
    ParamSet ps;
    for (std::size_t s = 0; s < wiring_.kernels.size(); ++s) {
      const auto& ks = wiring_.kernels[s];
      const std::size_t d = ks.dims.size();
      MbnslParams k;
      k.kernel_id = ks.id;
      k.index_set = ks.dims;
      std::size_t o = offsets_[s];
      double log_b = th[o++] + ks.scale_sign * data_.u;
      k.init_exponents.resize(d);
      for (std::size_t i = 0; i < d; ++i) {
        const double mu = st.log_x_mean[ks.dims[i]], sd = st.log_x_std[ks.dims[i]];
        const double w = th[o++];
        k.init_exponents[i] = -w / sd;
        log_b -= w * mu / sd;
      }
      k.log_offset = log_b;
      for (int j = 0; j < ks.breaks; ++j) {
        const std::size_t ou = o;
        o += d;
        const double beta = th[o++];
        const double v = amplitude(th, o);
        o += 2;
        const double av = std::abs(v);
        Break br;
        br.sharpness = -v;
        br.exponents.resize(d);
        double shift = beta;
        for (std::size_t i = 0; i < d; ++i) {
          const double mu = st.log_x_mean[ks.dims[i]], sd = st.log_x_std[ks.dims[i]];
          br.exponents[i] = av * th[ou + i] / sd;
          shift -= th[ou + i] * mu / sd;
        }
        br.log_location = -av * shift;
        k.breaks.push_back(std::move(br));
      }
      ps.kernels.emplace(ks.id, std::move(k));
    }
    for (std::size_t l = 0; l < wiring_.limits.size(); ++l) {
      const auto& ls = wiring_.limits[l];
      const double v = th[limit_offset_ + l] + ls.scale_sign * data_.u;
      ps.limits.emplace(ls.role, LimitConstant{ls.kind, v});
    }
    if (spec_.kind != FormKind::cf) return ps;
    // a_0 + b1 x1^-c1 + b2 x2^-c2 with kernels t = 1, 2.
    const auto& k1 = ps.kernels.at(1);
    const auto& k2 = ps.kernels.at(2);
    return CfParams{ps.limits.at(0).log_value, k1.log_offset, k1.init_exponents[0],
                    k2.log_offset, k2.init_exponents[0]};
  }

 private:
  // Value of kernel slot s at z. With row != null, writes scale * d/dtheta.
  double kernel_value(const std::vector<double>& th, std::size_t s, const std::vector<double>& z,
                      double* row, double scale) const {
    const auto& ks = wiring_.kernels[s];
    const std::size_t d = ks.dims.size();
    std::size_t o = offsets_[s];
    double v = th[o];
    if (row) row[o] = scale;
    ++o;
    for (std::size_t i = 0; i < d; ++i, ++o) {
      const double zi = z[ks.dims[i]];
      v += th[o] * zi;
      if (row) row[o] = scale * zi;
    }
    for (int j = 0; j < ks.breaks; ++j) {
      double a = th[o + d];
      for (std::size_t i = 0; i < d; ++i) a += th[o + i] * z[ks.dims[i]];
      const double amp = amplitude(th, o + d + 1);
      const double sp = softplus(a);
      v += amp * sp;
      if (row) {
        const double gs = scale * amp * sigmoid(a);
        for (std::size_t i = 0; i < d; ++i) row[o + i] = gs * z[ks.dims[i]];
        row[o + d] = gs;
        row[o + d + 1] = scale * sp * amplitude_derivative(th, o + d + 1);
        row[o + d + 2] = 0.0;
      }
      o += d + 3;
    }
    return v;
  }

  FormSpec spec_;
  const TrainData& data_;
  Wiring wiring_;
  std::vector<std::size_t> offsets_;
  std::size_t limit_offset_ = 0;
};

// DC with offsets referenced to the normalized data:
//   log a  = a' + u
//   log b1 = b1' + u + c1 * mean(log x1)
//   log b2 = b2' + u + c2 * mean(log x3)
class DcModel final : public TrainableModel {
 public:
  DcModel(const FormSpec& spec, const ScalingDataset& train, const TrainData& data)
      : TrainableModel(0.0), data_(data), order_(input_order(spec)) {
    if (order_.size() != 3) throw ConfigError("DC requires arity 3");
    slots_ = {Slot::bias, Slot::bias, Slot::weight, Slot::bias, Slot::weight, Slot::bias, Slot::bias};
    mu1_ = data.stats.log_x_mean[static_cast<std::size_t>(order_[0])];
    mu3_ = data.stats.log_x_mean[static_cast<std::size_t>(order_[2])];
    for (const auto& p : train.points())
      x_.push_back({p.x[static_cast<std::size_t>(order_[0])], p.x[static_cast<std::size_t>(order_[1])],
                    p.x[static_cast<std::size_t>(order_[2])]});
  }

  std::vector<double> initial(std::mt19937_64& rng) const override {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> th(DcParams::kSize);
    th[0] = -1.0 + 0.5 * nd(rng);
    th[1] = -1.0 + 0.5 * nd(rng);
    th[2] = 0.1 + std::abs(lecun_normal(rng, 1));
    th[3] = -1.0 + 0.5 * nd(rng);
    th[4] = 0.1 + std::abs(lecun_normal(rng, 1));
    th[5] = nd(rng);
    th[6] = nd(rng);
    return th;
  }

  bool evaluate(const std::vector<double>& th, std::size_t pt, double& g,
                double* row) const override {
    if (!(th[2] * th[4] > 0.0)) return false;
    using D = Dual<7>;
    std::array<D, 7> t;
    for (std::size_t i = 0; i < 7; ++i) t[i] = D::variable(th[i], i);
    const D u(data_.u);
    const std::array<D, 7> p{t[0] + u, t[1] + u + t[2] * D(mu1_), t[2], t[3] + u + t[4] * D(mu3_),
                             t[4], t[5], t[6]};
    const auto& x = x_[pt];
    const D ly = dc_log_value<D>(p, {D(x[0]), D(x[1]), D(x[2])}) - u;
    g = ly.v;
    if (!std::isfinite(g)) return false;
    if (row)
      for (std::size_t i = 0; i < 7; ++i) row[i] = ly.d[i];
    return true;
  }

  FormParams to_params(const std::vector<double>& th) const override {
    return DcParams{th[0] + data_.u, th[1] + data_.u + th[2] * mu1_, th[2],
                    th[3] + data_.u + th[4] * mu3_, th[4], th[5], th[6]};
  }

 private:
  const TrainData& data_;
  std::vector<int> order_;
  double mu1_ = 0.0, mu3_ = 0.0;
  std::vector<std::array<double, 3>> x_;
};

struct Objective {
  const TrainableModel& model;
  const TrainData& data;
  double lambda;

  double penalty(const std::vector<double>& th) const {
    double s = 0.0;
    for (std::size_t k = 0; k < th.size(); ++k) {
      const double w = model.weight(th, k).first;
      s += w * w;
    }
    return 0.5 * s;
  }

  // Scaled residuals r_i such that loss = sum r_i^2 + lambda * penalty.
  // Fills jac (N x P) when non-null. Returns +inf on non-finite output.
  double residuals(const std::vector<double>& th, Eigen::VectorXd& r,
                   Eigen::MatrixXd* jac) const {
    const std::size_t n = data.target.size();
    const double scale = 1.0 / (data.y_std * std::sqrt(static_cast<double>(n)));
    r.resize(static_cast<Eigen::Index>(n));
    if (jac) jac->resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(th.size()));
    std::vector<double> row(th.size());
    for (std::size_t i = 0; i < n; ++i) {
      double g = 0.0;
      if (!model.evaluate(th, i, g, jac ? row.data() : nullptr)) return kInf;
      const double ly = g + data.u;
      const double pred = log_add_exp(ly, data.log_eps);
      r[static_cast<Eigen::Index>(i)] = (pred - data.target[i]) * scale;
      if (jac) {
        const double chain = sigmoid(ly - data.log_eps) * scale;
        for (std::size_t k = 0; k < th.size(); ++k)
          (*jac)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = chain * row[k];
      }
    }
    const double loss = r.squaredNorm() + lambda * penalty(th);
    return std::isfinite(loss) ? loss : kInf;
  }

  // Half the gradient of the loss and the Gauss-Newton half-Hessian.
  void normal_equations(const std::vector<double>& th, const Eigen::VectorXd& r,
                        const Eigen::MatrixXd& J, Eigen::MatrixXd& H, Eigen::VectorXd& grad) const {
    H.noalias() = J.transpose() * J;
    grad.noalias() = J.transpose() * r;
    for (std::size_t k = 0; k < th.size(); ++k) {
      const auto [w, dw] = model.weight(th, k);
      if (dw == 0.0) continue;
      const auto kk = static_cast<Eigen::Index>(k);
      H(kk, kk) += 0.5 * lambda * dw * dw;
      grad[kk] += 0.5 * lambda * w * dw;
    }
  }
};

struct LmResult {
  std::vector<double> theta;
  double loss = kInf;
  int steps = 0;
};

// First-order warmup (Adam) returning the best point visited.
inline LmResult adam_warmup(const Objective& obj, std::vector<double> th, const FitConfig& cfg) {
  const OptimizerBudget& b = cfg.budget;
  Eigen::VectorXd r, grad;
  Eigen::MatrixXd J, H;
  std::vector<double> m(th.size(), 0.0), v(th.size(), 0.0);
  LmResult best;
  double p1 = 1.0, p2 = 1.0;
  for (int t = 1; t <= b.warmup_steps; ++t) {
    const double loss = obj.residuals(th, r, &J);
    if (!std::isfinite(loss)) break;
    if (loss < best.loss) best = {th, loss, t};
    grad.noalias() = J.transpose() * r;
    for (std::size_t k = 0; k < th.size(); ++k) {
      const auto [w, dw] = obj.model.weight(th, k);
      grad[static_cast<Eigen::Index>(k)] += 0.5 * obj.lambda * w * dw;
    }
    p1 *= 0.9;
    p2 *= 0.999;
    for (std::size_t k = 0; k < th.size(); ++k) {
      const double g = 2.0 * grad[static_cast<Eigen::Index>(k)];
      m[k] = 0.9 * m[k] + 0.1 * g;
      v[k] = 0.999 * v[k] + 0.001 * g * g;
      th[k] -= b.warmup_rate * (m[k] / (1.0 - p1)) / (std::sqrt(v[k] / (1.0 - p2)) + 1e-12);
    }
  }
  return best;
}

inline LmResult levenberg_marquardt(const Objective& obj, std::vector<double> th,
                                    const FitConfig& cfg) {
  const auto p = static_cast<Eigen::Index>(th.size());
  const OptimizerBudget& b = cfg.budget;
  Eigen::VectorXd r, r_try;
  Eigen::MatrixXd J;
  LmResult best;
  double loss = obj.residuals(th, r, &J);
  if (!std::isfinite(loss)) return best;
  best = {th, loss, 0};

  double mu = b.initial_damping, nu = 2.0;
  double window_start = loss;
  int since = 0;
  Eigen::MatrixXd H(p, p), A(p, p);
  Eigen::VectorXd grad(p), step(p);
  std::vector<double> trial(th.size());
  bool fresh = true;
  for (int it = 1; it <= cfg.max_steps; ++it) {
    best.steps = it;
    if (fresh) {
      obj.normal_equations(th, r, J, H, grad);
      fresh = false;
      if (grad.lpNorm<Eigen::Infinity>() < b.grad_tol) break;
    }
    // Raise the damping until the step fits the trust region.
    const double diag_floor = 1e-12 * std::max(1.0, H.diagonal().maxCoeff());
    bool solved = false;
    for (int inner = 0; inner < 60 && mu <= b.max_damping; ++inner) {
      A = H;
      for (Eigen::Index k = 0; k < p; ++k) A(k, k) += mu * std::max(H(k, k), diag_floor);
      step = Eigen::LDLT<Eigen::MatrixXd>(A).solve(-grad);
      if (step.allFinite() && step.lpNorm<Eigen::Infinity>() <= b.max_step) {
        solved = true;
        break;
      }
      mu *= 4.0;
    }
    if (!solved) break;
    for (std::size_t k = 0; k < th.size(); ++k)
      trial[k] = th[k] + step[static_cast<Eigen::Index>(k)];
    const double trial_loss = obj.residuals(trial, r_try, nullptr);
    const double predicted = -(2.0 * step.dot(grad) + step.dot(H * step));
    const double rho = predicted > 0 ? (loss - trial_loss) / predicted : -1.0;
    if (std::isfinite(trial_loss) && trial_loss < loss && rho > 0) {
      th = trial;
      loss = obj.residuals(th, r, &J);
      fresh = true;
      mu = std::max(mu * std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3)), 1e-15);
      nu = 2.0;
      if (loss < best.loss) {
        best.theta = th;
        best.loss = loss;
      }
    } else {
      mu *= nu;
      nu *= 2.0;
      if (mu > b.max_damping) break;
    }
    if (++since >= b.patience) {
      if (window_start - best.loss <= b.rel_tol * std::abs(window_start)) break;
      window_start = best.loss;
      since = 0;
    }
  }
  return best;
}

// Adam warmup, then Levenberg-Marquardt from the best warmup point.
inline LmResult minimize(const Objective& obj, std::vector<double> th, const FitConfig& cfg) {
  if (cfg.budget.warmup_steps > 0) {
    LmResult w = adam_warmup(obj, std::move(th), cfg);
    if (!std::isfinite(w.loss)) return w;
    th = std::move(w.theta);
  }
  return levenberg_marquardt(obj, std::move(th), cfg);
}

inline std::unique_ptr<TrainableModel> make_model(const FormSpec& spec,
                                                  const ScalingDataset& train,
                                                  const TrainData& data, double f_floor) {
  if (spec.kind == FormKind::dc) return std::make_unique<DcModel>(spec, train, data);
  return std::make_unique<GraphModel>(spec, data, f_floor);
}

inline void check_fit_inputs(const ScalingDataset& train, const FormSpec& spec) {
  if (train.empty()) throw FitError("cannot fit an empty training set");
  if (static_cast<int>(train.arity()) != spec.arity)
    throw ArgumentError("form " + to_string(spec.kind) + " has arity " +
                        std::to_string(spec.arity) + ", dataset has " +
                        std::to_string(train.arity()) + " dimensions");
  if (spec.kind == FormKind::cf && spec.arity != 2) throw ConfigError("CF requires arity 2");
  if (spec.kind == FormKind::dc && spec.arity != 3) throw ConfigError("DC requires arity 3");
}

}  // namespace detail

// 0.5 * sum of squared weights of the normalized network that represents
// params (initial exponents, break exponents and break amplitudes). With the
// identity normalization and no breaks this is 0.5 * sum c^2.
inline double l2_penalty(const ParamSet& params, const NormStats* stats = nullptr) {
  double s = 0.0;
  for (const auto& [id, k] : params.kernels) {
    auto sd = [&](std::size_t i) { return stats ? stats->log_x_std[k.index_set[i]] : 1.0; };
    for (std::size_t i = 0; i < k.dims(); ++i) {
      const double w = k.init_exponents[i] * sd(i);
      s += w * w;
    }
    for (const auto& br : k.breaks) {
      const double af = std::abs(br.sharpness);
      s += br.sharpness * br.sharpness;
      for (std::size_t i = 0; i < k.dims(); ++i) {
        const double u = br.exponents[i] * sd(i) / af;
        s += u * u;
      }
    }
  }
  return 0.5 * s;
}

inline double l2_penalty(const FormParams& params, const NormStats* stats = nullptr) {
  if (const auto* ps = std::get_if<ParamSet>(&params)) return l2_penalty(*ps, stats);
  auto sd = [&](int i) { return stats ? stats->log_x_std[static_cast<std::size_t>(i)] : 1.0; };
  if (const auto* cf = std::get_if<CfParams>(&params))
    return 0.5 * (std::pow(cf->c1 * sd(0), 2) + std::pow(cf->c2 * sd(1), 2));
  const auto& dc = std::get<DcParams>(params);
  return 0.5 * (dc.c1 * dc.c1 + dc.c2 * dc.c2);
}

// Fits spec to train from cfg.seeds LeCun-normal starts and keeps the seed
// with the lowest training objective. Scores the train split.
inline FitResult fit_form(const ScalingDataset& train, const FormSpec& spec,
                          const FitConfig& cfg) {
  cfg.validate();
  detail::check_fit_inputs(train, spec);
  const detail::TrainData data = detail::make_train_data(train, cfg);
  const auto model = detail::make_model(spec, train, data, cfg.f_floor);
  const detail::Objective obj{*model, data, cfg.lambda};

  std::vector<detail::LmResult> runs(static_cast<std::size_t>(cfg.seeds));
  detail::parallel_for(cfg.seeds, detail::thread_count(cfg.threads, cfg.seeds), [&](int i) {
    std::mt19937_64 rng(cfg.seed_base + static_cast<std::uint64_t>(i));
    runs[static_cast<std::size_t>(i)] = detail::minimize(obj, model->initial(rng), cfg);
  });

  FitResult res;
  res.spec = spec;
  res.stats = data.stats;
  res.n = spec.break_count;
  res.S = spec.effective_oppositional_count();
  res.lambda = cfg.lambda;
  int best = -1;
  std::string diag;
  for (int i = 0; i < cfg.seeds; ++i) {
    const auto& run = runs[static_cast<std::size_t>(i)];
    SeedOutcome so;
    so.seed = cfg.seed_base + static_cast<std::uint64_t>(i);
    so.steps = run.steps;
    if (std::isfinite(run.loss)) {
      so.train_loss = run.loss;
      if (best < 0 || run.loss < runs[static_cast<std::size_t>(best)].loss) best = i;
    } else {
      so.note = "non-finite loss";
      diag += " seed " + std::to_string(so.seed) + ": " + so.note + ";";
    }
    res.per_seed_train_loss.push_back(so.train_loss);
    res.seeds.push_back(std::move(so));
  }
  if (best < 0) throw FitError("every seed diverged:" + diag);
  res.best_seed = res.seeds[static_cast<std::size_t>(best)].seed;
  res.best_params = model->to_params(runs[static_cast<std::size_t>(best)].theta);
  res.train = score(spec, res.best_params, train);
  return res;
}

struct HyperGrid {
  std::vector<int> n{0, 1, 2};
  std::vector<int> S{0, 1};
  std::vector<double> lambda{0.0, 1e-7, 1e-6, 3e-6, 1e-5, 1e-4, 1e-3};
};

struct GridCell {
  int n = 0;
  int S = 0;
  double lambda = 0.0;
  double val_rmsle = kNaN;
  std::string error;
};

struct Selection {
  int n = 0;
  int S = 0;
  double lambda = 0.0;
  std::vector<GridCell> cells;
  std::string warning;
};

// The spec for one grid cell. Fields a form does not use are left alone.
inline FormSpec apply_cell(FormSpec spec, int n, int S) {
  if (spec.uses_breaks()) spec.break_count = n;
  if (spec.uses_oppositional_count()) {
    spec.oppositional_count = S;
    spec.hparam_force_enabled = S > 0;
  }
  return spec;
}

// Picks (n, S, lambda) by validation RMSLE on the frontier split of train.
// Ties go to smaller n, then smaller S, then larger lambda.
inline Selection select_hyperparameters(const ScalingDataset& train, const FormSpec& tmpl,
                                        HyperGrid grid, const FitConfig& cfg) {
  if (grid.n.empty() || grid.S.empty() || grid.lambda.empty())
    throw ConfigError("hyperparameter grids must be nonempty");
  if (!tmpl.uses_breaks()) grid.n = {tmpl.break_count};
  if (!tmpl.uses_oppositional_count()) grid.S = {tmpl.oppositional_count};
  std::sort(grid.n.begin(), grid.n.end());
  grid.n.erase(std::unique(grid.n.begin(), grid.n.end()), grid.n.end());
  std::sort(grid.S.begin(), grid.S.end());
  grid.S.erase(std::unique(grid.S.begin(), grid.S.end()), grid.S.end());
  std::sort(grid.lambda.begin(), grid.lambda.end(), std::greater<>());
  grid.lambda.erase(std::unique(grid.lambda.begin(), grid.lambda.end()), grid.lambda.end());

  Selection sel{grid.n.front(), grid.S.front(), grid.lambda.front(), {}, {}};
  if (grid.n.size() * grid.S.size() * grid.lambda.size() == 1) return sel;

  const FrontierSplit fs = frontier_validation_split(train);
  if (fs.degenerate || fs.inner_train.empty() || fs.validation.empty()) {
    sel.warning = (fs.warning.empty() ? std::string("empty validation split") : fs.warning) +
                  "; falling back to the smallest grid cell";
    return sel;
  }
  double best = kInf;
  for (int n : grid.n)
    for (int S : grid.S)
      for (double lam : grid.lambda) {
        GridCell cell{n, S, lam, kNaN, {}};
        FitConfig c = cfg;
        c.lambda = lam;
        const FormSpec spec = apply_cell(tmpl, n, S);
        try {
          const FitResult r = fit_form(fs.inner_train, spec, c);
          cell.val_rmsle = score(spec, r.best_params, fs.validation).rmsle;
        } catch (const Error& e) {
          cell.error = e.what();
        }
        if (cell.val_rmsle < best) {
          best = cell.val_rmsle;
          sel.n = n;
          sel.S = S;
          sel.lambda = lam;
        }
        sel.cells.push_back(std::move(cell));
      }
  if (!std::isfinite(best)) sel.warning = "no grid cell produced a finite validation score";
  return sel;
}

// Selection followed by a refit of the chosen cell on the full train set
// (normalization statistics recomputed on it), scored on train and test.
inline FitResult fit_selected(const ScalingDataset& train, const ScalingDataset& test,
                              const FormSpec& tmpl, const HyperGrid& grid, const FitConfig& cfg,
                              Selection* selection = nullptr) {
  const Selection sel = select_hyperparameters(train, tmpl, grid, cfg);
  FitConfig c = cfg;
  c.lambda = sel.lambda;
  const FormSpec spec = apply_cell(tmpl, sel.n, sel.S);
  FitResult r = fit_form(train, spec, c);
  for (const auto& cell : sel.cells)
    if (cell.n == sel.n && cell.S == sel.S && cell.lambda == sel.lambda) r.val.rmsle = cell.val_rmsle;
  r.n = sel.n;
  r.S = sel.S;
  r.test = score(spec, r.best_params, test);
  if (selection) *selection = sel;
  return r;
}

}  // namespace scalelaw
