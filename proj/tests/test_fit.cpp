#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "random_params.hpp"
#include "scalelaw/fit.hpp"

using namespace scalelaw;

namespace {

ScalingDataset power_law(double b, double c, int n, double lo = 1.0, double hi = 1e4) {
  std::vector<DataPoint> pts;
  for (int i = 0; i < n; ++i) {
    const double x = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (n - 1));
    pts.push_back({{x}, b * std::pow(x, -c)});
  }
  return ScalingDataset(pts, {"x"}, "y");
}

// y = 2 x^-0.2 (1 + (x / 100)^(1/0.3))^-0.18: one break at x = 100.
ScalingDataset broken_law(int n, double lo, double hi, double noise = 0.0, unsigned seed = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<DataPoint> pts;
  for (int i = 0; i < n; ++i) {
    const double x = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (n - 1));
    const double y = 2.0 * std::pow(x, -0.2) * std::pow(1.0 + std::pow(x / 100.0, 1.0 / 0.3), -0.3 * 0.6);
    pts.push_back({{x}, y * std::exp(noise * nd(rng))});
  }
  return ScalingDataset(pts, {"x"}, "y");
}

FitConfig quick(int seeds = 4) {
  FitConfig c;
  c.seeds = seeds;
  c.max_steps = 2000;
  c.budget.warmup_steps = 1000;
  c.threads = 1;
  return c;
}

double log_linear_slope(const ScalingDataset& ds) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(ds.size());
  for (const auto& p : ds.points()) {
    const double lx = std::log(p.x[0]), ly = std::log(p.y);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST(FitForm, RecoversPowerLaw) {
  const auto ds = power_law(2.0, 0.7, 50);
  const double slope = log_linear_slope(ds);
  ASSERT_NEAR(slope, -0.7, 1e-12);
  const FitResult r = fit_form(ds, FormSpec::a1(1, 0), quick());
  const auto& ps = std::get<ParamSet>(r.best_params);
  const auto& k = ps.kernels.at(0);
  EXPECT_NEAR(k.init_exponents[0], -slope, 1e-3);
  EXPECT_NEAR(std::exp(k.log_offset), 2.0, 1e-3);
  EXPECT_LE(r.train.rmsle, 1e-6);
}

TEST(FitForm, ConstantDataIsAbsorbed) {
  std::vector<DataPoint> pts;
  for (int i = 1; i <= 20; ++i) pts.push_back({{static_cast<double>(i), 3.0 * i}, 0.37});
  const ScalingDataset ds(pts, {"a", "b"}, "y");
  for (const FormSpec& spec : {FormSpec::a1(2, 0), FormSpec::a1(2, 1), FormSpec::cf(), FormSpec::a2(2, 0)}) {
    const FitResult r = fit_form(ds, spec, quick(2));
    EXPECT_LE(r.train.rmsle, 1e-8) << to_string(spec.kind);
  }
}

TEST(FitForm, Deterministic) {
  const auto ds = broken_law(30, 1.0, 1e3, 0.02, 1);
  const auto cfg = quick(3);
  const FitResult a = fit_form(ds, FormSpec::a1(1, 1), cfg);
  FitConfig threaded = cfg;
  threaded.threads = 3;
  const FitResult b = fit_form(ds, FormSpec::a1(1, 1), threaded);
  EXPECT_EQ(a.best_seed, b.best_seed);
  EXPECT_EQ(a.per_seed_train_loss, b.per_seed_train_loss);
  EXPECT_EQ(flatten(a.best_params), flatten(b.best_params));
}

TEST(FitForm, MoreSeedsNeverHurt) {
  const auto ds = broken_law(30, 1.0, 1e3, 0.05, 2);
  double prev = kInf;
  for (int k = 1; k <= 4; ++k) {
    const FitResult r = fit_form(ds, FormSpec::a1(1, 1), quick(k));
    const double best = *std::min_element(r.per_seed_train_loss.begin(), r.per_seed_train_loss.end());
    EXPECT_LE(best, prev);
    prev = best;
  }
}

TEST(FitForm, RegularizationShrinksWeights) {
  const auto ds = broken_law(40, 1.0, 1e4, 0.1, 3);
  FitConfig c0 = quick(3), c1 = quick(3);
  c1.lambda = 1e-1;
  const FitResult r0 = fit_form(ds, FormSpec::a1(1, 1), c0);
  const FitResult r1 = fit_form(ds, FormSpec::a1(1, 1), c1);
  EXPECT_LT(l2_penalty(r1.best_params, &r1.stats), l2_penalty(r0.best_params, &r0.stats));
}

// Per-seed refits reproduce the multi-seed run, and the chosen seed is the
// training-loss minimizer even where another seed validates better.
TEST(FitForm, SeedChosenByTrainingLoss) {
  const auto all = broken_law(40, 1.0, 1e4, 0.15, 4);
  const Split sp = threshold_split(all, std::vector<double>{300.0});
  const int seeds = 8;
  FitConfig cfg = quick(seeds);
  cfg.max_steps = 300;
  cfg.budget.warmup_steps = 200;
  const FitResult r = fit_form(sp.train, FormSpec::a1(1, 2), cfg);
  std::vector<double> val;
  for (int s = 0; s < seeds; ++s) {
    FitConfig one = cfg;
    one.seeds = 1;
    one.seed_base = static_cast<std::uint64_t>(s);
    const FitResult rs = fit_form(sp.train, FormSpec::a1(1, 2), one);
    EXPECT_EQ(rs.per_seed_train_loss[0], r.per_seed_train_loss[static_cast<std::size_t>(s)]);
    val.push_back(score(rs.spec, rs.best_params, sp.test).rmsle);
  }
  const auto train_best = std::min_element(r.per_seed_train_loss.begin(), r.per_seed_train_loss.end()) -
                          r.per_seed_train_loss.begin();
  const auto val_best = std::min_element(val.begin(), val.end()) - val.begin();
  EXPECT_EQ(r.best_seed, static_cast<std::uint64_t>(train_best));
  EXPECT_NE(train_best, val_best) << "instance no longer separates the two rules";
}

TEST(FitForm, InputErrors) {
  const auto ds = power_law(1.0, 0.5, 10);
  EXPECT_THROW(fit_form(ds, FormSpec::a1(2, 0), quick()), ArgumentError);
  EXPECT_THROW(fit_form(ScalingDataset({}, {"x"}, "y"), FormSpec::a1(1, 0), quick()), FitError);
  FitConfig bad = quick();
  bad.seeds = 0;
  EXPECT_THROW(fit_form(ds, FormSpec::a1(1, 0), bad), ConfigError);
  bad = quick();
  bad.lambda = -1.0;
  EXPECT_THROW(fit_form(ds, FormSpec::a1(1, 0), bad), ConfigError);
}

///////////////////////////
// Network and objective //
///////////////////////////

namespace {

ScalingDataset random_dataset(testutil::Rng& rng, int m, int n) {
  std::vector<DataPoint> pts;
  std::vector<std::string> names;
  for (int i = 0; i < m; ++i) names.push_back("x" + std::to_string(i));
  for (int i = 0; i < n; ++i) pts.push_back({testutil::random_x(rng, m, 1.0, 1e6), testutil::uniform(rng, 0.5, 3.0)});
  return ScalingDataset(pts, names, "y");
}

std::vector<double> perturbed_start(const detail::TrainableModel& model, testutil::Rng& rng) {
  auto th = model.initial(rng);
  for (std::size_t k = 0; k < th.size(); ++k)
    if (model.slots()[k] != detail::Slot::sign) th[k] += testutil::uniform(rng, -0.3, 0.3);
  return th;
}

}  // namespace

// The canonical parameters reproduce the network exactly, and the penalty of
// the canonical parameters equals the network penalty.
TEST(Network, CanonicalConversionIsExact) {
  testutil::Rng rng(31);
  for (int m = 1; m <= 3; ++m) {
    auto specs = testutil::graph_specs(m);
    if (m == 2) specs.push_back(FormSpec::cf());
    if (m == 3) {
      FormSpec dc = FormSpec::dc();
      dc.input_order = {1, 2, 0};
      specs.push_back(dc);
    }
    for (const auto& spec : specs) {
      const auto ds = random_dataset(rng, m, 15);
      const FitConfig cfg;
      const auto data = detail::make_train_data(ds, cfg);
      const auto model = detail::make_model(spec, ds, data, cfg.f_floor);
      const detail::Objective obj{*model, data, 1.0};
      for (int t = 0; t < 5; ++t) {
        const auto th = perturbed_start(*model, rng);
        const FormParams p = model->to_params(th);
        check_params(spec, p, cfg.f_floor);
        for (std::size_t i = 0; i < ds.size(); ++i) {
          double g;
          ASSERT_TRUE(model->evaluate(th, i, g, nullptr));
          EXPECT_NEAR(log_eval_form(spec, p, ds.points()[i].x), g + data.u, 1e-10) << to_string(spec.kind);
        }
        EXPECT_NEAR(l2_penalty(p, &data.stats), obj.penalty(th), 1e-9 * std::max(1.0, obj.penalty(th)))
              << to_string(spec.kind);
      }
    }
  }
}

TEST(Network, FlooredProjectionKeepsAmplitude) {
  testutil::Rng rng(7);
  const auto spec = FormSpec::unsl(2, 2, 1, true, true);
  const auto ds = random_dataset(rng, 2, 10);
  const FitConfig cfg;
  const auto data = detail::make_train_data(ds, cfg);
  const auto model = detail::make_model(spec, ds, data, cfg.f_floor);
  std::vector<double> raw(model->size(), 0.0);
  std::vector<double> v;
  for (std::size_t k = 0; k < raw.size(); ++k)
    if (model->slots()[k] == detail::Slot::amp) {
      const double a = (k % 2 ? -1.0 : 1.0) * (0.01 + 3.0 * static_cast<double>(v.size() % 5));
      raw[k] = a;
      v.push_back(a);
    }
  ASSERT_FALSE(v.empty());
  const auto th = model->to_floored(raw);
  std::size_t n = 0;
  for (std::size_t k = 0; k < th.size(); ++k)
    if (model->slots()[k] == detail::Slot::amp) {
      EXPECT_NEAR(model->weight(th, k).first, v[n], 1e-12 * std::max(1.0, std::abs(v[n])));
      ++n;
    }
}

TEST(Network, JacobianMatchesFiniteDifferences) {
  testutil::Rng rng(13);
  std::vector<FormSpec> specs = testutil::graph_specs(3);
  FormSpec dc = FormSpec::dc();
  dc.input_order = {1, 2, 0};
  specs.push_back(dc);
  for (const auto& spec : specs) {
    const auto ds = random_dataset(rng, 3, 12);
    const FitConfig cfg;
    const auto data = detail::make_train_data(ds, cfg);
    const auto model = detail::make_model(spec, ds, data, cfg.f_floor);
    const detail::Objective obj{*model, data, 0.0};
    auto th = perturbed_start(*model, rng);
    Eigen::VectorXd r, rp, rm;
    Eigen::MatrixXd J;
    ASSERT_TRUE(std::isfinite(obj.residuals(th, r, &J)));
    for (std::size_t k = 0; k < th.size(); ++k) {
      if (model->slots()[k] == detail::Slot::sign) continue;
      const double h = 1e-6 * std::max(1.0, std::abs(th[k]));
      auto a = th, b = th;
      a[k] += h;
      b[k] -= h;
      obj.residuals(a, rp, nullptr);
      obj.residuals(b, rm, nullptr);
      const Eigen::VectorXd fd = (rp - rm) / (2 * h);
      EXPECT_LE((fd - J.col(static_cast<Eigen::Index>(k))).lpNorm<Eigen::Infinity>(),
                1e-6 * std::max(1.0, fd.lpNorm<Eigen::Infinity>()))
          << to_string(spec.kind) << " param " << k;
    }
  }
}

TEST(Network, InitialWeightVariance) {
  std::mt19937_64 rng(1);
  const int n = 200000;
  for (int fan_in : {1, 3}) {
    double s = 0, s2 = 0, worst = 0;
    for (int i = 0; i < n; ++i) {
      const double v = detail::lecun_normal(rng, fan_in);
      s += v;
      s2 += v * v;
      worst = std::max(worst, std::abs(v));
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0 / fan_in, 0.01);
    EXPECT_LE(worst, 2.0 / 0.87962566103423978 / std::sqrt(fan_in) + 1e-12);
  }
}

////////////////
// l2_penalty //
////////////////

TEST(Penalty, Examples) {
  ParamSet zero = make_param_set(FormSpec::a1(2, 0));
  EXPECT_EQ(l2_penalty(zero), 0.0);
  ParamSet one = make_param_set(FormSpec::a1(1, 0));
  one.kernels.at(0).init_exponents[0] = 2.0;
  one.kernels.at(0).log_offset = 5.0;
  EXPECT_DOUBLE_EQ(l2_penalty(one), 2.0);
}

// Walk the flat layout [log b, c0..., (c..., log d, f) per break] kernel by
// kernel, penalizing c0, f and the network weight c / |f|; skip offsets,
// locations and limits.
TEST(Penalty, MatchesFlatWalk) {
  testutil::Rng rng(17);
  for (const auto& spec : testutil::graph_specs(3)) {
    for (int t = 0; t < 10; ++t) {
      const ParamSet p = testutil::random_param_set(spec, rng);
      const auto flat = flatten(p);
      double walk = 0.0;
      std::size_t o = 0;
      for (const auto& [id, k] : p.kernels) {
        const std::size_t d = k.dims();
        ++o;
        for (std::size_t i = 0; i < d; ++i, ++o) walk += flat[o] * flat[o];
        for (std::size_t j = 0; j < k.break_count(); ++j) {
          const double f = flat[o + d + 1];
          for (std::size_t i = 0; i < d; ++i) walk += std::pow(flat[o + i] / f, 2);
          walk += f * f;
          o += d + 2;
        }
      }
      EXPECT_NEAR(l2_penalty(p), 0.5 * walk, 1e-12 * walk);
    }
  }
}

/////////////////////
// Model selection //
/////////////////////

TEST(Selection, PrefersBreakWhenPresent) {
  const auto ds = broken_law(40, 1.0, 1e4);
  HyperGrid g;
  g.n = {0, 1};
  g.S = {0};
  g.lambda = {0.0};
  const Selection sel = select_hyperparameters(ds, FormSpec::a1(1, 0), g, quick(3));
  EXPECT_EQ(sel.n, 1);
  EXPECT_EQ(sel.cells.size(), 2u);
}

TEST(Selection, PrefersPlainPowerLaw) {
  const auto ds = power_law(2.0, 0.4, 40);
  HyperGrid g;
  g.n = {1, 0};
  g.S = {0};
  g.lambda = {0.0};
  const Selection sel = select_hyperparameters(ds, FormSpec::a1(1, 0), g, quick(2));
  EXPECT_EQ(sel.n, 0);
}

TEST(Selection, SingleCellSkipsFitting) {
  const auto ds = power_law(2.0, 0.4, 10);
  const Selection sel = select_hyperparameters(ds, FormSpec::a1(1, 0), HyperGrid{{1}, {0}, {1e-4}}, quick());
  EXPECT_EQ(sel.n, 1);
  EXPECT_EQ(sel.lambda, 1e-4);
  EXPECT_TRUE(sel.cells.empty());
}

TEST(Selection, UnusedGridsCollapse) {
  std::vector<DataPoint> pts;
  for (int i = 1; i <= 12; ++i) pts.push_back({{1.0 * i, 2.0 * i}, 1.0 / i});
  const ScalingDataset ds(pts, {"a", "b"}, "y");
  const Selection sel = select_hyperparameters(ds, FormSpec::cf(), HyperGrid{{0, 1, 2}, {0, 1}, {0.0}}, quick());
  EXPECT_TRUE(sel.cells.empty());
}

TEST(Selection, DegenerateSplitFallsBack) {
  // Every point is non-dominated: the frontier split is degenerate.
  std::vector<DataPoint> pts;
  for (int i = 1; i <= 6; ++i) pts.push_back({{1.0 * i, 7.0 - i}, 1.0});
  const ScalingDataset ds(pts, {"a", "b"}, "y");
  HyperGrid g{{2, 0}, {1, 0}, {0.0, 1e-3}};
  const Selection sel = select_hyperparameters(ds, FormSpec::a1(2, 0), g, quick());
  EXPECT_FALSE(sel.warning.empty());
  EXPECT_EQ(sel.n, 0);
  EXPECT_EQ(sel.lambda, 1e-3);
}

TEST(Selection, FitSelectedScoresTest) {
  const auto all = power_law(2.0, 0.4, 30);
  const Split sp = threshold_split(all, std::vector<double>{1e3});
  const FitResult r = fit_selected(sp.train, sp.test, FormSpec::a1(1, 0), HyperGrid{{0}, {0}, {0.0}}, quick(2));
  EXPECT_LE(r.test.rmsle, 1e-6);
  EXPECT_TRUE(std::isfinite(r.test.rsle));
}
