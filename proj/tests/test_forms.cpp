#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracle.hpp"
#include "random_params.hpp"
#include "scalelaw/forms.hpp"

using namespace scalelaw;
using testutil::Rng;

namespace {

std::vector<long double> to_ld(const std::vector<double>& x) { return {x.begin(), x.end()}; }

double rel(double a, long double b) { return static_cast<double>(std::fabs((a - b) / b)); }

}  // namespace

TEST(Numeric, SoftplusIsStableAtExtremes) {
  EXPECT_DOUBLE_EQ(softplus(800.0), 800.0);
  EXPECT_EQ(softplus(-800.0), 0.0);
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-16);
  EXPECT_NEAR(sigmoid(-800.0), 0.0, 1e-300);
  EXPECT_DOUBLE_EQ(sigmoid(800.0), 1.0);
}

TEST(Numeric, LogSumExpHandlesNegativeInfinity) {
  const std::vector<double> v{-kInf, -kInf};
  EXPECT_EQ(log_sum_exp<double>(v), -kInf);
  const std::vector<double> w{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp<double>(w), 1000.0 + std::log(2.0), 1e-12);
}

TEST(Mbnsl, PowerLawExamples) {
  MbnslParams k{0, {0}, 0.0, {0.5}, {}};
  const double lx[] = {std::log(4.0)};
  EXPECT_NEAR(log_eval_mbnsl(k, lx), std::log(0.5), 1e-15);

  MbnslParams k2{0, {0, 1}, std::log(2.0), {1.0, 1.0}, {}};
  const double lx2[] = {std::log(2.0), std::log(4.0)};
  EXPECT_NEAR(log_eval_mbnsl(k2, lx2), std::log(0.25), 1e-15);
}

TEST(Mbnsl, SingleBreakMatchesLiteral) {
  MbnslParams k{0, {0}, 0.0, {0.5}, {{{1.0}, std::log(100.0), 1.0}}};
  const double lx[] = {std::log(10.0)};
  const long double want = std::pow(10.0L, -0.5L) / (1.0L + 10.0L / 100.0L);
  EXPECT_LT(rel(std::exp(log_eval_mbnsl(k, lx)), want), 1e-14);
}

TEST(Mbnsl, IdentityAndConstants) {
  MbnslParams k{0, {0, 1}, 0.0, {0.0, 0.0}, {{{0.0, 0.0}, 0.3, 0.7}, {{0.0, 0.0}, -0.2, -1.5}}};
  // Zero exponents in every break still leave the constant break factors.
  const double x[] = {7.0, 9.0};
  const long double want = std::pow(1.0L + std::pow(std::exp(-0.3L), 1 / 0.7L), -0.7L) *
                           std::pow(1.0L + std::pow(std::exp(0.2L), 1 / 1.5L), 1.5L);
  EXPECT_LT(rel(eval_mbnsl(k, x), want), 1e-14);

  MbnslParams c{0, {0, 1}, std::log(3.0), {0.0, 0.0}, {}};
  EXPECT_NEAR(eval_mbnsl(c, x), 3.0, 1e-14);
}

TEST(Mbnsl, Errors) {
  MbnslParams k{0, {0}, 0.0, {0.5}, {}};
  const double two[] = {1.0, 2.0};
  EXPECT_THROW(log_eval_mbnsl(k, two), ArgumentError);
  const double neg[] = {-1.0};
  EXPECT_THROW(eval_mbnsl(k, neg), DomainError);
}

TEST(LimitCombine, Examples) {
  EXPECT_EQ(limit_combine(1.25, LimitConstant::infinite()), 1.25);
  EXPECT_NEAR(limit_combine(0.0, LimitConstant::inverse(0.0)), -std::log(2.0), 1e-15);
  EXPECT_NEAR(limit_combine(-50.0, LimitConstant::inverse(0.0)), -50.0, 1e-12);
  EXPECT_THROW(limit_combine(0.0, LimitConstant::additive(0.0)), ArgumentError);
}

TEST(Forms, OracleEquivalenceOnRandomDraws) {
  Rng rng(11);
  for (int m : {1, 2, 3}) {
    for (const auto& spec : testutil::graph_specs(m)) {
      for (int draw = 0; draw < 60; ++draw) {
        const ParamSet p = testutil::random_param_set(spec, rng);
        const auto x = testutil::random_x(rng, m);
        const double got = eval_form(spec, p, x);
        EXPECT_LT(rel(got, oracle::form(spec, p, to_ld(x))), 1e-9)
            << to_string(spec.kind) << " m=" << m << " draw " << draw;
      }
    }
  }
  const FormSpec cf = FormSpec::cf();
  const FormSpec dc = FormSpec::dc();
  for (int draw = 0; draw < 300; ++draw) {
    const CfParams c = testutil::random_cf(rng);
    const auto x = testutil::random_x(rng, 2);
    EXPECT_LT(rel(eval_form(cf, c, x), oracle::cf(c, x[0], x[1])), 1e-9);
    const DcParams d = testutil::random_dc(rng);
    const auto x3 = testutil::random_x(rng, 3);
    EXPECT_LT(rel(eval_form(dc, d, x3), oracle::dc(d, x3[0], x3[1], x3[2])), 1e-9);
  }
}

TEST(Forms, ConstantKernelsReduceAnalytically) {
  // Every kernel is the constant Y, reciprocal limits are infinite, S = 0 and
  // the overfitting branch is on: y = a + (m+1)Y + 1/((m+1)Y).
  const int m = 2;
  const FormSpec spec = FormSpec::unsl(m, 0, 0, true, false);
  ParamSet p = make_param_set(spec);
  const double Y = 0.3, a = 0.05;
  for (auto& [id, k] : p.kernels) k.log_offset = std::log(Y);
  p.limits.at(0) = LimitConstant::additive(std::log(a));
  const double x[] = {3.0, 5.0};
  const double r = (m + 1) * Y;
  EXPECT_NEAR(eval_form(spec, p, x), a + r + 1.0 / r, 1e-14);
}

TEST(Forms, A2Example) {
  FormSpec spec = FormSpec::a2(1, 0).without_bottlenecks();
  ParamSet p = make_param_set(spec);
  p.limits.at(0) = LimitConstant::additive(std::log(0.1));
  p.kernels.at(0).init_exponents = {1.0};
  const double x[] = {10.0};
  EXPECT_NEAR(eval_form(spec, p, x), 0.2, 1e-15);
}

TEST(Forms, DegeneracyChain) {
  Rng rng(5);
  const int m = 2;
  for (int draw = 0; draw < 50; ++draw) {
    const FormSpec u = FormSpec::unsl(m, 1, 0, false, false).without_bottlenecks();
    const FormSpec a3 = FormSpec::a3(m, 1, 0, false).without_bottlenecks();
    const FormSpec a2 = FormSpec::a2(m, 1).without_bottlenecks();
    const FormSpec a1 = FormSpec::a1(m, 1);

    MbnslParams k = testutil::random_param_set(a1, rng).kernels.at(0);
    const double log_a0 = testutil::uniform(rng, -3.0, 0.0);
    auto fill = [&](const FormSpec& s, int r) {
      ParamSet p = make_param_set(s);
      MbnslParams kk = k;
      kk.kernel_id = r * (m + 1);
      p.kernels.at(kk.kernel_id) = kk;
      p.limits.at(0) = LimitConstant::additive(log_a0);
      return p;
    };
    const auto x = testutil::random_x(rng, m);
    const double a0 = std::exp(log_a0);
    const double y1 = eval_form(a1, ParamSet{{{0, k}}, {}}, x);
    const double y2 = eval_form(a2, fill(a2, 0), x) - a0;
    const double y3 = eval_form(a3, fill(a3, 0), x) - a0;
    const double yu = eval_form(u, fill(u, 3), x) - a0;
    EXPECT_NEAR(y2 / y1, 1.0, 1e-12);
    EXPECT_NEAR(y3 / y1, 1.0, 1e-12);
    EXPECT_NEAR(yu / y1, 1.0, 1e-12);
  }
}

TEST(Forms, BoundsHold) {
  Rng rng(21);
  for (int draw = 0; draw < 2000; ++draw) {
    const int m = 1 + draw % 3;
    const FormSpec spec = FormSpec::unsl(m, 1, draw % 2, true, true);
    const ParamSet p = testutil::random_param_set(spec, rng);
    const auto x = testutil::random_x(rng, m, 1e-3, 1e6);
    const double y = eval_form(spec, p, x);
    const double a0 = std::exp(p.limits.at(0).log_value);
    const double a2 = std::exp(-p.limits.at(2).log_value);
    EXPECT_GE(y, a0 * (1 - 1e-15));
    EXPECT_LE(y, (a0 + a2) * (1 + 1e-15));
  }
}

TEST(Forms, StructuralErrors) {
  const FormSpec spec = FormSpec::unsl(2, 1, 1);
  ParamSet p = make_param_set(spec);
  const double x[] = {1.0, 2.0};
  EXPECT_NO_THROW(eval_form(spec, p, x));
  ParamSet missing = p;
  missing.kernels.erase(missing.kernels.begin());
  EXPECT_THROW(eval_form(spec, missing, x), ConfigError);
  ParamSet extra = p;
  extra.limits.emplace(99, LimitConstant::infinite());
  EXPECT_THROW(eval_form(spec, extra, x), ConfigError);
  EXPECT_THROW(eval_form(spec, CfParams{}, x), ConfigError);
  const double bad[] = {1.0, 0.0};
  EXPECT_THROW(eval_form(spec, p, bad), DomainError);
  const double short_x[] = {1.0};
  EXPECT_THROW(eval_form(spec, p, short_x), ArgumentError);
}

TEST(Forms, DuplicateIdsAndBadIndexSetsAreRejected) {
  FormSpec spec = FormSpec::a2(2, 0);
  spec.nonbottleneck_sets[0] = {0, 2};
  EXPECT_THROW(Wiring::build(spec), ConfigError);
}

TEST(Baselines, CfExamples) {
  const CfParams p{std::log(0.5), 0.0, 1.0, std::log(2.0), 0.5};
  EXPECT_NEAR(eval_cf(p, 1.0, 4.0), 2.5, 1e-15);
  const CfParams flat{std::log(0.5), 0.0, 0.0, std::log(2.0), 0.0};
  EXPECT_NEAR(eval_cf(flat, 123.0, 0.1), 3.5, 1e-14);
  const CfParams dec{std::log(0.5), 0.0, 0.4, std::log(2.0), 0.3};
  double prev = kInf;
  for (int k = 1; k <= 8; ++k) {
    const double y = eval_cf(dec, std::pow(10.0, k), std::pow(10.0, k));
    EXPECT_LT(y, prev);
    EXPECT_GT(y, 0.5);
    prev = y;
  }
  EXPECT_THROW(eval_cf(p, 0.0, 1.0), DomainError);
}

TEST(Baselines, DcErrors) {
  DcParams p;
  p.c1 = 0.0;
  EXPECT_THROW(eval_dc(p, 1, 1, 1), DomainError);
  p.c1 = 0.5;
  p.c2 = -0.5;
  EXPECT_THROW(eval_dc(p, 1, 1, 1), DomainError);
}

TEST(Baselines, DcReducesToCfBelowBothKinks) {
  Rng rng(3);
  int checked = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    const DcParams d = testutil::random_dc(rng);
    const double x3 = std::exp(testutil::uniform(rng, 0.0, 10.0));
    const double x2 = x3 * testutil::uniform(rng, 0.01, 1.0);
    const double log_g = (std::log(d.c1 / d.c2) + d.log_b1 - d.log_b2) / (d.c1 + d.c2);
    const double cap = std::exp((d.c2 / d.c1) * (std::log(x3) + log_g) + log_g);
    const double x1 = cap * testutil::uniform(rng, 1e-3, 1.0);
    const CfParams c{d.log_a, d.log_b1, d.c1, d.log_b2, d.c2};
    EXPECT_EQ(eval_dc(d, x1, x2, x3), eval_cf(c, x1, x3));
    ++checked;
  }
  EXPECT_EQ(checked, 1000);
}

TEST(Baselines, DcZeroRepetitionAtEqualInputs) {
  const DcParams d{-1.0, 0.5, 0.4, 0.3, 0.6, 0.2, 0.1};
  // x2 == x3: R_D = 0 exactly, so the data term is b2 x3^-c2.
  const double x3 = 1234.5;
  const double tiny_x1 = 1e-6;
  const CfParams c{d.log_a, d.log_b1, d.c1, d.log_b2, d.c2};
  EXPECT_EQ(eval_dc(d, tiny_x1, x3, x3), eval_cf(c, tiny_x1, x3));
}

TEST(Gradients, MatchCentralDifferences) {
  Rng rng(99);
  auto check = [&](const FormSpec& spec, const FormParams& p, const std::vector<double>& x) {
    const FormGradient g = grad_form(spec, p, x);
    EXPECT_NEAR(g.value, eval_form(spec, p, x), 1e-13 * g.value);
    const auto flat = flatten(p);
    for (std::size_t i = 0; i < flat.size(); ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(flat[i]));
      auto up = flat, dn = flat;
      up[i] += h;
      dn[i] -= h;
      const double fd =
          (eval_form(spec, unflatten(p, up), x) - eval_form(spec, unflatten(p, dn), x)) / (2 * h);
      EXPECT_NEAR(g.d_params[i], fd, 1e-5 * std::max(std::abs(fd), g.value)) << "param " << i;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double h = 1e-6 * x[i];
      auto up = x, dn = x;
      up[i] += h;
      dn[i] -= h;
      const double fd = (eval_form(spec, p, up) - eval_form(spec, p, dn)) / (2 * h);
      EXPECT_NEAR(g.d_inputs[i], fd, 1e-5 * std::max(std::abs(fd), g.value / x[i])) << "x " << i;
    }
  };
  for (int draw = 0; draw < 20; ++draw) {
    for (const auto& spec : testutil::graph_specs(2))
      check(spec, testutil::random_param_set(spec, rng), testutil::random_x(rng, 2));
    check(FormSpec::cf(), testutil::random_cf(rng), testutil::random_x(rng, 2));
    check(FormSpec::dc(), testutil::random_dc(rng), testutil::random_x(rng, 3));
  }
}

TEST(Gradients, ConstantFormHasZeroInputGradient) {
  const FormSpec spec = FormSpec::unsl(2, 1, 1, true, true);
  ParamSet p = make_param_set(spec);
  for (auto& [role, l] : p.limits)
    if (role != 0) l.log_value = -1.0;
  const double x[] = {2.0, 30.0};
  const FormGradient g = grad_form(spec, p, x);
  EXPECT_EQ(g.d_inputs[0], 0.0);
  EXPECT_EQ(g.d_inputs[1], 0.0);
}

TEST(Gradients, PowerLawSlope) {
  const FormSpec spec = FormSpec::a1(2, 0);
  ParamSet p = make_param_set(spec);
  p.kernels.at(0).init_exponents = {0.3, -0.8};
  const double x[] = {5.0, 7.0};
  const FormGradient g = grad_form(spec, p, x);
  EXPECT_NEAR(g.d_inputs[0] * x[0] / g.value, -0.3, 1e-14);
  EXPECT_NEAR(g.d_inputs[1] * x[1] / g.value, 0.8, 1e-14);
}

TEST(Desiderata, UnivariateSliceRefolds) {
  // Fixing x2 folds its factors into b and d_j of a one-dimensional kernel.
  Rng rng(8);
  for (int draw = 0; draw < 100; ++draw) {
    ParamSet ps = testutil::random_param_set(FormSpec::a1(2, 2), rng);
    const MbnslParams& k = ps.kernels.at(0);
    const double x2 = std::exp(testutil::uniform(rng, -3, 3));
    MbnslParams s{0, {0}, k.log_offset - k.init_exponents[1] * std::log(x2), {k.init_exponents[0]},
                  {}};
    for (const auto& br : k.breaks)
      s.breaks.push_back({{br.exponents[0]}, br.log_location - br.exponents[1] * std::log(x2),
                          br.sharpness});
    const double x1 = std::exp(testutil::uniform(rng, -3, 3));
    const double full[] = {x1, x2};
    const double one[] = {x1};
    EXPECT_NEAR(eval_mbnsl(s, one) / eval_mbnsl(k, full), 1.0, 1e-12);
  }
}

TEST(Desiderata, BreakSitsWhereTheProductHitsD) {
  // Single break along the ray log x = t (1, 1): curvature of log y peaks at
  // (c1 + c2) t = log d.
  MbnslParams k{0, {0, 1}, 0.0, {0.2, 0.1}, {{{0.5, 0.7}, 3.0, 0.4}}};
  const double h = 1e-3;
  double best_t = 0, best = -1;
  for (double t = -5; t <= 10; t += h) {
    auto ly = [&](double tt) {
      const double lx[] = {tt, tt};
      return log_eval_mbnsl(k, lx);
    };
    const double curv = std::abs(ly(t + h) - 2 * ly(t) + ly(t - h));
    if (curv > best) {
      best = curv;
      best_t = t;
    }
  }
  EXPECT_NEAR(best_t, 3.0 / 1.2, 2 * h);
}
