#pragma once

// The scalelaw command line: fit, predict, compare, compute-optimal, simulate.
// Exit codes: 0 success, 2 usage or data error, 3 fit or solver failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "scalelaw/analysis.hpp"
#include "scalelaw/data.hpp"
#include "scalelaw/errors.hpp"
#include "scalelaw/fit.hpp"
#include "scalelaw/fixtures.hpp"
#include "scalelaw/io.hpp"

namespace scalelaw::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitFit = 3;

struct DataOptions {
  std::string data;
  std::string fixture;
  std::vector<std::string> thresholds;  // DIM=VAL
  bool split_half = false;
};

struct GridOptions {
  std::vector<int> n{0, 1, 2};
  std::vector<int> S{0, 1};
  std::vector<double> lambda{0.0, 1e-7, 1e-6, 3e-6, 1e-5, 1e-4, 1e-3};
  int seeds = 20;
  int max_steps = 20000;
  int warmup_steps = OptimizerBudget{}.warmup_steps;
  std::uint64_t seed_base = 0;
  bool no_overfit = false;
  bool upper_limit = false;
  std::vector<std::string> input_order;
};

struct Source {
  ScalingDataset data;
  std::optional<Fixture> fixture;
};

namespace detail {

inline void add_data_options(CLI::App& app, DataOptions& o, bool split) {
  auto* d = app.add_option("--data", o.data, "CSV with header x1,...,xm,y");
  auto* f = app.add_option("--fixture", o.fixture, "embedded dataset: llm_trivariate, imagenet_mix_b16");
  d->excludes(f);
  if (!split) return;
  auto* t = app.add_option("--split-threshold", o.thresholds,
                           "DIM=VAL: a point is train iff x_DIM < VAL for every given DIM");
  auto* h = app.add_flag("--split-half", o.split_half, "threshold every dimension at max/2 (default)");
  t->excludes(h);
}

inline void add_grid_options(CLI::App& app, GridOptions& g) {
  app.add_option("--n-grid", g.n, "break counts to select from")->delimiter(',');
  app.add_option("--s-grid", g.S, "oppositional counts to select from")->delimiter(',');
  app.add_option("--lambda-grid", g.lambda, "L2 weights to select from")->delimiter(',');
  app.add_option("--seeds", g.seeds, "random restarts per fit")->check(CLI::PositiveNumber);
  app.add_option("--max-steps", g.max_steps, "optimizer iterations per restart")->check(CLI::PositiveNumber);
  app.add_option("--warmup-steps", g.warmup_steps, "first-order steps before the second-order phase")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--seed-base", g.seed_base, "first seed");
  app.add_flag("--no-overfit", g.no_overfit, "drop the overfitting force (UNSL)");
  app.add_flag("--metric-upper-limit", g.upper_limit, "learn the upper limit a_2 (UNSL, A3)");
  app.add_option("--input-order", g.input_order, "CF/DC: dataset dimension per form input")->delimiter(',');
}

inline Source load_source(const DataOptions& o) {
  Source s;
  if (!o.fixture.empty()) {
    s.fixture = load_fixture(o.fixture);
    s.data = s.fixture->data;
  } else if (!o.data.empty()) {
    s.data = load_dataset(o.data);
  } else {
    throw ArgumentError("one of --data or --fixture is required");
  }
  if (s.data.empty()) throw LoadError("dataset has no points");
  return s;
}

inline int dim_of(const ScalingDataset& ds, const std::string& name) {
  const int i = ds.dim_index(name);
  if (i >= 0) return i;
  throw ArgumentError("unknown dimension '" + name + "'");
}

inline double parse_positive(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v) || !(v > 0.0))
    throw ArgumentError(what + ": '" + s + "' is not a positive number");
  return v;
}

inline Split make_split(const ScalingDataset& ds, const DataOptions& o) {
  if (o.thresholds.empty()) return threshold_split(ds, half_max_thresholds(ds));
  std::vector<double> t(ds.arity(), kInf);
  for (const auto& kv : o.thresholds) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ArgumentError("--split-threshold expects DIM=VAL, got '" + kv + "'");
    const int d = dim_of(ds, kv.substr(0, eq));
    t[static_cast<std::size_t>(d)] = parse_positive(kv.substr(eq + 1), "--split-threshold");
  }
  return threshold_split(ds, t);
}

inline FormSpec form_template(const std::string& form, const Source& src, const GridOptions& g) {
  const FormKind kind = parse_form_kind(form);
  const int m = static_cast<int>(src.data.arity());
  const bool overfit = src.fixture ? src.fixture->overfit && !g.no_overfit : !g.no_overfit;
  const bool upper = g.upper_limit || (src.fixture && src.fixture->metric_upper_limit);
  FormSpec s;
  switch (kind) {
    case FormKind::unsl: s = FormSpec::unsl(m, 0, 1, overfit, upper); break;
    case FormKind::a1: s = FormSpec::a1(m, 0); break;
    case FormKind::a2: s = FormSpec::a2(m, 0); break;
    case FormKind::a3: s = FormSpec::a3(m, 0, 1, upper); break;
    case FormKind::cf:
      if (m != 2) throw ArgumentError("form cf needs 2 input dimensions, dataset has " + std::to_string(m));
      s = FormSpec::cf();
      break;
    case FormKind::dc:
      if (m != 3) throw ArgumentError("form dc needs 3 input dimensions, dataset has " + std::to_string(m));
      s = FormSpec::dc();
      if (src.fixture) s.input_order = src.fixture->dc_input_order;
      break;
  }
  if (!g.input_order.empty()) {
    if (!s.is_baseline()) throw ArgumentError("--input-order applies to cf and dc only");
    s.input_order.clear();
    for (const auto& n : g.input_order) s.input_order.push_back(dim_of(src.data, n));
  }
  return s;
}

inline HyperGrid make_grid(const GridOptions& g) { return {g.n, g.S, g.lambda}; }

inline FitConfig make_config(const GridOptions& g) {
  FitConfig c;
  c.seeds = g.seeds;
  c.max_steps = g.max_steps;
  c.budget.warmup_steps = g.warmup_steps;
  c.seed_base = g.seed_base;
  return c;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// x vectors from "NAME=lo:hi:count" axes, in dimension order.
inline std::vector<std::vector<double>> parse_grid(const std::vector<std::string>& axes,
                                                   const std::vector<std::string>& names) {
  std::vector<std::vector<double>> per_dim(names.size());
  for (const auto& a : axes) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ArgumentError("--grid expects NAME=lo:hi:count, got '" + a + "'");
    int d = -1;
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == a.substr(0, eq)) d = static_cast<int>(i);
    if (d < 0) throw ArgumentError("unknown dimension '" + a.substr(0, eq) + "'");
    std::vector<std::string> parts;
    std::stringstream ss(a.substr(eq + 1));
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != 3) throw ArgumentError("--grid expects NAME=lo:hi:count, got '" + a + "'");
    const double lo = parse_positive(parts[0], "--grid"), hi = parse_positive(parts[1], "--grid");
    const int count = std::stoi(parts[2]);
    per_dim[static_cast<std::size_t>(d)] = log_space(lo, hi, count);
  }
  for (std::size_t i = 0; i < names.size(); ++i)
    if (per_dim[i].empty()) throw ArgumentError("--grid missing for dimension '" + names[i] + "'");
  return product_grid(per_dim);
}

struct Model {
  FormSpec spec;
  FormParams params;
  std::vector<std::string> dim_names;
  std::string metric_name = "y";
};

inline Model load_model(const std::string& fit_path, const std::vector<double>& cf) {
  if (!fit_path.empty()) {
    const FitArtifact a = load_artifact(fit_path);
    return {a.spec, a.params, a.dim_names, a.metric_name};
  }
  if (cf.size() == CfParams::kSize) return {FormSpec::cf(), CfParams::from_flat(cf), {"x1", "x2"}, "y"};
  if (!cf.empty()) throw ArgumentError("--cf expects log_a,log_b1,c1,log_b2,c2");
  throw ArgumentError("one of --fit or --cf is required");
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Fit and extrapolate multivariate scaling laws", "scalelaw"};
  app.require_subcommand(1);

  DataOptions fit_data;
  GridOptions fit_grid;
  std::string fit_form_name = "unsl", fit_out = "scalelaw_out", colorbar;
  auto* fit = app.add_subcommand("fit", "fit one form and write fit.json and plot data");
  detail::add_data_options(*fit, fit_data, true);
  detail::add_grid_options(*fit, fit_grid);
  fit->add_option("--form", fit_form_name, "unsl, a1, a2, a3, cf or dc");
  fit->add_option("--out", fit_out, "output directory");
  fit->add_option("--colorbar-dim", colorbar, "dimension whose values index the plot slices");

  DataOptions pred_data;
  std::string pred_fit, pred_out;
  auto* pred = app.add_subcommand("predict", "evaluate a fitted form on a dataset");
  detail::add_data_options(*pred, pred_data, false);
  pred->add_option("--fit", pred_fit, "fit.json from a previous fit")->required();
  pred->add_option("--out", pred_out, "output TSV (default stdout)");

  DataOptions cmp_data;
  GridOptions cmp_grid;
  std::vector<std::string> cmp_forms;
  std::string cmp_out;
  auto* cmp = app.add_subcommand("compare", "fit several forms on one split");
  detail::add_data_options(*cmp, cmp_data, true);
  detail::add_grid_options(*cmp, cmp_grid);
  cmp->add_option("--form", cmp_forms, "forms to compare (default: every applicable one)")->delimiter(',');
  cmp->add_option("--out", cmp_out, "output directory for compare.tsv");

  std::string co_fit;
  std::vector<double> co_cf;
  double co_C = 0.0, co_C0 = 6.0;
  std::vector<std::string> co_compute, co_free, co_fixed;
  int co_starts = 16;
  auto* co = app.add_subcommand("compute-optimal", "minimize the metric at fixed compute C = C0 * prod x_D");
  co->add_option("--fit", co_fit, "fit.json from a previous fit");
  co->add_option("--cf", co_cf, "CF parameters log_a,log_b1,c1,log_b2,c2")->delimiter(',');
  co->add_option("--C", co_C, "compute budget")->required();
  co->add_option("--C0", co_C0, "compute constant");
  co->add_option("--compute-dims", co_compute, "dimensions whose product is fixed")->delimiter(',')->required();
  co->add_option("--free-dims", co_free, "dimensions optimized without constraint")->delimiter(',');
  co->add_option("--fixed", co_fixed, "NAME=VAL for every other dimension");
  co->add_option("--starts", co_starts, "multistart count")->check(CLI::PositiveNumber);

  std::string sim_fit, sim_out;
  std::vector<double> sim_cf;
  std::vector<std::string> sim_grid;
  auto* sim = app.add_subcommand("simulate", "write noiseless data from a form as CSV");
  sim->add_option("--fit", sim_fit, "fit.json from a previous fit");
  sim->add_option("--cf", sim_cf, "CF parameters log_a,log_b1,c1,log_b2,c2")->delimiter(',');
  sim->add_option("--grid", sim_grid, "NAME=lo:hi:count, log-spaced, one per dimension")->required();
  sim->add_option("--out", sim_out, "output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "scalelaw: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*fit) {
      const Source src = detail::load_source(fit_data);
      const Split split = detail::make_split(src.data, fit_data);
      const FormSpec tmpl = detail::form_template(fit_form_name, src, fit_grid);
      PlotOptions plot;
      if (!colorbar.empty()) plot.colorbar_dim = detail::dim_of(src.data, colorbar);
      Selection sel;
      const FitResult r = fit_selected(split.train, split.test, tmpl, detail::make_grid(fit_grid),
                                       detail::make_config(fit_grid), &sel);
      if (!sel.warning.empty()) err << "scalelaw: warning: " << sel.warning << '\n';
      const std::filesystem::path dir(fit_out);
      std::filesystem::create_directories(dir);
      write_json_file(dir / "fit.json", artifact_to_json(make_artifact(r, src.data, fit_grid.seed_base)));
      write_plot_data(dir / "plot", r.spec, r.best_params, split, plot);
      out << "form " << to_string(r.spec.kind) << "  n=" << r.n << " S=" << r.S
          << " lambda=" << detail::fmt(r.lambda) << "  train " << split.train.size() << " test "
          << split.test.size() << '\n';
      out << "train RMSLE " << detail::fmt(r.train.rmsle) << " +- " << detail::fmt(r.train.rsle) << '\n';
      out << "test RMSLE " << detail::fmt(r.test.rmsle) << " +- " << detail::fmt(r.test.rsle) << '\n';
      return kExitOk;
    }
    if (*pred) {
      const FitArtifact a = load_artifact(pred_fit);
      const Source src = detail::load_source(pred_data);
      if (static_cast<int>(src.data.arity()) != a.spec.arity)
        throw ArgumentError("fit has arity " + std::to_string(a.spec.arity) + ", dataset has " +
                            std::to_string(src.data.arity()));
      std::ofstream file;
      if (!pred_out.empty()) {
        file.open(pred_out);
        if (!file) throw LoadError("cannot write " + pred_out);
      }
      std::ostream& o = pred_out.empty() ? out : file;
      for (const auto& n : src.data.dim_names()) o << n << '\t';
      o << src.data.metric_name() << "\ty_pred\n";
      for (const auto& p : src.data.points()) {
        for (double x : p.x) o << format_number(x) << '\t';
        o << format_number(p.y) << '\t' << format_number(eval_form(a.spec, a.params, p.x)) << '\n';
      }
      return kExitOk;
    }
    if (*cmp) {
      const Source src = detail::load_source(cmp_data);
      const Split split = detail::make_split(src.data, cmp_data);
      std::vector<std::string> forms = cmp_forms;
      if (forms.empty()) {
        forms = {"unsl", "a1", "a2", "a3"};
        if (src.data.arity() == 2) forms.push_back("cf");
        if (src.data.arity() == 3) forms.push_back("dc");
      }
      std::vector<CompareEntry> entries;
      for (const auto& f : forms)
        entries.push_back({f, detail::form_template(f, src, cmp_grid), detail::make_grid(cmp_grid)});
      const ComparisonTable t = compare_forms(split, entries, detail::make_config(cmp_grid));
      write_comparison_table(out, t);
      if (!cmp_out.empty()) {
        std::filesystem::create_directories(cmp_out);
        std::ofstream tsv(std::filesystem::path(cmp_out) / "compare.tsv");
        write_comparison_tsv(tsv, t);
      } else {
        write_comparison_tsv(out, t);
      }
      return kExitOk;
    }
    if (*co) {
      const detail::Model mdl = detail::load_model(co_fit, co_cf);
      ComputeBudget b;
      b.C = co_C;
      b.C0 = co_C0;
      auto dim = [&](const std::string& n) {
        for (std::size_t i = 0; i < mdl.dim_names.size(); ++i)
          if (mdl.dim_names[i] == n) return static_cast<int>(i);
        throw ArgumentError("unknown dimension '" + n + "'");
      };
      for (const auto& n : co_compute) b.compute_dims.push_back(dim(n));
      for (const auto& n : co_free) b.free_dims.push_back(dim(n));
      if (!co_fixed.empty()) {
        b.fixed_x.assign(mdl.dim_names.size(), 1.0);
        for (const auto& kv : co_fixed) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) throw ArgumentError("--fixed expects NAME=VAL");
          b.fixed_x[static_cast<std::size_t>(dim(kv.substr(0, eq)))] =
              detail::parse_positive(kv.substr(eq + 1), "--fixed");
        }
      }
      SolverOptions so;
      so.starts = co_starts;
      const ComputeOptimum r = compute_optimal(mdl.spec, mdl.params, b, so);
      for (std::size_t i = 0; i < r.x.size(); ++i)
        out << mdl.dim_names[i] << " = " << format_number(r.x[i]) << '\n';
      out << mdl.metric_name << " = " << format_number(r.y) << '\n';
      out << "multiplier = " << format_number(r.multiplier) << '\n';
      out << "gradient residual = " << detail::fmt(r.gradient_residual) << '\n';
      out << "constraint residual = " << detail::fmt(r.constraint_residual) << '\n';
      return kExitOk;
    }
    if (*sim) {
      const detail::Model mdl = detail::load_model(sim_fit, sim_cf);
      const auto grid = detail::parse_grid(sim_grid, mdl.dim_names);
      const ScalingDataset ds = simulate_noiseless(mdl.spec, mdl.params, grid, mdl.dim_names, mdl.metric_name);
      if (sim_out.empty()) {
        write_dataset(out, ds);
      } else {
        std::ofstream file(sim_out);
        if (!file) throw LoadError("cannot write " + sim_out);
        write_dataset(file, ds);
      }
      return kExitOk;
    }
  } catch (const FitError& e) {
    err << "scalelaw: fit failed: " << e.what() << '\n';
    return kExitFit;
  } catch (const SolverError& e) {
    err << "scalelaw: solver failed: " << e.what() << '\n';
    return kExitFit;
  } catch (const Error& e) {
    err << "scalelaw: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "scalelaw: invalid number: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "scalelaw: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace scalelaw::cli
