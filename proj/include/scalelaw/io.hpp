#pragma once

// fit.json artifacts and plot-data tables.
//
// fit.json (keys in this order):
//   format             "scalelaw-fit"
//   version            1
//   form               unsl | a1 | a2 | a3 | cf | dc
//   spec               structure of the form (see spec_to_json)
//   dimensions         input names, metric  metric name
//   hyperparameters    {n, S, lambda}
//   seed_base, best_seed, per_seed_train_loss
//   metrics            {train, validation, test} each {rmsle, rsle}
//   normalization      training-set statistics in log space
//   params             canonical log-space parameters
// Non-finite numbers are written as the strings "inf", "-inf" and "nan".

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "scalelaw/analysis.hpp"
#include "scalelaw/data.hpp"
#include "scalelaw/errors.hpp"
#include "scalelaw/fit.hpp"
#include "scalelaw/forms.hpp"

namespace scalelaw {

using Json = nlohmann::ordered_json;

namespace detail {

inline Json num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline double get_num(const Json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    if (s == "nan") return kNaN;
  }
  throw LoadError("fit artifact: " + where + " must be a number");
}

inline const Json& field(const Json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key))
    throw LoadError("fit artifact: missing field '" + key + "' in " + where);
  return j.at(key);
}

inline Json num_array(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

inline std::vector<double> get_num_array(const Json& j, const std::string& where) {
  if (!j.is_array()) throw LoadError("fit artifact: " + where + " must be an array");
  std::vector<double> v;
  for (std::size_t i = 0; i < j.size(); ++i)
    v.push_back(get_num(j[i], where + "[" + std::to_string(i) + "]"));
  return v;
}

inline Json int_map(const std::map<int, std::vector<int>>& m) {
  Json o = Json::object();
  for (const auto& [k, v] : m) o[std::to_string(k)] = v;
  return o;
}

inline std::map<int, std::vector<int>> get_int_map(const Json& j) {
  std::map<int, std::vector<int>> m;
  for (const auto& [k, v] : j.items()) m[std::stoi(k)] = v.get<std::vector<int>>();
  return m;
}

}  // namespace detail

inline Json spec_to_json(const FormSpec& s) {
  Json j;
  j["arity"] = s.arity;
  j["break_count"] = s.break_count;
  j["oppositional_count"] = s.oppositional_count;
  j["overfit"] = s.overfit_enabled;
  j["hparam_force"] = s.hparam_force_enabled;
  j["metric_upper_limit"] = s.metric_upper_limit_enabled;
  j["input_order"] = s.input_order;
  j["nonbottleneck_sets"] = detail::int_map(s.nonbottleneck_sets);
  j["bottleneck_sets"] = detail::int_map(s.bottleneck_sets);
  Json bo = Json::object();
  for (const auto& [id, n] : s.break_overrides) bo[std::to_string(id)] = n;
  j["break_overrides"] = bo;
  return j;
}

inline FormSpec spec_from_json(const std::string& form, const Json& j) {
  FormSpec s;
  s.kind = parse_form_kind(form);
  s.arity = detail::field(j, "arity", "spec").get<int>();
  s.break_count = detail::field(j, "break_count", "spec").get<int>();
  s.oppositional_count = detail::field(j, "oppositional_count", "spec").get<int>();
  s.overfit_enabled = detail::field(j, "overfit", "spec").get<bool>();
  s.hparam_force_enabled = detail::field(j, "hparam_force", "spec").get<bool>();
  s.metric_upper_limit_enabled = detail::field(j, "metric_upper_limit", "spec").get<bool>();
  s.input_order = detail::field(j, "input_order", "spec").get<std::vector<int>>();
  s.nonbottleneck_sets = detail::get_int_map(detail::field(j, "nonbottleneck_sets", "spec"));
  s.bottleneck_sets = detail::get_int_map(detail::field(j, "bottleneck_sets", "spec"));
  for (const auto& [k, v] : detail::field(j, "break_overrides", "spec").items())
    s.break_overrides[std::stoi(k)] = v.get<int>();
  if (s.arity < 1) throw LoadError("fit artifact: spec.arity must be >= 1");
  return s;
}

inline Json params_to_json(const FormParams& p) {
  using detail::num;
  Json j;
  if (const auto* cf = std::get_if<CfParams>(&p)) {
    j["log_a"] = num(cf->log_a);
    j["log_b1"] = num(cf->log_b1);
    j["c1"] = num(cf->c1);
    j["log_b2"] = num(cf->log_b2);
    j["c2"] = num(cf->c2);
    return j;
  }
  if (const auto* dc = std::get_if<DcParams>(&p)) {
    j["log_a"] = num(dc->log_a);
    j["log_b1"] = num(dc->log_b1);
    j["c1"] = num(dc->c1);
    j["log_b2"] = num(dc->log_b2);
    j["c2"] = num(dc->c2);
    j["log_d1"] = num(dc->log_d1);
    j["log_d2"] = num(dc->log_d2);
    return j;
  }
  const auto& ps = std::get<ParamSet>(p);
  Json ks = Json::array();
  for (const auto& [id, k] : ps.kernels) {
    Json kj;
    kj["id"] = id;
    kj["index_set"] = k.index_set;
    kj["log_offset"] = num(k.log_offset);
    kj["init_exponents"] = detail::num_array(k.init_exponents);
    Json bs = Json::array();
    for (const auto& br : k.breaks) {
      Json bj;
      bj["exponents"] = detail::num_array(br.exponents);
      bj["log_location"] = num(br.log_location);
      bj["sharpness"] = num(br.sharpness);
      bs.push_back(std::move(bj));
    }
    kj["breaks"] = std::move(bs);
    ks.push_back(std::move(kj));
  }
  Json ls = Json::array();
  for (const auto& [role, l] : ps.limits) {
    Json lj;
    lj["role"] = role;
    lj["kind"] = l.kind == LimitKind::additive ? "additive" : "reciprocal";
    lj["log_value"] = num(l.log_value);
    ls.push_back(std::move(lj));
  }
  j["kernels"] = std::move(ks);
  j["limits"] = std::move(ls);
  return j;
}

inline FormParams params_from_json(const FormSpec& spec, const Json& j) {
  using detail::field;
  using detail::get_num;
  auto g = [&](const char* k) { return get_num(field(j, k, "params"), std::string("params.") + k); };
  if (spec.kind == FormKind::cf) return CfParams{g("log_a"), g("log_b1"), g("c1"), g("log_b2"), g("c2")};
  if (spec.kind == FormKind::dc)
    return DcParams{g("log_a"), g("log_b1"), g("c1"), g("log_b2"), g("c2"), g("log_d1"), g("log_d2")};
  ParamSet ps;
  for (const auto& kj : field(j, "kernels", "params")) {
    MbnslParams k;
    k.kernel_id = field(kj, "id", "kernel").get<int>();
    const std::string where = "kernel " + std::to_string(k.kernel_id);
    k.index_set = field(kj, "index_set", where).get<std::vector<int>>();
    k.log_offset = get_num(field(kj, "log_offset", where), where + ".log_offset");
    k.init_exponents = detail::get_num_array(field(kj, "init_exponents", where), where + ".init_exponents");
    for (const auto& bj : field(kj, "breaks", where)) {
      Break br;
      br.exponents = detail::get_num_array(field(bj, "exponents", where), where + ".exponents");
      br.log_location = get_num(field(bj, "log_location", where), where + ".log_location");
      br.sharpness = get_num(field(bj, "sharpness", where), where + ".sharpness");
      k.breaks.push_back(std::move(br));
    }
    ps.kernels.emplace(k.kernel_id, std::move(k));
  }
  for (const auto& lj : field(j, "limits", "params")) {
    const int role = field(lj, "role", "limit").get<int>();
    const auto kind = field(lj, "kind", "limit").get<std::string>();
    if (kind != "additive" && kind != "reciprocal")
      throw LoadError("fit artifact: limit kind must be additive or reciprocal");
    ps.limits.emplace(role, LimitConstant{kind == "additive" ? LimitKind::additive : LimitKind::reciprocal,
                                          get_num(field(lj, "log_value", "limit"), "limit.log_value")});
  }
  return ps;
}

struct FitArtifact {
  FormSpec spec;
  FormParams params;
  std::vector<std::string> dim_names;
  std::string metric_name;
  int n = 0;
  int S = 0;
  double lambda = 0.0;
  std::uint64_t seed_base = 0;
  std::uint64_t best_seed = 0;
  std::vector<double> per_seed_train_loss;
  MetricPair train, val, test;
  NormStats stats;
};

inline FitArtifact make_artifact(const FitResult& r, const ScalingDataset& ds, std::uint64_t seed_base) {
  return {r.spec,  r.best_params, ds.dim_names(), ds.metric_name(), r.n,    r.S,    r.lambda,
          seed_base, r.best_seed, r.per_seed_train_loss, r.train, r.val, r.test, r.stats};
}

inline Json artifact_to_json(const FitArtifact& a) {
  using detail::num;
  auto pair = [](const MetricPair& m) {
    Json j;
    j["rmsle"] = num(m.rmsle);
    j["rsle"] = num(m.rsle);
    return j;
  };
  Json j;
  j["format"] = "scalelaw-fit";
  j["version"] = 1;
  j["form"] = to_string(a.spec.kind);
  j["spec"] = spec_to_json(a.spec);
  j["dimensions"] = a.dim_names;
  j["metric"] = a.metric_name;
  Json h;
  h["n"] = a.n;
  h["S"] = a.S;
  h["lambda"] = num(a.lambda);
  j["hyperparameters"] = h;
  j["seed_base"] = a.seed_base;
  j["best_seed"] = a.best_seed;
  j["per_seed_train_loss"] = detail::num_array(a.per_seed_train_loss);
  Json m;
  m["train"] = pair(a.train);
  m["validation"] = pair(a.val);
  m["test"] = pair(a.test);
  j["metrics"] = m;
  Json ns;
  ns["log_x_mean"] = detail::num_array(a.stats.log_x_mean);
  ns["log_x_std"] = detail::num_array(a.stats.log_x_std);
  ns["log_y_mean"] = num(a.stats.log_y_mean);
  ns["log_y_std"] = num(a.stats.log_y_std);
  ns["epsilon"] = num(a.stats.epsilon);
  j["normalization"] = ns;
  j["params"] = params_to_json(a.params);
  return j;
}

inline FitArtifact artifact_from_json(const Json& j) {
  using detail::field;
  using detail::get_num;
  try {
    if (field(j, "format", "root").get<std::string>() != "scalelaw-fit")
      throw LoadError("fit artifact: format must be \"scalelaw-fit\"");
    if (field(j, "version", "root").get<int>() != 1)
      throw LoadError("fit artifact: unsupported version");
    FitArtifact a;
    a.spec = spec_from_json(field(j, "form", "root").get<std::string>(), field(j, "spec", "root"));
    a.dim_names = field(j, "dimensions", "root").get<std::vector<std::string>>();
    a.metric_name = field(j, "metric", "root").get<std::string>();
    if (static_cast<int>(a.dim_names.size()) != a.spec.arity)
      throw LoadError("fit artifact: dimensions do not match spec.arity");
    const Json& h = field(j, "hyperparameters", "root");
    a.n = field(h, "n", "hyperparameters").get<int>();
    a.S = field(h, "S", "hyperparameters").get<int>();
    a.lambda = get_num(field(h, "lambda", "hyperparameters"), "hyperparameters.lambda");
    a.seed_base = field(j, "seed_base", "root").get<std::uint64_t>();
    a.best_seed = field(j, "best_seed", "root").get<std::uint64_t>();
    a.per_seed_train_loss = detail::get_num_array(field(j, "per_seed_train_loss", "root"), "per_seed_train_loss");
    const Json& m = field(j, "metrics", "root");
    auto pair = [&](const char* k) {
      const Json& p = field(m, k, "metrics");
      return MetricPair{get_num(field(p, "rmsle", k), "rmsle"), get_num(field(p, "rsle", k), "rsle")};
    };
    a.train = pair("train");
    a.val = pair("validation");
    a.test = pair("test");
    const Json& ns = field(j, "normalization", "root");
    a.stats.log_x_mean = detail::get_num_array(field(ns, "log_x_mean", "normalization"), "log_x_mean");
    a.stats.log_x_std = detail::get_num_array(field(ns, "log_x_std", "normalization"), "log_x_std");
    a.stats.log_y_mean = get_num(field(ns, "log_y_mean", "normalization"), "log_y_mean");
    a.stats.log_y_std = get_num(field(ns, "log_y_std", "normalization"), "log_y_std");
    a.stats.epsilon = get_num(field(ns, "epsilon", "normalization"), "epsilon");
    a.params = params_from_json(a.spec, field(j, "params", "root"));
    check_params(a.spec, a.params, std::numeric_limits<double>::min());
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("fit artifact: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("fit artifact: ") + e.what());
  } catch (const ArgumentError& e) {
    throw LoadError(std::string("fit artifact: ") + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline FitArtifact load_artifact(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("file not found: " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("fit artifact " + path.string() + ": " + e.what());
  }
  return artifact_from_json(j);
}

///////////////
// Plot data //
///////////////

struct PlotOptions {
  int colorbar_dim = -1;  // -1: last dimension (none for arity 1)
  int x_dim = -1;         // -1: first dimension other than the color-bar one
  int grid_points = 200;
};

// For each unique value of the color-bar dimension, writes into dir:
//   slice_<k>.tsv        x, y_pred over a log-spaced grid of the x dimension
//   slice_<k>_train.tsv  train points of the slice (drawn as triangles)
//   slice_<k>_test.tsv   test points of the slice (drawn as circles)
// The remaining dimensions are held at the slice's geometric mean. Point lists
// carry every input, y and y_pred. index.tsv lists the slices.
inline void write_plot_data(const std::filesystem::path& dir, const FormSpec& spec,
                            const FormParams& params, const Split& split, PlotOptions opt = {}) {
  const ScalingDataset& any = split.train;
  const int m = static_cast<int>(any.arity());
  if (opt.colorbar_dim < 0 && m > 1) opt.colorbar_dim = m - 1;
  if (opt.colorbar_dim >= m) throw ArgumentError("color-bar dimension out of range");
  if (opt.x_dim < 0) opt.x_dim = opt.colorbar_dim == 0 ? 1 % m : 0;
  if (opt.x_dim == opt.colorbar_dim && m > 1) throw ArgumentError("x and color-bar dimensions coincide");
  std::filesystem::create_directories(dir);

  const auto all = merge(split.train, split.test);
  std::set<double> values;
  for (const auto& p : all.points()) values.insert(opt.colorbar_dim < 0 ? 0.0 : p.x[static_cast<std::size_t>(opt.colorbar_dim)]);
  double lo = kInf, hi = 0.0;
  for (const auto& p : all.points()) {
    lo = std::min(lo, p.x[static_cast<std::size_t>(opt.x_dim)]);
    hi = std::max(hi, p.x[static_cast<std::size_t>(opt.x_dim)]);
  }
  const auto xs = log_space(lo, hi, opt.grid_points);
  auto in_slice = [&](const DataPoint& p, double v) {
    return opt.colorbar_dim < 0 || p.x[static_cast<std::size_t>(opt.colorbar_dim)] == v;
  };
  auto write_points = [&](const std::filesystem::path& path, const ScalingDataset& ds, double v,
                          const char* marker) {
    std::ofstream out(path);
    for (const auto& n : ds.dim_names()) out << n << '\t';
    out << ds.metric_name() << "\ty_pred\tmarker\n";
    for (const auto& p : ds.points()) {
      if (!in_slice(p, v)) continue;
      for (double x : p.x) out << format_number(x) << '\t';
      out << format_number(p.y) << '\t' << format_number(eval_form(spec, params, p.x)) << '\t'
          << marker << '\n';
    }
  };

  std::ofstream index(dir / "index.tsv");
  index << "slice\t" << (opt.colorbar_dim < 0 ? std::string("colorbar") : any.dim_names()[static_cast<std::size_t>(opt.colorbar_dim)])
        << "\tcurve\ttrain\ttest\n";
  int k = 0;
  for (double v : values) {
    std::vector<double> mean_log(static_cast<std::size_t>(m), 0.0);
    int count = 0;
    for (const auto& p : all.points())
      if (in_slice(p, v)) {
        ++count;
        for (int i = 0; i < m; ++i) mean_log[static_cast<std::size_t>(i)] += std::log(p.x[static_cast<std::size_t>(i)]);
      }
    std::vector<double> x(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) x[static_cast<std::size_t>(i)] = std::exp(mean_log[static_cast<std::size_t>(i)] / count);
    if (opt.colorbar_dim >= 0) x[static_cast<std::size_t>(opt.colorbar_dim)] = v;

    const std::string stem = "slice_" + std::to_string(k);
    {
      std::ofstream out(dir / (stem + ".tsv"));
      out << any.dim_names()[static_cast<std::size_t>(opt.x_dim)] << "\ty_pred\n";
      for (double xv : xs) {
        x[static_cast<std::size_t>(opt.x_dim)] = xv;
        out << format_number(xv) << '\t' << format_number(eval_form(spec, params, x)) << '\n';
      }
    }
    write_points(dir / (stem + "_train.tsv"), split.train, v, "triangle");
    write_points(dir / (stem + "_test.tsv"), split.test, v, "circle");
    index << k << '\t' << format_number(v) << '\t' << stem << ".tsv\t" << stem << "_train.tsv\t"
          << stem << "_test.tsv\n";
    ++k;
  }
}

}  // namespace scalelaw
