#pragma once

// Datasets, log-space normalization and the two split procedures:
//   threshold_split            train iff x_i < threshold_i for every i
//   frontier_validation_split  validation = Pareto-maximal points of train

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "scalelaw/errors.hpp"
#include "scalelaw/metrics.hpp"
#include "scalelaw/numeric.hpp"

namespace scalelaw {

struct DataPoint {
  std::vector<double> x;
  double y = 0.0;
};

// Immutable after construction. Every x entry and y are positive and finite.
// An empty dataset is allowed (e.g. an empty test split); loaders and fitters
// reject it where it matters.
class ScalingDataset {
 public:
  ScalingDataset() = default;
  ScalingDataset(std::vector<DataPoint> points, std::vector<std::string> dim_names,
                 std::string metric_name)
      : points_(std::move(points)), dim_names_(std::move(dim_names)),
        metric_name_(std::move(metric_name)) {
    if (dim_names_.empty()) throw ArgumentError("dataset needs at least one input dimension");
    for (std::size_t r = 0; r < points_.size(); ++r) {
      const auto& p = points_[r];
      if (p.x.size() != dim_names_.size())
        throw ArgumentError("point " + std::to_string(r) + " has " + std::to_string(p.x.size()) +
                            " inputs, dataset arity is " + std::to_string(dim_names_.size()));
      for (std::size_t i = 0; i < p.x.size(); ++i)
        if (!(p.x[i] > 0.0) || !std::isfinite(p.x[i]))
          throw DomainError("point " + std::to_string(r) + ", " + dim_names_[i] +
                            ": value must be positive and finite");
      if (!(p.y > 0.0) || !std::isfinite(p.y))
        throw DomainError("point " + std::to_string(r) + ", " + metric_name_ +
                          ": value must be positive and finite");
    }
  }

  const std::vector<DataPoint>& points() const { return points_; }
  const std::vector<std::string>& dim_names() const { return dim_names_; }
  const std::string& metric_name() const { return metric_name_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  std::size_t arity() const { return dim_names_.size(); }

  std::vector<double> ys() const {
    std::vector<double> v;
    v.reserve(points_.size());
    for (const auto& p : points_) v.push_back(p.y);
    return v;
  }

  int dim_index(const std::string& name) const {
    for (std::size_t i = 0; i < dim_names_.size(); ++i)
      if (dim_names_[i] == name) return static_cast<int>(i);
    return -1;
  }

  // Same names, a different set of points.
  ScalingDataset with_points(std::vector<DataPoint> pts) const {
    return ScalingDataset(std::move(pts), dim_names_, metric_name_);
  }

 private:
  std::vector<DataPoint> points_;
  std::vector<std::string> dim_names_;
  std::string metric_name_ = "y";
};

inline ScalingDataset merge(const ScalingDataset& a, const ScalingDataset& b) {
  if (a.dim_names() != b.dim_names()) throw ArgumentError("merge: dimension names differ");
  std::vector<DataPoint> pts = a.points();
  pts.insert(pts.end(), b.points().begin(), b.points().end());
  return a.with_points(std::move(pts));
}

////////////////
// CSV / TSV  //
////////////////

enum class TableFormat { csv, tsv };

struct LoadOptions {
  TableFormat format = TableFormat::csv;
  std::vector<std::string> x_columns;  // empty: every column except y
  std::string y_column;                // empty: last column
};

namespace detail {

inline std::vector<std::string> split_row(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, std::size_t row, const std::string& col) {
  const char* begin = s.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (s.empty() || end != begin + s.size() || errno == ERANGE)
    throw LoadError("row " + std::to_string(row) + ", column " + col + ": cannot parse '" + s +
                    "' as a number");
  if (!std::isfinite(v) || !(v > 0.0))
    throw LoadError("row " + std::to_string(row) + ", column " + col + ": value " + s +
                    " must be positive and finite");
  return v;
}

}  // namespace detail

// Rows are numbered from 1 for the first data line after the header.
inline ScalingDataset parse_dataset(std::istream& in, const LoadOptions& opt = {}) {
  const char sep = opt.format == TableFormat::tsv ? '\t' : ',';
  std::string line;
  if (!std::getline(in, line)) throw LoadError("empty input: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_row(line, sep);
  if (header.size() < 2) throw LoadError("header needs at least one x column and a y column");

  auto find_col = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw LoadError("column '" + name + "' not found in header");
  };
  const std::size_t ycol = opt.y_column.empty() ? header.size() - 1 : find_col(opt.y_column);
  std::vector<std::size_t> xcols;
  if (opt.x_columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (i != ycol) xcols.push_back(i);
  } else {
    for (const auto& c : opt.x_columns) xcols.push_back(find_col(c));
  }
  std::vector<std::string> names;
  for (auto c : xcols) names.push_back(header[c]);

  std::vector<DataPoint> pts;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    ++row;
    const auto cells = detail::split_row(line, sep);
    if (cells.size() != header.size())
      throw LoadError("row " + std::to_string(row) + ": expected " +
                      std::to_string(header.size()) + " columns, found " +
                      std::to_string(cells.size()));
    DataPoint p;
    for (auto c : xcols) p.x.push_back(detail::parse_number(cells[c], row, header[c]));
    p.y = detail::parse_number(cells[ycol], row, header[ycol]);
    pts.push_back(std::move(p));
  }
  if (pts.empty()) throw LoadError("no data rows");
  return ScalingDataset(std::move(pts), std::move(names), header[ycol]);
}

inline ScalingDataset load_dataset(const std::string& path, LoadOptions opt = {}) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path + "': file not found or unreadable");
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".tsv") opt.format = TableFormat::tsv;
  return parse_dataset(in, opt);
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_dataset(std::ostream& out, const ScalingDataset& ds, char sep = ',') {
  for (const auto& n : ds.dim_names()) out << n << sep;
  out << ds.metric_name() << '\n';
  for (const auto& p : ds.points()) {
    for (double v : p.x) out << format_number(v) << sep;
    out << format_number(p.y) << '\n';
  }
}

////////////
// Splits //
////////////

struct Split {
  ScalingDataset train;
  ScalingDataset test;
};

// Per-dimension max / 2.
inline std::vector<double> half_max_thresholds(const ScalingDataset& ds) {
  std::vector<double> t(ds.arity(), 0.0);
  for (const auto& p : ds.points())
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::max(t[i], p.x[i]);
  for (double& v : t) v /= 2.0;
  return t;
}

// A point is train iff x_i < threshold_i for every i; +inf disables a cut.
inline Split threshold_split(const ScalingDataset& ds, std::span<const double> thresholds) {
  if (thresholds.size() != ds.arity())
    throw ArgumentError("threshold_split: need one threshold per dimension");
  std::vector<DataPoint> train, test;
  for (const auto& p : ds.points()) {
    bool in = true;
    for (std::size_t i = 0; i < thresholds.size(); ++i) in = in && p.x[i] < thresholds[i];
    (in ? train : test).push_back(p);
  }
  if (train.empty()) throw SplitError("threshold split leaves no training points");
  return {ds.with_points(std::move(train)), ds.with_points(std::move(test))};
}

// a >= b in every dimension and > in at least one.
inline bool dominates(std::span<const double> a, std::span<const double> b) {
  bool strict = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) return false;
    strict = strict || a[i] > b[i];
  }
  return strict;
}

struct FrontierSplit {
  ScalingDataset inner_train;
  ScalingDataset validation;
  bool degenerate = false;
  std::string warning;
};

// Validation = the points of train not dominated by any other train point.
// If that leaves fewer than half the points for inner_train, validation is
// truncated to the floor(N/2) frontier points with the largest product of
// inputs (ties by original order) and the split is flagged degenerate.
inline FrontierSplit frontier_validation_split(const ScalingDataset& train) {
  if (train.empty()) throw SplitError("frontier split of an empty training set");
  const auto& pts = train.points();
  const std::size_t n = pts.size();
  std::vector<std::size_t> frontier, rest;
  for (std::size_t i = 0; i < n; ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < n && !dominated; ++j)
      dominated = j != i && dominates(pts[j].x, pts[i].x);
    (dominated ? rest : frontier).push_back(i);
  }
  FrontierSplit out;
  const std::size_t need_inner = (n + 1) / 2;
  if (rest.size() < need_inner) {
    std::vector<std::size_t> order = frontier;
    auto log_prod = [&](std::size_t i) {
      double s = 0.0;
      for (double v : pts[i].x) s += std::log(v);
      return s;
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return log_prod(a) > log_prod(b); });
    const std::size_t keep = n / 2;
    frontier.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
    std::sort(frontier.begin(), frontier.end());
    rest.insert(rest.end(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end());
    std::sort(rest.begin(), rest.end());
    out.degenerate = true;
    out.warning = "degenerate validation split: " + std::to_string(order.size()) +
                  " of " + std::to_string(n) + " points are non-dominated; keeping " +
                  std::to_string(keep) + " as validation";
  }
  std::vector<DataPoint> inner, val;
  for (auto i : rest) inner.push_back(pts[i]);
  for (auto i : frontier) val.push_back(pts[i]);
  out.inner_train = train.with_points(std::move(inner));
  out.validation = train.with_points(std::move(val));
  return out;
}

///////////////////
// Normalization //
///////////////////

// Statistics of the training set in log space. Degenerate (constant)
// dimensions get std = 1.
struct NormStats {
  std::vector<double> log_x_mean;
  std::vector<double> log_x_std;
  double log_y_mean = 0.0;
  double log_y_std = 1.0;
  double epsilon = kNormEpsilon;

  std::vector<double> apply_x(std::span<const double> log_x) const {
    std::vector<double> z(log_x.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = (log_x[i] - log_x_mean[i]) / log_x_std[i];
    return z;
  }
  std::vector<double> unapply_x(std::span<const double> z) const {
    std::vector<double> lx(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) lx[i] = z[i] * log_x_std[i] + log_x_mean[i];
    return lx;
  }
  double apply_y(double log_y) const { return log_y - log_y_mean; }
  double unapply_y(double v) const { return v + log_y_mean; }

  static NormStats identity(std::size_t arity) {
    NormStats s;
    s.log_x_mean.assign(arity, 0.0);
    s.log_x_std.assign(arity, 1.0);
    return s;
  }
};

inline NormStats compute_norm_stats(const ScalingDataset& train, double epsilon = kNormEpsilon) {
  if (train.empty()) throw ArgumentError("normalization statistics need a nonempty train set");
  const std::size_t m = train.arity();
  const double n = static_cast<double>(train.size());
  NormStats s;
  s.epsilon = epsilon;
  s.log_x_mean.assign(m, 0.0);
  s.log_x_std.assign(m, 0.0);
  double ym = 0.0;
  for (const auto& p : train.points()) {
    for (std::size_t i = 0; i < m; ++i) s.log_x_mean[i] += std::log(p.x[i]);
    ym += std::log(p.y + epsilon);
  }
  for (auto& v : s.log_x_mean) v /= n;
  ym /= n;
  double yv = 0.0;
  for (const auto& p : train.points()) {
    for (std::size_t i = 0; i < m; ++i) {
      const double d = std::log(p.x[i]) - s.log_x_mean[i];
      s.log_x_std[i] += d * d;
    }
    const double d = std::log(p.y + epsilon) - ym;
    yv += d * d;
  }
  for (std::size_t i = 0; i < m; ++i) {
    s.log_x_std[i] = std::sqrt(s.log_x_std[i] / n);
    if (!(s.log_x_std[i] > 1e-12 * std::max(1.0, std::abs(s.log_x_mean[i])))) {
      s.log_x_std[i] = 1.0;
      s.log_x_mean[i] = std::log(train.points().front().x[i]);
    }
  }
  s.log_y_mean = ym;
  s.log_y_std = std::sqrt(yv / n);
  if (!(s.log_y_std > 1e-12)) s.log_y_std = 1.0;
  return s;
}

}  // namespace scalelaw
