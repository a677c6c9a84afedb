#pragma once

// Structure of the composite forms (UNSL and ablations A1/A2/A3).
//
// A FormSpec is compiled into a Wiring: a small expression DAG in log space
// whose leaves are MBNSL kernels and limit constants and whose interior nodes
// are log-sum-exp additions, reciprocals (negation in log space) and limit
// combinations (Y^-1 + a^-1)^-1.
//
// Kernel ids follow r * (m + 1) + t, where r is the R-instance index and t is
// 0 for the joint (non-bottleneck) kernel and 1..m for the per-dimension
// bottleneck kernels. Limit roles are the subscripts of the a constants.

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "scalelaw/errors.hpp"
#include "scalelaw/mbnsl.hpp"
#include "scalelaw/numeric.hpp"

namespace scalelaw {

enum class FormKind { unsl, a1, a2, a3, cf, dc };

inline std::string to_string(FormKind k) {
  switch (k) {
    case FormKind::unsl: return "unsl";
    case FormKind::a1: return "a1";
    case FormKind::a2: return "a2";
    case FormKind::a3: return "a3";
    case FormKind::cf: return "cf";
    case FormKind::dc: return "dc";
  }
  return "?";
}

inline FormKind parse_form_kind(const std::string& s) {
  for (FormKind k : {FormKind::unsl, FormKind::a1, FormKind::a2, FormKind::a3, FormKind::cf,
                     FormKind::dc})
    if (to_string(k) == s) return k;
  throw ArgumentError("unknown form '" + s + "' (expected unsl, a1, a2, a3, cf or dc)");
}

struct FormSpec {
  FormKind kind = FormKind::unsl;
  int arity = 1;
  int break_count = 0;
  int oppositional_count = 0;
  // Per R-instance index sets (0-based dims). A missing entry means all dims.
  std::map<int, std::vector<int>> nonbottleneck_sets;
  std::map<int, std::vector<int>> bottleneck_sets;
  std::map<int, int> break_overrides;  // kernel id -> n
  bool overfit_enabled = true;
  bool hparam_force_enabled = true;
  bool metric_upper_limit_enabled = false;
  // CF/DC only: dataset dimension feeding form input k. Empty means identity.
  std::vector<int> input_order;

  int effective_oppositional_count() const {
    return hparam_force_enabled ? oppositional_count : 0;
  }
  bool is_baseline() const { return kind == FormKind::cf || kind == FormKind::dc; }
  bool uses_oppositional_count() const {
    return kind == FormKind::unsl || kind == FormKind::a3;
  }
  bool uses_breaks() const { return !is_baseline(); }

  int breaks_for(int kernel_id) const {
    auto it = break_overrides.find(kernel_id);
    return it == break_overrides.end() ? break_count : it->second;
  }

  std::vector<int> all_dims() const {
    std::vector<int> v(static_cast<std::size_t>(arity));
    std::iota(v.begin(), v.end(), 0);
    return v;
  }
  std::vector<int> nonbottleneck_set(int r) const {
    auto it = nonbottleneck_sets.find(r);
    return it == nonbottleneck_sets.end() ? all_dims() : it->second;
  }
  std::vector<int> bottleneck_set(int r) const {
    auto it = bottleneck_sets.find(r);
    return it == bottleneck_sets.end() ? all_dims() : it->second;
  }

  // R-instance indices referenced by the wiring, in evaluation order.
  std::vector<int> r_instances() const {
    const int S = effective_oppositional_count();
    std::vector<int> rs;
    switch (kind) {
      case FormKind::unsl:
        for (int s = 0; s <= S; ++s) rs.push_back(3 + s);
        if (overfit_enabled)
          for (int s = 0; s <= S; ++s) rs.push_back(S + 4 + s);
        break;
      case FormKind::a3:
        for (int s = 0; s <= S; ++s) rs.push_back(s);
        break;
      case FormKind::a2:
        rs.push_back(0);
        break;
      default:
        break;
    }
    return rs;
  }

  // Removes every bottleneck kernel from every R-instance.
  FormSpec without_bottlenecks() const {
    FormSpec out = *this;
    for (int r : r_instances()) out.bottleneck_sets[r] = {};
    return out;
  }

  static FormSpec unsl(int m, int n, int S, bool overfit = true, bool upper_limit = false) {
    FormSpec f;
    f.kind = FormKind::unsl;
    f.arity = m;
    f.break_count = n;
    f.oppositional_count = S;
    f.hparam_force_enabled = S > 0;
    f.overfit_enabled = overfit;
    f.metric_upper_limit_enabled = upper_limit;
    return f;
  }
  static FormSpec a1(int m, int n) {
    FormSpec f;
    f.kind = FormKind::a1;
    f.arity = m;
    f.break_count = n;
    f.overfit_enabled = false;
    f.hparam_force_enabled = false;
    return f;
  }
  static FormSpec a2(int m, int n) {
    FormSpec f = a1(m, n);
    f.kind = FormKind::a2;
    return f;
  }
  static FormSpec a3(int m, int n, int S, bool upper_limit = false) {
    FormSpec f = a1(m, n);
    f.kind = FormKind::a3;
    f.oppositional_count = S;
    f.hparam_force_enabled = S > 0;
    f.metric_upper_limit_enabled = upper_limit;
    return f;
  }
  static FormSpec cf() {
    FormSpec f;
    f.kind = FormKind::cf;
    f.arity = 2;
    f.overfit_enabled = f.hparam_force_enabled = false;
    return f;
  }
  static FormSpec dc() {
    FormSpec f = cf();
    f.kind = FormKind::dc;
    f.arity = 3;
    return f;
  }
};

enum class LimitKind {
  additive,   // a_0: stored as log a_0
  reciprocal  // every other a: stored as log(a^-1); -inf encodes a = inf
};

struct LimitConstant {
  LimitKind kind = LimitKind::reciprocal;
  double log_value = -kInf;

  static LimitConstant inverse(double log_inverse) { return {LimitKind::reciprocal, log_inverse}; }
  static LimitConstant infinite() { return {LimitKind::reciprocal, -kInf}; }
  static LimitConstant additive(double log_a0) { return {LimitKind::additive, log_a0}; }

  double log_inverse() const { return log_value; }
  bool is_infinite() const { return kind == LimitKind::reciprocal && log_value == -kInf; }
};

inline LimitKind limit_kind_for_role(int role) {
  return role == 0 ? LimitKind::additive : LimitKind::reciprocal;
}

// log((Y^-1 + a^-1)^-1) for Y = exp(log_body).
inline double limit_combine(double log_body, const LimitConstant& limit) {
  if (limit.kind != LimitKind::reciprocal)
    throw ArgumentError("limit_combine: a_0 is additive, not a reciprocal limit");
  return limit_combine_log(log_body, limit.log_value);
}

struct ParamSet {
  std::map<int, MbnslParams> kernels;   // by kernel id
  std::map<int, LimitConstant> limits;  // by role (subscript of a)
};

struct KernelSlot {
  int id = 0;
  int r = 0;
  int t = 0;  // 0: joint kernel; 1..m: bottleneck on dim t-1
  std::vector<int> dims;
  int breaks = 0;
  int scale_sign = 1;  // how log K shifts when y is rescaled (see Wiring)
};

struct LimitSlot {
  int role = 0;
  LimitKind kind = LimitKind::reciprocal;
  int scale_sign = 1;
};

enum class Op { kernel, limit, sum, negate, limit_combine };

struct Node {
  Op op = Op::sum;
  int ref = -1;  // kernel slot (Op::kernel) or limit slot (Op::limit, Op::limit_combine)
  std::vector<int> children;
};

// Compiled expression DAG. Nodes are stored children-first; the root is last.
//
// scale_sign: multiplying y by e^u is exactly reproduced by shifting each
// kernel's log b and each limit's log value by scale_sign * u. Leaves under an
// odd number of reciprocals flip sign.
class Wiring {
 public:
  std::vector<Node> nodes;
  std::vector<KernelSlot> kernels;
  std::vector<LimitSlot> limits;

  int root() const { return static_cast<int>(nodes.size()) - 1; }

  int kernel_slot(int id) const {
    for (std::size_t i = 0; i < kernels.size(); ++i)
      if (kernels[i].id == id) return static_cast<int>(i);
    return -1;
  }
  int limit_slot(int role) const {
    for (std::size_t i = 0; i < limits.size(); ++i)
      if (limits[i].role == role) return static_cast<int>(i);
    return -1;
  }

  static Wiring build(const FormSpec& spec);

  // Log-space forward pass. node_values is resized to nodes.size().
  double forward(std::span<const double> kernel_logs, std::span<const double> limit_logs,
                 std::vector<double>& node_values) const {
    node_values.assign(nodes.size(), 0.0);
    std::vector<double> buf;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const Node& nd = nodes[i];
      double v = 0.0;
      switch (nd.op) {
        case Op::kernel: v = kernel_logs[nd.ref]; break;
        case Op::limit: v = limit_logs[nd.ref]; break;
        case Op::negate: v = -node_values[nd.children[0]]; break;
        case Op::sum:
          buf.clear();
          for (int c : nd.children) buf.push_back(node_values[c]);
          v = log_sum_exp<double>(buf);
          break;
        case Op::limit_combine:
          v = limit_combine_log(node_values[nd.children[0]], limit_logs[nd.ref]);
          break;
      }
      node_values[i] = v;
    }
    return node_values.back();
  }

  // Reverse pass for d(root)/d(leaves). Accumulates into the spans.
  void backward(const std::vector<double>& node_values, std::span<const double> limit_logs,
                std::span<double> d_kernel, std::span<double> d_limit) const {
    std::vector<double> adj(nodes.size(), 0.0);
    adj.back() = 1.0;
    for (std::size_t ii = nodes.size(); ii-- > 0;) {
      const Node& nd = nodes[ii];
      const double a = adj[ii];
      if (a == 0.0) continue;
      switch (nd.op) {
        case Op::kernel: d_kernel[nd.ref] += a; break;
        case Op::limit: d_limit[nd.ref] += a; break;
        case Op::negate: adj[nd.children[0]] -= a; break;
        case Op::sum: {
          const double v = node_values[ii];
          if (v == -kInf) break;
          for (int c : nd.children) adj[c] += a * std::exp(node_values[c] - v);
          break;
        }
        case Op::limit_combine: {
          const double l = limit_logs[nd.ref];
          const double body = node_values[nd.children[0]];
          if (l == -kInf || body == -kInf) {
            adj[nd.children[0]] += a;
            break;
          }
          const double s = sigmoid(body + l);
          adj[nd.children[0]] += a * (1.0 - s);
          d_limit[nd.ref] -= a * s;
          break;
        }
      }
    }
  }

 private:
  int push(Node n) {
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  }
  int add_limit(int role, int sign) {
    limits.push_back({role, limit_kind_for_role(role), sign});
    return static_cast<int>(limits.size()) - 1;
  }
  int limit_leaf(int role, int sign) { return push({Op::limit, add_limit(role, sign), {}}); }
  int kernel_leaf(const FormSpec& spec, int r, int t, std::vector<int> dims, int sign) {
    const int m = spec.arity;
    const int id = r * (m + 1) + t;
    kernels.push_back({id, r, t, std::move(dims), spec.breaks_for(id), sign});
    return push({Op::kernel, static_cast<int>(kernels.size()) - 1, {}});
  }
  int combine(int child, int role, int sign) {
    // The stored a^-1 scales like Y^-1, i.e. with the opposite sign.
    return push({Op::limit_combine, add_limit(role, -sign), {child}});
  }
  int sum(std::vector<int> children) { return push({Op::sum, -1, std::move(children)}); }
  int negate(int child) { return push({Op::negate, -1, {child}}); }

  // R(r): joint kernel over U_r plus one bottleneck kernel per t in T_r.
  int r_node(const FormSpec& spec, int r, int sign) {
    std::vector<int> terms;
    const auto u = spec.nonbottleneck_set(r);
    if (!u.empty()) terms.push_back(kernel_leaf(spec, r, 0, u, sign));
    for (int t : spec.bottleneck_set(r)) terms.push_back(kernel_leaf(spec, r, t + 1, {t}, sign));
    if (terms.empty())
      throw ConfigError("R-instance " + std::to_string(r) + " has no kernels");
    return terms.size() == 1 ? terms.front() : sum(std::move(terms));
  }

  // (R(r) + a_role^-1)^-1, the oppositional term.
  int opposition(const FormSpec& spec, int r, int role, int sign) {
    const int inner = sum({r_node(spec, r, -sign), limit_leaf(role, -sign)});
    return negate(inner);
  }

  // Q(q) = (R(q)^-1 + a_q^-1)^-1 + sum_s (R(q+s) + a_{q+s}^-1)^-1
  int q_node(const FormSpec& spec, int q, int sign) {
    const int S = spec.effective_oppositional_count();
    std::vector<int> terms{combine(r_node(spec, q, sign), q, sign)};
    for (int s = 1; s <= S; ++s) terms.push_back(opposition(spec, q + s, q + s, sign));
    return terms.size() == 1 ? terms.front() : sum(std::move(terms));
  }
};

inline Wiring Wiring::build(const FormSpec& spec) {
  if (spec.arity < 1) throw ConfigError("arity must be >= 1");
  if (spec.break_count < 0 || spec.oppositional_count < 0)
    throw ConfigError("break and oppositional counts must be nonnegative");
  auto check_sets = [&](const std::map<int, std::vector<int>>& sets) {
    for (const auto& [r, dims] : sets)
      for (int d : dims)
        if (d < 0 || d >= spec.arity)
          throw ConfigError("index set of R-instance " + std::to_string(r) +
                            " references dimension " + std::to_string(d));
  };
  check_sets(spec.nonbottleneck_sets);
  check_sets(spec.bottleneck_sets);

  Wiring w;
  const int S = spec.effective_oppositional_count();
  switch (spec.kind) {
    case FormKind::a1:
      w.kernel_leaf(spec, 0, 0, spec.all_dims(), 1);
      break;
    case FormKind::a2:
      // a_0 + R(0)
      w.sum({w.limit_leaf(0, 1), w.r_node(spec, 0, 1)});
      break;
    case FormKind::a3: {
      // a_0 + (((R(0)^-1 + a_1^-1)^-1 + sum_s (R(s) + a_{s+2}^-1)^-1)^-1 + a_2^-1)^-1
      std::vector<int> terms{w.combine(w.r_node(spec, 0, 1), 1, 1)};
      for (int s = 1; s <= S; ++s) terms.push_back(w.opposition(spec, s, s + 2, 1));
      int body = terms.size() == 1 ? terms.front() : w.sum(std::move(terms));
      if (spec.metric_upper_limit_enabled) body = w.combine(body, 2, 1);
      w.sum({w.limit_leaf(0, 1), body});
      break;
    }
    case FormKind::unsl: {
      // a_0 + ((Q(3) + (Q(S+4) + a_1^-1)^-1)^-1 + a_2^-1)^-1
      int body = w.q_node(spec, 3, 1);
      if (spec.overfit_enabled) {
        const int inner = w.sum({w.q_node(spec, S + 4, -1), w.limit_leaf(1, -1)});
        body = w.sum({body, w.negate(inner)});
      }
      if (spec.metric_upper_limit_enabled) body = w.combine(body, 2, 1);
      w.sum({w.limit_leaf(0, 1), body});
      break;
    }
    case FormKind::cf: {
      // a + b1 x1^-c1 + b2 x2^-c2, as a_0 plus two single-dim power laws.
      if (spec.arity != 2) throw ConfigError("CF requires arity 2");
      FormSpec plain = spec;
      plain.break_count = 0;
      plain.break_overrides.clear();
      w.sum({w.limit_leaf(0, 1), w.kernel_leaf(plain, 0, 1, {0}, 1),
             w.kernel_leaf(plain, 0, 2, {1}, 1)});
      break;
    }
    case FormKind::dc:
      throw ConfigError("DC has no kernel wiring");
  }
  std::vector<int> ids;
  for (const auto& k : w.kernels) ids.push_back(k.id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw ConfigError("index sets produce duplicate kernel ids");
  return w;
}

// A ParamSet that structurally matches spec: zero exponents, unit offsets,
// infinite reciprocal limits, a_0 = 1, unit sharpness.
inline ParamSet make_param_set(const FormSpec& spec) {
  const Wiring w = Wiring::build(spec);
  ParamSet p;
  for (const auto& ks : w.kernels) {
    MbnslParams k;
    k.kernel_id = ks.id;
    k.index_set = ks.dims;
    k.init_exponents.assign(ks.dims.size(), 0.0);
    for (int j = 0; j < ks.breaks; ++j) k.breaks.push_back({std::vector<double>(ks.dims.size()), 0.0, 1.0});
    p.kernels.emplace(ks.id, std::move(k));
  }
  for (const auto& ls : w.limits)
    p.limits.emplace(ls.role, ls.kind == LimitKind::additive ? LimitConstant::additive(0.0)
                                                             : LimitConstant::infinite());
  return p;
}

// Throws ConfigError unless params has exactly the kernels and limits the
// wiring demands, with matching index sets and break counts.
inline void check_structure(const Wiring& w, const ParamSet& p, double f_floor) {
  if (p.kernels.size() != w.kernels.size())
    throw ConfigError("parameter set has " + std::to_string(p.kernels.size()) +
                      " kernels, form needs " + std::to_string(w.kernels.size()));
  for (const auto& ks : w.kernels) {
    auto it = p.kernels.find(ks.id);
    if (it == p.kernels.end()) throw ConfigError("missing kernel " + std::to_string(ks.id));
    const MbnslParams& k = it->second;
    if (k.index_set != ks.dims)
      throw ConfigError("kernel " + std::to_string(ks.id) + " has the wrong index set");
    if (static_cast<int>(k.break_count()) != ks.breaks)
      throw ConfigError("kernel " + std::to_string(ks.id) + " has " +
                        std::to_string(k.break_count()) + " breaks, form needs " +
                        std::to_string(ks.breaks));
    try {
      k.validate(f_floor);
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
  }
  if (p.limits.size() != w.limits.size())
    throw ConfigError("parameter set has " + std::to_string(p.limits.size()) +
                      " limits, form needs " + std::to_string(w.limits.size()));
  for (const auto& ls : w.limits) {
    auto it = p.limits.find(ls.role);
    if (it == p.limits.end()) throw ConfigError("missing limit a_" + std::to_string(ls.role));
    if (it->second.kind != ls.kind)
      throw ConfigError("limit a_" + std::to_string(ls.role) + " has the wrong kind");
    if (it->second.log_value == kInf || std::isnan(it->second.log_value))
      throw ConfigError("limit a_" + std::to_string(ls.role) + " must be finite or -inf");
  }
}

}  // namespace scalelaw
