#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "json.hpp"
#include "srlab/errors.hpp"
#include "srlab/polynomial.hpp"

namespace srlab {

inline constexpr double kRankRelTol = 1e-9;       // frame linear independence
inline constexpr double kDerivCheckRelTol = 1e-6; // analytic vs finite difference
inline constexpr int kMaxFieldDegree = 6;

// What the user describes: a frame of polynomial vector fields on one chart,
// plus a polynomial volume density and the box the chart is trusted on.
struct FrameSpec {
  std::string name;
  int dim = 0;
  int rank = 0;
  std::vector<PolyField> fields;   // size rank
  Polynomial density;              // positive on chart_bounds
  std::vector<std::array<double, 2>> chart_bounds;  // size dim
  bool test_only = false;

  // Numerics metadata. Built-ins fill these; imports get conservative values.
  enum class Builtin { generic, heisenberg, martinet, corank1_carnot, euclidean_test };
  Builtin tag = Builtin::generic;
  // Scales chart-Euclidean separations between well-separated point clouds into
  // an upper bound on the control distance. Overestimating it only weakens any
  // violation claim scored against the comparison model, so generous is safe.
  double distance_factor = 2.0;
};

struct HoermanderResult {
  int step = 0;                // smallest s with brackets up to length s spanning
  std::vector<int> flag_dims;  // dim of the spans for s = 1..step
};

inline int homogeneous_dimension(const std::vector<int>& flag_dims) {
  int q = 0, prev = 0;
  for (size_t i = 0; i < flag_dims.size(); ++i) {
    q += static_cast<int>(i + 1) * (flag_dims[i] - prev);
    prev = flag_dims[i];
  }
  return q;
}

class SRStructure;
using StructurePtr = std::shared_ptr<const SRStructure>;

// A validated structure with precompiled derivative tables. Immutable after
// load; safe to share across threads.
class SRStructure {
public:
  struct JacEntry {
    int row, col;
    Polynomial p;  // d X^row / d x_col
  };
  struct HessEntry {
    int comp, a, b;  // d2 X^comp / dx_a dx_b with a <= b
    Polynomial p;
  };

  // Scratch space for right-hand-side evaluation; allocate once per worker.
  struct Workspace {
    std::vector<double> vals;  // k*n field values
    std::vector<double> g;     // k*n rows of J_i^T p
    std::vector<double> jmat;  // k*n*n Jacobian values
    std::vector<double> hmat;  // n*n p-contracted Hessian of one field
    std::vector<double> u;     // k controls
    void resize(int k, int n) {
      vals.assign(static_cast<size_t>(k) * n, 0.0);
      g.assign(static_cast<size_t>(k) * n, 0.0);
      jmat.assign(static_cast<size_t>(k) * n * n, 0.0);
      hmat.assign(static_cast<size_t>(n) * n, 0.0);
      u.assign(static_cast<size_t>(k), 0.0);
    }
  };

  const std::string& name() const { return spec_.name; }
  int dim() const { return spec_.dim; }
  int rank() const { return spec_.rank; }
  bool test_only() const { return spec_.test_only; }
  FrameSpec::Builtin tag() const { return spec_.tag; }
  const FrameSpec& spec() const { return spec_; }
  const std::vector<PolyField>& fields() const { return spec_.fields; }
  const Polynomial& density() const { return spec_.density; }
  const std::vector<std::array<double, 2>>& chart_bounds() const { return spec_.chart_bounds; }

  bool inside_chart(const double* x) const {
    for (int i = 0; i < spec_.dim; ++i) {
      if (!(x[i] >= spec_.chart_bounds[static_cast<size_t>(i)][0] &&
            x[i] <= spec_.chart_bounds[static_cast<size_t>(i)][1]))
        return false;
    }
    return true;
  }

  // Frame values as an n x k matrix (columns are the fields).
  Eigen::MatrixXd frame_matrix(const double* x) const {
    const int n = spec_.dim, k = spec_.rank;
    Eigen::MatrixXd M(n, k);
    for (int i = 0; i < k; ++i)
      for (int r = 0; r < n; ++r) M(r, i) = spec_.fields[static_cast<size_t>(i)].comp[static_cast<size_t>(r)].eval(x);
    return M;
  }

  // Hamiltonian right-hand side: dx = sum u_i X_i, dp = -sum u_i J_i^T p,
  // with u_i = <p, X_i(x)>. Fills ws with the intermediate tables.
  void eval_rhs(const double* x, const double* p, double* dx, double* dp, Workspace& ws) const {
    const int n = spec_.dim, k = spec_.rank;
    for (int i = 0; i < k; ++i) {
      double* v = &ws.vals[static_cast<size_t>(i) * n];
      spec_.fields[static_cast<size_t>(i)].eval(x, v);
      double ui = 0.0;
      for (int r = 0; r < n; ++r) ui += p[r] * v[r];
      ws.u[static_cast<size_t>(i)] = ui;
    }
    for (int i = 0; i < k; ++i) {
      double* gi = &ws.g[static_cast<size_t>(i) * n];
      for (int c = 0; c < n; ++c) gi[c] = 0.0;
      for (const auto& e : jac_[static_cast<size_t>(i)]) gi[e.col] += p[e.row] * e.p.eval(x);
    }
    for (int r = 0; r < n; ++r) {
      double sx = 0.0, sp = 0.0;
      for (int i = 0; i < k; ++i) {
        sx += ws.u[static_cast<size_t>(i)] * ws.vals[static_cast<size_t>(i) * n + r];
        sp -= ws.u[static_cast<size_t>(i)] * ws.g[static_cast<size_t>(i) * n + r];
      }
      dx[r] = sx;
      dp[r] = sp;
    }
  }

  // Blocks of the linearised flow: d/dt (dx,dp) = [[A,B],[C,-A^T]] (dx,dp).
  // A = H_px, B = H_pp, C = -H_xx; B and C symmetric. Row-major n x n buffers.
  // Must be called after eval_rhs at the same (x, p) (reuses ws tables).
  void eval_blocks(const double* x, const double* p, double* A, double* B, double* C,
                   Workspace& ws) const {
    const int n = spec_.dim, k = spec_.rank;
    for (int i = 0; i < n * n; ++i) A[i] = B[i] = C[i] = 0.0;
    for (int i = 0; i < k; ++i) {
      double* jm = &ws.jmat[static_cast<size_t>(i) * n * n];
      for (int t = 0; t < n * n; ++t) jm[t] = 0.0;
      for (const auto& e : jac_[static_cast<size_t>(i)]) jm[e.row * n + e.col] = e.p.eval(x);
    }
    for (int i = 0; i < k; ++i) {
      const double ui = ws.u[static_cast<size_t>(i)];
      const double* v = &ws.vals[static_cast<size_t>(i) * n];
      const double* gi = &ws.g[static_cast<size_t>(i) * n];
      const double* jm = &ws.jmat[static_cast<size_t>(i) * n * n];
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          A[r * n + c] += v[r] * gi[c] + ui * jm[r * n + c];
          B[r * n + c] += v[r] * v[c];
          C[r * n + c] -= gi[r] * gi[c];
        }
      }
      if (!hess_[static_cast<size_t>(i)].empty()) {
        double* hm = ws.hmat.data();
        for (int t = 0; t < n * n; ++t) hm[t] = 0.0;
        for (const auto& e : hess_[static_cast<size_t>(i)]) {
          double val = p[e.comp] * e.p.eval(x);
          hm[e.a * n + e.b] += val;
          if (e.a != e.b) hm[e.b * n + e.a] += val;
        }
        for (int t = 0; t < n * n; ++t) C[t] -= ui * hm[t];
      }
    }
  }

  // Control-weighted frame Jacobian sum_i u_i DX_i(x) into a row-major n x n
  // buffer; the linearisation of the controlled field along a curve.
  void weighted_frame_jacobian(const double* x, const double* u, double* M) const {
    const int n = spec_.dim, k = spec_.rank;
    for (int t = 0; t < n * n; ++t) M[t] = 0.0;
    for (int i = 0; i < k; ++i)
      for (const auto& e : jac_[static_cast<size_t>(i)])
        M[e.row * n + e.col] += u[i] * e.p.eval(x);
  }

  // Iterated bracket ladder, levels[s] holding the brackets of length s+1.
  // Level 0 is the frame itself. Computed symbolically at load.
  const std::vector<std::vector<PolyField>>& bracket_levels() const { return levels_; }

  // Conservative upper bound on segment duration for the unit-time geodesic
  // started at (x, p): strictly below the first conjugate time where a closed
  // form is known, +inf otherwise (callers must then rely on certificates).
  double safe_segment_time(const double* /*x*/, const double* p) const {
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    switch (spec_.tag) {
      case FrameSpec::Builtin::heisenberg: {
        double w = std::abs(p[2]);
        return w == 0.0 ? std::numeric_limits<double>::infinity() : 0.8 * kTwoPi / w;
      }
      case FrameSpec::Builtin::corank1_carnot: {
        double w = std::abs(p[4]);
        return w == 0.0 ? std::numeric_limits<double>::infinity() : 0.8 * kTwoPi / w;
      }
      default:
        return std::numeric_limits<double>::infinity();
    }
  }

  double distance_factor() const { return spec_.distance_factor; }

  // Interval bound of the density over an axis-aligned box: [lo, hi].
  std::array<double, 2> density_range(const std::vector<std::array<double, 2>>& box) const {
    double lo = 0.0, hi = 0.0;
    for (const auto& t : spec_.density.terms()) {
      double mlo = t.coeff, mhi = t.coeff;
      for (int j = 0; j < spec_.dim; ++j) {
        int e = t.exps[static_cast<size_t>(j)];
        if (e == 0) continue;
        double a = std::pow(box[static_cast<size_t>(j)][0], e);
        double b = std::pow(box[static_cast<size_t>(j)][1], e);
        double plo = std::min(a, b), phi = std::max(a, b);
        if (e % 2 == 0 && box[static_cast<size_t>(j)][0] < 0.0 && box[static_cast<size_t>(j)][1] > 0.0)
          plo = 0.0;
        double c1 = mlo * plo, c2 = mlo * phi, c3 = mhi * plo, c4 = mhi * phi;
        mlo = std::min(std::min(c1, c2), std::min(c3, c4));
        mhi = std::max(std::max(c1, c2), std::max(c3, c4));
      }
      lo += mlo;
      hi += mhi;
    }
    return {lo, hi};
  }

  static StructurePtr load(const FrameSpec& spec);

private:
  friend StructurePtr load_structure(const std::string&);
  SRStructure() = default;

  FrameSpec spec_;
  std::vector<std::vector<JacEntry>> jac_;    // per field
  std::vector<std::vector<HessEntry>> hess_;  // per field
  std::vector<std::vector<PolyField>> levels_;
};

namespace detail {

inline int numeric_rank(const Eigen::MatrixXd& M, double rel_tol) {
  if (M.cols() == 0 || M.rows() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  const auto& s = svd.singularValues();
  double smax = s(0);
  if (smax <= 0.0) return 0;
  int r = 0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > rel_tol * smax) ++r;
  return r;
}

inline bool field_is_zero(const PolyField& f) {
  for (const auto& c : f.comp)
    if (!c.zero()) return false;
  return true;
}

// Deterministic grid of points_per_axis^dim points over the chart box.
inline std::vector<std::vector<double>> chart_grid(const FrameSpec& spec, int points_per_axis) {
  const int n = spec.dim;
  std::vector<std::vector<double>> pts;
  std::vector<int> idx(static_cast<size_t>(n), 0);
  while (true) {
    std::vector<double> x(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
      double lo = spec.chart_bounds[static_cast<size_t>(j)][0];
      double hi = spec.chart_bounds[static_cast<size_t>(j)][1];
      x[static_cast<size_t>(j)] =
          lo + (hi - lo) * static_cast<double>(idx[static_cast<size_t>(j)]) / (points_per_axis - 1);
    }
    pts.push_back(std::move(x));
    int j = 0;
    while (j < n) {
      if (++idx[static_cast<size_t>(j)] < points_per_axis) break;
      idx[static_cast<size_t>(j)] = 0;
      ++j;
    }
    if (j == n) break;
  }
  return pts;
}

}  // namespace detail

// Brackets evaluated at x, stacked level by level until the tangent space is
// spanned. Throws NoSpan if max_step levels do not suffice.
inline HoermanderResult hoermander_check(const SRStructure& s, const double* x, int max_step = 8) {
  const int n = s.dim();
  const auto& levels = s.bracket_levels();
  HoermanderResult out;
  std::vector<Eigen::VectorXd> cols;
  for (int lev = 0; lev < max_step; ++lev) {
    if (lev < static_cast<int>(levels.size())) {
      for (const auto& f : levels[static_cast<size_t>(lev)]) {
        Eigen::VectorXd v(n);
        std::vector<double> buf(static_cast<size_t>(n));
        f.eval(x, buf.data());
        for (int r = 0; r < n; ++r) v(r) = buf[static_cast<size_t>(r)];
        cols.push_back(std::move(v));
      }
    }
    Eigen::MatrixXd M(n, static_cast<int>(cols.size()));
    for (int c = 0; c < M.cols(); ++c) M.col(c) = cols[static_cast<size_t>(c)];
    int r = detail::numeric_rank(M, 1e-9);
    out.flag_dims.push_back(r);
    if (r == n) {
      out.step = lev + 1;
      return out;
    }
  }
  std::ostringstream os;
  os << "brackets up to length " << max_step << " span only " << out.flag_dims.back()
     << " of " << n << " directions at the given point";
  throw NoSpan(os.str());
}

inline StructurePtr SRStructure::load(const FrameSpec& spec) {
  const int n = spec.dim, k = spec.rank;
  if (n < 3 || n > kMaxDim) throw ConfigError("dim must be between 3 and " + std::to_string(kMaxDim));
  if (k < 2 || k > n) throw ConfigError("rank must be between 2 and dim");
  if (k == n && !spec.test_only)
    throw ConfigError("full-rank frames are only permitted on test_only structures");
  if (static_cast<int>(spec.fields.size()) != k) throw ConfigError("fields count must equal rank");
  if (static_cast<int>(spec.chart_bounds.size()) != n) throw ConfigError("chart_bounds count must equal dim");
  for (const auto& b : spec.chart_bounds)
    if (!(b[0] < b[1])) throw ConfigError("chart_bounds entries must satisfy lo < hi");
  for (const auto& f : spec.fields) {
    if (f.dim != n || static_cast<int>(f.comp.size()) != n)
      throw ConfigError("field dimension mismatch");
    for (const auto& c : f.comp)
      if (c.degree() > kMaxFieldDegree)
        throw ConfigError("field component degree exceeds " + std::to_string(kMaxFieldDegree));
  }
  if (spec.density.zero()) throw ConfigError("density polynomial must be nonzero");

  auto st = std::shared_ptr<SRStructure>(new SRStructure());
  st->spec_ = spec;

  // Symbolic first and second derivative tables.
  st->jac_.resize(static_cast<size_t>(k));
  st->hess_.resize(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        Polynomial d = spec.fields[static_cast<size_t>(i)].comp[static_cast<size_t>(r)].derivative(c);
        if (!d.zero()) st->jac_[static_cast<size_t>(i)].push_back({r, c, d});
        for (int b = c; b < n; ++b) {
          Polynomial d2 = d.derivative(b);
          if (!d2.zero()) st->hess_[static_cast<size_t>(i)].push_back({r, c, b, d2});
        }
      }
    }
  }

  // Bracket ladder, stopping once another level cannot help (all zero) or a
  // hard depth cap is reached. Level growth is pruned of identically-zero
  // fields to keep evaluation cheap.
  st->levels_.push_back(spec.fields);
  const int ladder_cap = 8;
  for (int lev = 1; lev < ladder_cap; ++lev) {
    std::vector<PolyField> next;
    for (const auto& base : st->levels_.back()) {
      for (const auto& f : spec.fields) {
        PolyField br = lie_bracket(f, base);
        if (!detail::field_is_zero(br)) next.push_back(std::move(br));
      }
    }
    if (next.empty()) break;
    st->levels_.push_back(std::move(next));
  }

  // Validation on the deterministic chart grid.
  const auto grid = detail::chart_grid(spec, 5);
  const double fd_h_base = 1e-3;
  for (const auto& x : grid) {
    // Frame must keep constant rank k.
    Eigen::MatrixXd M = st->frame_matrix(x.data());
    if (detail::numeric_rank(M, kRankRelTol) != k) {
      std::ostringstream os;
      os << "frame loses rank at grid point (";
      for (int j = 0; j < n; ++j) os << (j ? "," : "") << x[static_cast<size_t>(j)];
      os << ")";
      throw FrameDependent(os.str());
    }
    // Bracket generation within the ladder depth.
    try {
      hoermander_check(*st, x.data(), ladder_cap);
    } catch (const NoSpan&) {
      std::ostringstream os;
      os << "iterated brackets do not span at grid point (";
      for (int j = 0; j < n; ++j) os << (j ? "," : "") << x[static_cast<size_t>(j)];
      os << ")";
      throw NotBracketGenerating(os.str());
    }
    // Density positivity on the grid.
    if (!(spec.density.eval(x.data()) > 0.0))
      throw ConfigError("density is not positive at a grid point");

    // Derivative tables versus five-point central differences.
    double scale = 1.0;
    for (int j = 0; j < n; ++j) scale = std::max(scale, std::abs(x[static_cast<size_t>(j)]));
    const double h = fd_h_base * scale;
    std::vector<double> xp(x), buf(static_cast<size_t>(n));
    auto eval_comp = [&](int i, int r, const std::vector<double>& pt) {
      return spec.fields[static_cast<size_t>(i)].comp[static_cast<size_t>(r)].eval(pt.data());
    };
    for (int i = 0; i < k; ++i) {
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          double an = 0.0;
          for (const auto& e : st->jac_[static_cast<size_t>(i)])
            if (e.row == r && e.col == c) an = e.p.eval(x.data());
          xp = x;
          xp[static_cast<size_t>(c)] = x[static_cast<size_t>(c)] + 2 * h;
          double f2p = eval_comp(i, r, xp);
          xp[static_cast<size_t>(c)] = x[static_cast<size_t>(c)] + h;
          double f1p = eval_comp(i, r, xp);
          xp[static_cast<size_t>(c)] = x[static_cast<size_t>(c)] - h;
          double f1m = eval_comp(i, r, xp);
          xp[static_cast<size_t>(c)] = x[static_cast<size_t>(c)] - 2 * h;
          double f2m = eval_comp(i, r, xp);
          double fd = (-f2p + 8 * f1p - 8 * f1m + f2m) / (12 * h);
          double ref = std::max({1.0, std::abs(an), std::abs(fd)});
          if (std::abs(fd - an) > kDerivCheckRelTol * ref) {
            std::ostringstream os;
            os << "field " << i << " component " << r << " d/dx_" << c
               << " disagrees with finite differences (analytic " << an << ", fd " << fd << ")";
            throw DerivativeMismatch(os.str());
          }
        }
      }
    }
  }
  return st;
}

// ---------------------------------------------------------------------------
// Built-in structures
// ---------------------------------------------------------------------------

namespace detail {

inline FrameSpec make_heisenberg() {
  FrameSpec s;
  s.name = "heisenberg";
  s.dim = 3;
  s.rank = 2;
  s.tag = FrameSpec::Builtin::heisenberg;
  PolyField X1(3), X2(3);
  X1.comp[0] = Polynomial::constant(3, 1.0);
  X1.comp[2] = Polynomial::variable(3, 1).scaled(-0.5);  // -y/2
  X2.comp[1] = Polynomial::constant(3, 1.0);
  X2.comp[2] = Polynomial::variable(3, 0).scaled(0.5);  // x/2
  s.fields = {X1, X2};
  s.density = Polynomial::constant(3, 1.0);
  s.chart_bounds = {{{-8.0, 8.0}}, {{-8.0, 8.0}}, {{-8.0, 8.0}}};
  return s;
}

inline FrameSpec make_martinet() {
  FrameSpec s;
  s.name = "martinet";
  s.dim = 3;
  s.rank = 2;
  s.tag = FrameSpec::Builtin::martinet;
  PolyField X1(3), X2(3);
  X1.comp[0] = Polynomial::constant(3, 1.0);
  X2.comp[1] = Polynomial::constant(3, 1.0);
  Polynomial x = Polynomial::variable(3, 0);
  X2.comp[2] = (x * x).scaled(0.5);  // x^2/2
  s.fields = {X1, X2};
  s.density = Polynomial::constant(3, 1.0);
  s.chart_bounds = {{{-8.0, 8.0}}, {{-8.0, 8.0}}, {{-8.0, 8.0}}};
  return s;
}

// Two Heisenberg planes sharing one vertical direction: coordinates
// (x1, y1, x2, y2, z), rank 4, corank 1, step 2.
inline FrameSpec make_corank1_carnot() {
  FrameSpec s;
  s.name = "corank1_carnot";
  s.dim = 5;
  s.rank = 4;
  s.tag = FrameSpec::Builtin::corank1_carnot;
  auto plane_field = [&](int horiz, int partner, double sign) {
    PolyField f(5);
    f.comp[static_cast<size_t>(horiz)] = Polynomial::constant(5, 1.0);
    f.comp[4] = Polynomial::variable(5, partner).scaled(sign * 0.5);
    return f;
  };
  s.fields = {plane_field(0, 1, -1.0), plane_field(1, 0, 1.0),
              plane_field(2, 3, -1.0), plane_field(3, 2, 1.0)};
  s.density = Polynomial::constant(5, 1.0);
  s.chart_bounds.assign(5, {{-8.0, 8.0}});
  return s;
}

inline FrameSpec make_euclidean_test() {
  FrameSpec s;
  s.name = "euclidean_test";
  s.dim = 3;
  s.rank = 3;
  s.test_only = true;
  s.tag = FrameSpec::Builtin::euclidean_test;
  s.distance_factor = 1.0;  // the chart metric is the control metric here
  for (int i = 0; i < 3; ++i) {
    PolyField f(3);
    f.comp[static_cast<size_t>(i)] = Polynomial::constant(3, 1.0);
    s.fields.push_back(f);
  }
  s.density = Polynomial::constant(3, 1.0);
  s.chart_bounds.assign(3, {{-8.0, 8.0}});
  return s;
}

}  // namespace detail

inline StructurePtr load_structure(const std::string& name) {
  if (name == "heisenberg") return SRStructure::load(detail::make_heisenberg());
  if (name == "martinet") return SRStructure::load(detail::make_martinet());
  if (name == "corank1_carnot") return SRStructure::load(detail::make_corank1_carnot());
  if (name == "euclidean_test") return SRStructure::load(detail::make_euclidean_test());
  throw ConfigError("unknown structure '" + name + "'");
}

// ---------------------------------------------------------------------------
// JSON frame import
// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::vector<std::string>& allowed,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& a : allowed)
      if (it.key() == a) ok = true;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

inline Polynomial parse_poly(const nlohmann::json& j, int dim, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be an array of [exponents, coefficient] pairs");
  Polynomial p(dim);
  for (const auto& term : j) {
    if (!term.is_array() || term.size() != 2)
      throw ConfigError(where + " terms must be [exponents, coefficient] pairs");
    const auto& ex = term[0];
    if (!ex.is_array() || static_cast<int>(ex.size()) != dim)
      throw ConfigError(where + " exponent tuples must have dim entries");
    Exponents e{};
    for (int t = 0; t < dim; ++t) {
      int v = ex[static_cast<size_t>(t)].get<int>();
      if (v < 0 || v > 255) throw ConfigError(where + " exponents must be in [0, 255]");
      e[static_cast<size_t>(t)] = static_cast<std::uint8_t>(v);
    }
    p.add_term(term[1].get<double>(), e);
  }
  return p;
}

}  // namespace detail

inline StructurePtr load_structure_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j, {"name", "dim", "rank", "fields", "density", "chart_bounds", "test_only",
          "distance_factor"},
      "frame spec");
  FrameSpec s;
  if (!j.contains("name") || !j.contains("dim") || !j.contains("rank") || !j.contains("fields") ||
      !j.contains("chart_bounds"))
    throw ConfigError("frame spec requires name, dim, rank, fields, chart_bounds");
  s.name = j.at("name").get<std::string>();
  s.dim = j.at("dim").get<int>();
  s.rank = j.at("rank").get<int>();
  if (s.dim < 3 || s.dim > kMaxDim) throw ConfigError("dim must be between 3 and " + std::to_string(kMaxDim));
  const auto& fields = j.at("fields");
  if (!fields.is_array()) throw ConfigError("fields must be an array");
  for (const auto& fj : fields) {
    if (!fj.is_array() || static_cast<int>(fj.size()) != s.dim)
      throw ConfigError("each field must list dim component polynomials");
    PolyField f(s.dim);
    for (int r = 0; r < s.dim; ++r)
      f.comp[static_cast<size_t>(r)] = detail::parse_poly(fj[static_cast<size_t>(r)], s.dim, "field component");
    s.fields.push_back(std::move(f));
  }
  if (j.contains("density"))
    s.density = detail::parse_poly(j.at("density"), s.dim, "density");
  else
    s.density = Polynomial::constant(s.dim, 1.0);
  const auto& cb = j.at("chart_bounds");
  if (!cb.is_array() || static_cast<int>(cb.size()) != s.dim)
    throw ConfigError("chart_bounds must list dim [lo, hi] pairs");
  for (const auto& bj : cb) {
    if (!bj.is_array() || bj.size() != 2) throw ConfigError("chart_bounds entries must be [lo, hi]");
    s.chart_bounds.push_back({bj[0].get<double>(), bj[1].get<double>()});
  }
  if (j.contains("test_only")) s.test_only = j.at("test_only").get<bool>();
  if (j.contains("distance_factor")) {
    s.distance_factor = j.at("distance_factor").get<double>();
    if (!(s.distance_factor >= 1.0))
      throw ConfigError("distance_factor must be at least 1");
  }
  return SRStructure::load(s);
}

inline StructurePtr load_structure_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open frame spec file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("frame spec parse failure: " + std::string(e.what()));
  }
  return load_structure_json(j);
}

}  // namespace srlab
