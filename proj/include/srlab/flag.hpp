#pragma once

#include <algorithm>
#include <climits>
#include <cmath>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "srlab/errors.hpp"
#include "srlab/geodesy.hpp"
#include "srlab/hamiltonian.hpp"
#include "srlab/sampling.hpp"
#include "srlab/structures.hpp"

namespace srlab {

// Symmetric finite-difference stencil for the curve-derivative levels of the
// flag. The point count is widened automatically when the requested order
// needs more nodes than configured.
struct StencilConfig {
  int points = 5;
  double spacing = 1e-3;
};

struct GrowthConfig {
  int imax = 6;                  // highest flag order probed
  StencilConfig stencil;
  IntegratorConfig integrator;
  double rank_rel_tol = 1e-6;    // singular values below this fraction of the
                                 // largest are finite-difference noise
};

// Pulled-back frame fields and their time derivatives at one curve parameter:
// levels[j][f] approximates d^j/dt^j [ (P_{s0,t})_*^{-1} X_f(gamma(t)) ] at s0.
struct FlagBasis {
  double s0 = 0.0;
  std::vector<double> times;                          // stencil nodes
  std::vector<std::vector<Eigen::VectorXd>> levels;   // [derivative][field]
};

// Growth data of one normal geodesic at one time: cumulative flag ranks,
// the saturation step, and the dimension they generate.
struct GrowthData {
  std::vector<int> growth;        // k_1 .. k_m (stops once k_i = dim)
  int step = 0;                   // m; 0 when the flag never saturates
  bool ample = false;
  int geodesic_dimension = -1;    // -1 marks "infinite" (not ample)
  Eigen::VectorXd x;              // gamma(s0)
  Eigen::VectorXd p;              // covector at s0
  double time = 0.0;
};

namespace detail {

// Weights of the k-th derivative at z on arbitrary nodes x (k <= m), per
// node: w[node][k]. Classic recursive one-pass construction.
inline std::vector<std::vector<double>> fornberg_weights(double z, const std::vector<double>& x,
                                                         int m) {
  const int nd = static_cast<int>(x.size()) - 1;
  std::vector<std::vector<double>> c(x.size(), std::vector<double>(static_cast<size_t>(m) + 1, 0.0));
  double c1 = 1.0;
  double c4 = x[0] - z;
  c[0][0] = 1.0;
  for (int i = 1; i <= nd; ++i) {
    int mn = std::min(i, m);
    double c2 = 1.0;
    double c5 = c4;
    c4 = x[static_cast<size_t>(i)] - z;
    for (int j = 0; j <= i - 1; ++j) {
      double c3 = x[static_cast<size_t>(i)] - x[static_cast<size_t>(j)];
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k)
          c[static_cast<size_t>(i)][static_cast<size_t>(k)] =
              c1 * (k * c[static_cast<size_t>(i - 1)][static_cast<size_t>(k - 1)] -
                    c5 * c[static_cast<size_t>(i - 1)][static_cast<size_t>(k)]) /
              c2;
        c[static_cast<size_t>(i)][0] = -c1 * c5 * c[static_cast<size_t>(i - 1)][0] / c2;
      }
      for (int k = mn; k >= 1; --k)
        c[static_cast<size_t>(j)][static_cast<size_t>(k)] =
            (c4 * c[static_cast<size_t>(j)][static_cast<size_t>(k)] -
             k * c[static_cast<size_t>(j)][static_cast<size_t>(k - 1)]) /
            c3;
      c[static_cast<size_t>(j)][0] = c4 * c[static_cast<size_t>(j)][0] / c3;
    }
    c1 = c2;
  }
  return c;
}

// Joint state for the controlled flow: the trajectory (x, p) and the
// differential Q of the flow of f_u(t) = sum_i u_i(t) X_i along it.
class PullbackIntegrator {
public:
  explicit PullbackIntegrator(const SRStructure& s) : s_(&s), n_(s.dim()), k_(s.rank()) {
    ws_.resize(k_, n_);
    const size_t len = static_cast<size_t>(2 * n_ + n_ * n_);
    z_.resize(len);
    zs_.resize(len);
    for (auto& kv : kbuf_) kv.resize(len);
    M_.resize(static_cast<size_t>(n_) * n_);
    F_.resize(n_, k_);
    u_.resize(k_);
  }

  // state = [x, p, Q row-major]; Q starts as the identity at the curve point.
  void init(const Eigen::VectorXd& x, const Eigen::VectorXd& p) {
    for (int i = 0; i < n_; ++i) {
      z_[static_cast<size_t>(i)] = x(i);
      z_[static_cast<size_t>(n_ + i)] = p(i);
    }
    for (int r = 0; r < n_; ++r)
      for (int c = 0; c < n_; ++c)
        z_[static_cast<size_t>(2 * n_ + r * n_ + c)] = (r == c) ? 1.0 : 0.0;
  }

  void advance(double dt, int substeps) {
    const double h = dt / substeps;
    for (int st = 0; st < substeps; ++st) rk4_step(h);
  }

  Eigen::VectorXd x() const {
    Eigen::VectorXd v(n_);
    for (int i = 0; i < n_; ++i) v(i) = z_[static_cast<size_t>(i)];
    return v;
  }
  Eigen::VectorXd p() const {
    Eigen::VectorXd v(n_);
    for (int i = 0; i < n_; ++i) v(i) = z_[static_cast<size_t>(n_ + i)];
    return v;
  }
  Eigen::MatrixXd Q() const {
    Eigen::MatrixXd M(n_, n_);
    for (int r = 0; r < n_; ++r)
      for (int c = 0; c < n_; ++c) M(r, c) = z_[static_cast<size_t>(2 * n_ + r * n_ + c)];
    return M;
  }

private:
  void rhs(const double* z, double* out) {
    const int n = n_;
    s_->eval_rhs(z, z + n, out, out + n, ws_);
    // Controls by least squares of the velocity on the frame; the residual
    // must vanish for a curve tangent to the distribution.
    for (int i = 0; i < k_; ++i)
      for (int r = 0; r < n; ++r) F_(r, i) = ws_.vals[static_cast<size_t>(i) * n + r];
    Eigen::Map<const Eigen::VectorXd> vel(out, n);
    u_ = F_.colPivHouseholderQr().solve(vel);
    double resid = (F_ * u_ - vel).norm();
    if (resid > 1e-8 * std::max(1.0, vel.norm())) {
      std::ostringstream os;
      os << "curve velocity is not in the frame span (residual " << resid << ")";
      throw ControlRecoveryFailed(os.str());
    }
    s_->weighted_frame_jacobian(z, u_.data(), M_.data());
    // dQ = M Q.
    const double* Q = z + 2 * n;
    double* dQ = out + 2 * n;
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j)
          acc += M_[static_cast<size_t>(r) * n + j] * Q[static_cast<size_t>(j) * n + c];
        dQ[static_cast<size_t>(r) * n + c] = acc;
      }
    }
  }

  void rk4_step(double h) {
    const size_t len = z_.size();
    static constexpr double stage_c[3] = {0.5, 0.5, 1.0};
    rhs(z_.data(), kbuf_[0].data());
    for (int st = 1; st < 4; ++st) {
      const double c = stage_c[st - 1] * h;
      for (size_t i = 0; i < len; ++i) zs_[i] = z_[i] + c * kbuf_[static_cast<size_t>(st - 1)][i];
      rhs(zs_.data(), kbuf_[static_cast<size_t>(st)].data());
    }
    const double w = h / 6.0;
    for (size_t i = 0; i < len; ++i)
      z_[i] += w * (kbuf_[0][i] + 2 * kbuf_[1][i] + 2 * kbuf_[2][i] + kbuf_[3][i]);
  }

  const SRStructure* s_;
  int n_, k_;
  SRStructure::Workspace ws_;
  std::vector<double> z_, zs_;
  std::array<std::vector<double>, 4> kbuf_;
  std::vector<double> M_;
  Eigen::MatrixXd F_;
  Eigen::VectorXd u_;
};

inline int effective_stencil_points(const StencilConfig& cfg, int imax) {
  int pts = std::max(cfg.points, imax + 1);
  pts = std::max(pts, 3);
  if (pts % 2 == 0) ++pts;
  return pts;
}

}  // namespace detail

// Pulled-back frame fields v_f(t) = Q(t)^{-1} X_f(gamma(t)) on a symmetric
// stencil around s0, differentiated in t up to order imax-1.
inline FlagBasis flag_basis(const SRStructure& s, const GeodesicSegment& seg, double s0,
                            int imax, const StencilConfig& stencil = {},
                            const IntegratorConfig& icfg = {}) {
  if (imax < 1 || imax > 6) throw ConfigError("flag order must be between 1 and 6");
  const int n = s.dim(), k = s.rank();
  const int pts = detail::effective_stencil_points(stencil, imax);
  const int half = (pts - 1) / 2;
  const double h = stencil.spacing;
  if (!(h > 0.0)) throw ConfigError("stencil spacing must be positive");

  FlagBasis fb;
  fb.s0 = s0;
  fb.times.resize(static_cast<size_t>(pts));
  for (int d = 0; d < pts; ++d) fb.times[static_cast<size_t>(d)] = s0 + (d - half) * h;
  if (fb.times.front() < seg.t0 - 1e-12 || fb.times.back() > seg.t1 + 1e-12) {
    std::ostringstream os;
    os << "stencil [" << fb.times.front() << ", " << fb.times.back()
       << "] exits the segment interval [" << seg.t0 << ", " << seg.t1 << "]";
    throw StencilOutOfRange(os.str());
  }

  // State at the stencil centre.
  PhaseState centre;
  centre.x = seg.x;
  centre.p = seg.p;
  if (s0 != 0.0) centre = flow(s, centre, s0, icfg);

  // March outward from the centre in both directions, recording the
  // pulled-back frame at every node.
  std::vector<std::vector<Eigen::VectorXd>> vnode(
      static_cast<size_t>(pts), std::vector<Eigen::VectorXd>(static_cast<size_t>(k)));
  const int substeps = std::max(1, static_cast<int>(std::ceil(h / icfg.step_size - 1e-9)));
  auto record = [&](int node, detail::PullbackIntegrator& integ) {
    Eigen::VectorXd xt = integ.x();
    if (!s.inside_chart(xt.data()))
      throw LeftChart("stencil node left the chart during flag computation");
    Eigen::MatrixXd Q = integ.Q();
    Eigen::MatrixXd frame = s.frame_matrix(xt.data());
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(Q);
    for (int f = 0; f < k; ++f)
      vnode[static_cast<size_t>(node)][static_cast<size_t>(f)] = lu.solve(frame.col(f));
  };

  detail::PullbackIntegrator fwd(s);
  fwd.init(centre.x, centre.p);
  record(half, fwd);
  for (int d = half + 1; d < pts; ++d) {
    fwd.advance(h, substeps);
    record(d, fwd);
  }
  detail::PullbackIntegrator bwd(s);
  bwd.init(centre.x, centre.p);
  for (int d = half - 1; d >= 0; --d) {
    bwd.advance(-h, substeps);
    record(d, bwd);
  }

  const auto w = detail::fornberg_weights(s0, fb.times, imax - 1);
  fb.levels.assign(static_cast<size_t>(imax),
                   std::vector<Eigen::VectorXd>(static_cast<size_t>(k),
                                                Eigen::VectorXd::Zero(n)));
  for (int j = 0; j < imax; ++j)
    for (int f = 0; f < k; ++f)
      for (int d = 0; d < pts; ++d)
        fb.levels[static_cast<size_t>(j)][static_cast<size_t>(f)] +=
            w[static_cast<size_t>(d)][static_cast<size_t>(j)] *
            vnode[static_cast<size_t>(d)][static_cast<size_t>(f)];
  return fb;
}

// Cumulative flag ranks k_i at s0, saturation step, ampleness, and the
// dimension sum_i (2i-1)(k_i - k_{i-1}).
inline GrowthData growth_vector(const SRStructure& s, const GeodesicSegment& seg, double s0,
                                const GrowthConfig& cfg = {}) {
  const int n = s.dim(), k = s.rank();
  FlagBasis fb = flag_basis(s, seg, s0, cfg.imax, cfg.stencil, cfg.integrator);

  GrowthData g;
  g.time = s0;
  PhaseState centre;
  centre.x = seg.x;
  centre.p = seg.p;
  if (s0 != 0.0) centre = flow(s, centre, s0, cfg.integrator);
  g.x = centre.x;
  g.p = centre.p;

  Eigen::MatrixXd stacked(n, static_cast<int>(fb.levels.size()) * k);
  int cols = 0;
  int prev = 0;
  for (size_t j = 0; j < fb.levels.size(); ++j) {
    for (int f = 0; f < k; ++f) stacked.col(cols++) = fb.levels[j][static_cast<size_t>(f)];
    int r = detail::numeric_rank(stacked.leftCols(cols), cfg.rank_rel_tol);
    if (r < prev) r = prev;  // ranks of nested collections cannot drop
    g.growth.push_back(r);
    prev = r;
    if (r == n) {
      g.step = static_cast<int>(j) + 1;
      g.ample = true;
      break;
    }
  }
  if (g.ample) {
    int acc = 0, last = 0;
    for (size_t i = 0; i < g.growth.size(); ++i) {
      acc += (2 * static_cast<int>(i) + 1) * (g.growth[i] - last);
      last = g.growth[i];
    }
    g.geodesic_dimension = acc;
  }
  return g;
}

// Deterministic covector directions for dimension sampling.
inline std::vector<Eigen::VectorXd> default_covector_samples(int n, int count = 64) {
  auto pts = sphere_sample(n, count);
  std::vector<Eigen::VectorXd> out;
  out.reserve(pts.size());
  for (const auto& v : pts) {
    Eigen::VectorXd p(n);
    for (int i = 0; i < n; ++i) p(i) = v[static_cast<size_t>(i)];
    out.push_back(std::move(p));
  }
  return out;
}

// Minimal finite geodesic dimension at x over the sampled covectors.
inline int geodesic_dimension_at(StructurePtr s, const Eigen::VectorXd& x,
                                 const std::vector<Eigen::VectorXd>& covectors,
                                 const GrowthConfig& cfg = {}) {
  if (covectors.empty()) throw ConfigError("covector sample set must be nonempty");
  const int pts = detail::effective_stencil_points(cfg.stencil, cfg.imax);
  const double delta = ((pts - 1) / 2 + 2) * cfg.stencil.spacing;
  int best = INT_MAX;
  int failures = 0;
  for (const auto& p : covectors) {
    try {
      GeodesicSegment seg = make_segment(s, x, p, -delta, delta, cfg.integrator, 3);
      GrowthData g = growth_vector(*s, seg, 0.0, cfg);
      if (g.ample) best = std::min(best, g.geodesic_dimension);
    } catch (const Error&) {
      ++failures;
    }
  }
  if (best == INT_MAX) {
    std::ostringstream os;
    os << "no ample covector among " << covectors.size() << " samples (" << failures
       << " failed outright)";
    throw NoAmpleFound(os.str());
  }
  return best;
}

}  // namespace srlab
