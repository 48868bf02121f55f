#pragma once
// Interpolation-inequality machinery around one geodesic segment: power-law
// fits of the midpoint contraction rate, the ratio with unit inverse-geodesic
// Jacobian, construction of the endpoint ball and its inverse image, a sampled
// upper bound for the midpoint-set volume, the constant-curvature model
// profile tau, and the margin that scores a Brunn-Minkowski style inequality.
// Negative margins certify that the tested (K, N) model fails on these sets.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_set>
#include <vector>

#include <srlab/errors.hpp>
#include <srlab/flag.hpp>
#include <srlab/geodesy.hpp>
#include <srlab/hamiltonian.hpp>
#include <srlab/sampling.hpp>
#include <srlab/structures.hpp>

namespace srlab {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// Lebesgue volume of the unit ball in R^n.
inline double unit_ball_volume(int n) {
  if (n < 1) throw ConfigError("unit_ball_volume: dimension must be positive");
  return std::pow(kPi, 0.5 * n) / std::tgamma(0.5 * n + 1.0);
}

// count points log-spaced over [lo, hi], endpoints included.
inline std::vector<double> log_grid(double lo, double hi, int count) {
  if (!(lo > 0.0 && hi > lo)) throw ConfigError("log_grid: need 0 < lo < hi");
  if (count < 2) throw ConfigError("log_grid: need at least 2 points");
  std::vector<double> g(static_cast<size_t>(count));
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < count; ++i)
    g[static_cast<size_t>(i)] = std::exp(llo + (lhi - llo) * i / (count - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

// ---------------------------------------------------------------------------
// constant-curvature model profile
// ---------------------------------------------------------------------------

// Distortion coefficient tau_t of the (K, N) comparison model:
//   K = 0:              tau = t
//   K < 0, N > 1:       tau = t^{1/N} (sinh(t Theta c) / sinh(Theta c))^{1-1/N},
//                       c = sqrt(-K / (N - 1)).
// The sinh ratio is evaluated as exp((t-1)x)(1-e^{-2tx})/(1-e^{-2x}), which
// stays finite for arbitrarily large x. tau(.,.,1,.) is exactly 1.
inline double tau(double curvature, double dimension, double t, double theta) {
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("tau: interpolation ratio must lie in [0, 1]");
  if (!(theta >= 0.0)) throw ConfigError("tau: the distance bound must be nonnegative");
  if (!(dimension >= 1.0)) throw ConfigError("tau: the dimension parameter must be at least 1");
  if (curvature > 0.0)
    throw UnsupportedCurvature("positive curvature bounds are outside the supported range");
  if (curvature == 0.0) return t;
  if (dimension == 1.0)
    throw DegenerateDimension("N = 1 with negative curvature leaves no room for the sinh profile");
  if (t == 0.0) return 0.0;
  if (t == 1.0) return 1.0;
  const double c = std::sqrt(-curvature / (dimension - 1.0));
  const double x = theta * c;
  if (x < 1e-8) return t;  // sinh(t x)/sinh(x) -> t
  const double ratio =
      std::exp((t - 1.0) * x) * (-std::expm1(-2.0 * t * x)) / (-std::expm1(-2.0 * x));
  return std::pow(t, 1.0 / dimension) * std::pow(ratio, 1.0 - 1.0 / dimension);
}

// Comparison model the margin is scored against.
struct BMParams {
  double curvature = 0.0;  // K, nonpositive
  double dimension = 2.0;  // N >= 1
  double theta = 0.0;      // upper bound on distances between the two sets
  double t = 0.5;          // interpolation ratio
};

struct VolumeTriple {
  double vol_a = 0.0;    // measure of the inverse image A
  double vol_b = 0.0;    // measure of the ball B
  double vol_mid = 0.0;  // upper bound for the measure of the midpoint set
};

// vol_mid^{1/N} - [tau_{1-t} vol_a^{1/N} + tau_t vol_b^{1/N}].
// Negative values certify that the (K, N) interpolation inequality fails.
inline double bm_margin(const VolumeTriple& v, const BMParams& p) {
  if (!(v.vol_a >= 0.0 && v.vol_b >= 0.0 && v.vol_mid >= 0.0))
    throw ConfigError("bm_margin: volumes must be nonnegative");
  const double e = 1.0 / p.dimension;
  return std::pow(v.vol_mid, e) -
         tau(p.curvature, p.dimension, 1.0 - p.t, p.theta) * std::pow(v.vol_a, e) -
         tau(p.curvature, p.dimension, p.t, p.theta) * std::pow(v.vol_b, e);
}

// ---------------------------------------------------------------------------
// contraction-rate fit
// ---------------------------------------------------------------------------

struct FitConfig {
  double bracket = 0.1;          // multiplicative slack defining the validity window
  double residual_limit = 1e-2;  // RMS log-residual beyond which the fit is rejected
  IntegratorConfig integrator{};
};

// |Jac M^t| ~ scale * t^exponent, fitted in log-log coordinates. The window
// [t_min, t_max] is the largest grid prefix on which every measured Jacobian
// stays inside the (1 + bracket) band around the fitted law.
struct ContractionFit {
  double scale = 0.0;
  double exponent = 0.0;
  double residual = 0.0;  // RMS of the log-space regression residuals
  double t_min = 0.0;
  double t_max = 0.0;
  std::vector<double> grid;       // evaluation ratios
  std::vector<double> jacobians;  // |Jac M^t| at each ratio
};

// Least-squares power law for the midpoint Jacobian t -> |det D_y M^t(x, y)|
// along the geodesic (x, p). The Jacobian equals |det ED(t)| / |det ED(1)|,
// so the unit-ratio endpoint differential is computed once.
inline ContractionFit contraction_fit(const SRStructure& s, const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& p, const std::vector<double>& grid,
                                      const FitConfig& cfg = {}) {
  if (grid.size() < 8) throw ConfigError("contraction_fit: need at least 8 grid ratios");
  for (size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0 && grid[i] < 1.0))
      throw ConfigError("contraction_fit: grid ratios must lie in (0, 1)");
    if (i > 0 && !(grid[i] > grid[i - 1]))
      throw ConfigError("contraction_fit: grid ratios must be strictly increasing");
  }
  const double det1 = exp_differential(s, x, p, 1.0, cfg.integrator).determinant();
  if (det1 == 0.0)
    throw SingularJacobian("endpoint differential is singular at ratio 1; no reference Jacobian");

  ContractionFit fit;
  fit.grid = grid;
  fit.jacobians.reserve(grid.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (double t : grid) {
    const double dett = exp_differential(s, x, p, t, cfg.integrator).determinant();
    const double jac = std::abs(dett / det1);
    if (!(jac > 0.0))
      throw PoorFit("midpoint Jacobian vanished at ratio " + std::to_string(t) +
                    "; the segment crosses a conjugate point");
    fit.jacobians.push_back(jac);
    const double lx = std::log(t), ly = std::log(jac);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double count = static_cast<double>(grid.size());
  const double denom = count * sxx - sx * sx;
  fit.exponent = (count * sxy - sx * sy) / denom;
  const double intercept = (sy - fit.exponent * sx) / count;
  fit.scale = std::exp(intercept);

  double rss = 0.0;
  for (size_t i = 0; i < grid.size(); ++i) {
    const double res = std::log(fit.jacobians[i]) - fit.exponent * std::log(grid[i]) - intercept;
    rss += res * res;
  }
  fit.residual = std::sqrt(rss / count);
  if (fit.residual > cfg.residual_limit)
    throw PoorFit("power-law fit residual " + std::to_string(fit.residual) + " exceeds " +
                  std::to_string(cfg.residual_limit) + "; no single contraction rate fits");

  const double band = 1.0 + cfg.bracket;
  size_t good = 0;
  for (size_t i = 0; i < grid.size(); ++i) {
    const double rel = fit.jacobians[i] / (fit.scale * std::pow(grid[i], fit.exponent));
    if (rel <= band && rel >= 1.0 / band)
      good = i + 1;
    else
      break;
  }
  fit.t_min = good > 0 ? grid.front() : 0.0;
  fit.t_max = good > 0 ? grid[good - 1] : 0.0;
  return fit;
}

// ---------------------------------------------------------------------------
// unit-Jacobian ratio
// ---------------------------------------------------------------------------

struct UnitRatioConfig {
  double tol = 1e-6;  // target for | |Jac I| - 1 |
  double edge = 1e-3; // the crossing is bracketed on (edge, 1 - edge)
  int max_iter = 80;
  IntegratorConfig integrator{};
};

// Ratio at which the inverse-geodesic map has unit Jacobian. The returned
// labels are swapped when the crossing lies past 1/2, so r <= 1/2 always.
struct UnitRatio {
  double r = 0.0;
  bool swapped = false;
  Eigen::VectorXd a, b;   // segment endpoints after any swap
  Eigen::VectorXd p_ab;   // unit-time covector a -> b after any swap
  double jac = 0.0;       // |Jac I| at r
};

namespace detail {

// |Jac I_{m(r)}^r(b)| along the segment (a, p_ab): the midpoint at ratio r is
// m(r) = E_a(r p_ab), and the unit covector from m(r) onward to b is (1 - r)
// times the transported momentum.
inline double inverse_jac_along(const SRStructure& s, const Eigen::VectorXd& a,
                                const Eigen::VectorXd& p_ab, double r,
                                const IntegratorConfig& cfg) {
  PhaseState st;
  st.x = a;
  st.p = p_ab;
  PhaseState mid = flow(s, st, r, cfg);
  Eigen::VectorXd q = (1.0 - r) * mid.p;
  return std::abs(inverse_geodesic_jacobian(s, mid.x, q, r, cfg));
}

inline double unit_ratio_bisect(const SRStructure& s, const Eigen::VectorXd& a,
                                const Eigen::VectorXd& p_ab, double lo, double hi, bool lo_above,
                                const UnitRatioConfig& cfg, double* jac_at_r) {
  for (int it = 0; it < cfg.max_iter; ++it) {
    const double r = 0.5 * (lo + hi);
    const double g = inverse_jac_along(s, a, p_ab, r, cfg.integrator);
    if (std::abs(g - 1.0) < cfg.tol) {
      *jac_at_r = g;
      return r;
    }
    if ((g > 1.0) == lo_above)
      lo = r;
    else
      hi = r;
  }
  throw NoConvergence("find_unit_ratio",
                      "bisection exhausted its budget without |Jac I| reaching 1");
}

}  // namespace detail

// Bisection for the ratio r with |Jac I_{m(r)}^r| = 1 along (a, p_ab).
inline UnitRatio find_unit_ratio(const SRStructure& s, const Eigen::VectorXd& a,
                                 const Eigen::VectorXd& p_ab, const UnitRatioConfig& cfg = {}) {
  if (!(cfg.edge > 0.0 && cfg.edge < 0.5))
    throw ConfigError("find_unit_ratio: bracket edge must lie in (0, 1/2)");
  const double lo = cfg.edge, hi = 1.0 - cfg.edge;
  double glo = 0.0, ghi = 0.0;
  try {
    glo = detail::inverse_jac_along(s, a, p_ab, lo, cfg.integrator);
    ghi = detail::inverse_jac_along(s, a, p_ab, hi, cfg.integrator);
  } catch (const LeftChart&) {
    throw NoBracket("a bracket probe left the chart before |Jac I| could cross 1");
  }
  if ((glo - 1.0) * (ghi - 1.0) > 0.0)
    throw NoBracket("|Jac I| = " + std::to_string(glo) + " and " + std::to_string(ghi) +
                    " at the bracket ends; no crossing of 1 in between");

  double jac = 0.0;
  const double r0 = detail::unit_ratio_bisect(s, a, p_ab, lo, hi, glo > 1.0, cfg, &jac);

  PhaseState st;
  st.x = a;
  st.p = p_ab;
  PhaseState end = flow(s, st, 1.0, cfg.integrator);

  UnitRatio out;
  if (r0 <= 0.5) {
    out.r = r0;
    out.jac = jac;
    out.swapped = false;
    out.a = a;
    out.b = end.x;
    out.p_ab = p_ab;
    return out;
  }

  // Crossing past 1/2: hand back the reversed segment, where it sits at 1 - r0.
  out.swapped = true;
  out.a = end.x;
  out.b = a;
  out.p_ab = -end.p;
  const double r1 = 1.0 - r0;
  const double g1 = detail::inverse_jac_along(s, out.a, out.p_ab, r1, cfg.integrator);
  if (std::abs(g1 - 1.0) < cfg.tol) {
    out.r = r1;
    out.jac = g1;
    return out;
  }
  double width = 0.02;
  double plo = r1, phi = r1, gplo = g1, gphi = g1;
  bool bracketed = false;
  for (int k = 0; k < 6 && !bracketed; ++k, width *= 2.0) {
    plo = std::max(lo, r1 - width);
    phi = std::min(hi, r1 + width);
    gplo = detail::inverse_jac_along(s, out.a, out.p_ab, plo, cfg.integrator);
    gphi = detail::inverse_jac_along(s, out.a, out.p_ab, phi, cfg.integrator);
    bracketed = (gplo - 1.0) * (gphi - 1.0) <= 0.0;
  }
  if (!bracketed)
    throw NoBracket("no unit crossing near the reflected ratio after the endpoint swap");
  out.r = detail::unit_ratio_bisect(s, out.a, out.p_ab, plo, phi, gplo > 1.0, cfg, &out.jac);
  return out;
}

// ---------------------------------------------------------------------------
// set construction
// ---------------------------------------------------------------------------

struct SetConfig {
  int samples = 1024;
  std::uint64_t seed = 20260815;
  double chart_margin = 1e-9;  // the ball must sit inside the chart by this much
  IntegratorConfig integrator{};
};

// The set B around the second endpoint is an adapted ball: the image of the
// radius-rho covector ball under the frozen endpoint differential of the
// segment, B = b + shape * B(0, rho). Its inverse image A = I_m^r(B) is
// described by a pushforward sample cloud and a change-of-variables volume
// estimate. Shaping B by the endpoint differential keeps the connecting
// covector of every sampled pair within O(rho) of the frozen one; a round
// chart ball of the same radius forces covector corrections of order
// rho / sigma_min(shape) across the stiff endpoint directions, which on
// strongly anisotropic frames is a two-order-of-magnitude amplification that
// poisons the downstream midpoint bound. When the endpoint differential is an
// isometry (isotropic frames) B is the round ball B(b, rho).
struct SetDescriptors {
  Eigen::VectorXd a, b, m;
  double r = 0.0;
  double rho = 0.0;
  Eigen::MatrixXd shape;  // endpoint differential; B = b + shape * B(0, rho)
  double vol_b = 0.0;     // exact: omega_n rho^n |det shape|
  double vol_a = 0.0;     // vol_b times the mean sampled |Jac I|
  double jac_mean = 0.0;
  double jac_min = 0.0;
  double jac_max = 0.0;
  double diameter = 0.0;  // chart-coordinate diameter of the two clouds
  std::vector<Eigen::VectorXd> a_cloud;  // I_m^r of the ball samples
  std::vector<Eigen::VectorXd> b_cloud;  // the ball samples themselves
};

// Samples B uniformly, maps every sample through the inverse-geodesic map
// with Newton-corrected covectors, and integrates |Jac I| for the volume of
// the inverse image. Every sampled pair must pass the submersion check.
inline SetDescriptors build_sets(const SRStructure& s, const Eigen::VectorXd& a,
                                 const Eigen::VectorXd& b, const Eigen::VectorXd& m,
                                 const Eigen::VectorXd& p_ab, const Eigen::VectorXd& qbar,
                                 double r, double rho, const SetConfig& cfg = {}) {
  const int n = s.dim();
  if (!(r > 0.0 && r < 1.0)) throw InvalidRatio("set construction needs a ratio in (0, 1)");
  if (!(rho > 0.0)) throw ConfigError("build_sets: ball radius must be positive");
  if (cfg.samples < 16) throw ConfigError("build_sets: need at least 16 samples");

  SetDescriptors sd;
  sd.a = a;
  sd.b = b;
  sd.m = m;
  sd.r = r;
  sd.rho = rho;
  // The shape is frozen at a fine step so that independent stages sharing the
  // segment agree on the set bit for bit.
  IntegratorConfig fine = cfg.integrator;
  fine.step_size = std::min(fine.step_size, 1e-3);
  sd.shape = exp_differential(s, a, p_ab, 1.0, fine);
  {
    Eigen::JacobiSVD<Eigen::MatrixXd> svw(sd.shape);
    if (!(svw.singularValues()(n - 1) > 1e-12 * svw.singularValues()(0)))
      throw SmoothnessLost("endpoint differential too singular to shape the ball");
  }
  for (int i = 0; i < n; ++i) {
    const double reach = rho * sd.shape.row(i).norm();
    const auto& bounds = s.chart_bounds()[static_cast<size_t>(i)];
    if (b(i) - reach < bounds[0] + cfg.chart_margin || b(i) + reach > bounds[1] - cfg.chart_margin)
      throw ChartOverflow("ball of radius " + std::to_string(rho) +
                          " does not fit inside the chart around the endpoint");
  }

  const double tau_r = r / (1.0 - r);
  Eigen::MatrixXd Jm = exp_differential(s, m, qbar, 1.0, cfg.integrator);
  Eigen::PartialPivLU<Eigen::MatrixXd> lum(Jm);

  sd.vol_b = unit_ball_volume(n) * std::pow(rho, n) * std::abs(sd.shape.determinant());
  sd.a_cloud.reserve(static_cast<size_t>(cfg.samples));
  sd.b_cloud.reserve(static_cast<size_t>(cfg.samples));

  Rng rng = sub_rng(cfg.seed, 0x5e75u);
  std::vector<double> buf(static_cast<size_t>(n));
  Eigen::VectorXd u(n);
  double jsum = 0.0;
  double jmin = std::numeric_limits<double>::infinity(), jmax = 0.0;
  for (int i = 0; i < cfg.samples; ++i) {
    rng.unit_ball(n, buf.data());
    for (int j = 0; j < n; ++j) u(j) = rho * buf[static_cast<size_t>(j)];
    Eigen::VectorXd q = (b + sd.shape * u).eval();
    try {
      Eigen::VectorXd guess = qbar + lum.solve((q - b).eval());
      Eigen::VectorXd cov = shoot(s, m, q, guess, cfg.integrator);

      PhaseState fwd;
      fwd.x = m;
      fwd.p = cov;
      fwd = flow(s, fwd, 1.0, cfg.integrator, Sensitivity::yes);
      Eigen::MatrixXd Dfwd = fwd.sensitivity->block(0, n, n, n);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(Dfwd);
      if (svd.singularValues()(n - 1) <= kSubmersionRelTol * svd.singularValues()(0))
        throw SmoothnessLost("sample " + std::to_string(i) +
                             " failed the submersion certificate inside the ball");

      PhaseState back;
      back.x = m;
      back.p = (-tau_r * cov).eval();
      back = flow(s, back, 1.0, cfg.integrator, Sensitivity::yes);
      Eigen::MatrixXd Dback = back.sensitivity->block(0, n, n, n);
      const double jac =
          std::abs(std::pow(tau_r, n) * Dback.determinant() / Dfwd.determinant());

      jsum += jac;
      jmin = std::min(jmin, jac);
      jmax = std::max(jmax, jac);
      sd.a_cloud.push_back(back.x);
      sd.b_cloud.push_back(q);
    } catch (const LeftChart&) {
      throw ChartOverflow("a sampled inverse image left the chart; shrink the ball");
    } catch (const NoConvergence& e) {
      throw SmoothnessLost(std::string("covector recovery failed inside the ball: ") + e.what());
    } catch (const SingularJacobian& e) {
      throw SmoothnessLost(std::string("degenerate endpoint differential inside the ball: ") +
                           e.what());
    }
  }
  sd.jac_mean = jsum / cfg.samples;
  sd.jac_min = jmin;
  sd.jac_max = jmax;
  sd.vol_a = sd.vol_b * sd.jac_mean;

  double d2 = 0.0;
  std::vector<const Eigen::VectorXd*> pts;
  pts.reserve(sd.a_cloud.size() + sd.b_cloud.size() + 2);
  for (const auto& v : sd.a_cloud) pts.push_back(&v);
  for (const auto& v : sd.b_cloud) pts.push_back(&v);
  pts.push_back(&sd.a);
  pts.push_back(&sd.b);
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j)
      d2 = std::max(d2, (*pts[i] - *pts[j]).squaredNorm());
  sd.diameter = std::sqrt(d2);
  return sd;
}

// ---------------------------------------------------------------------------
// midpoint-set volume upper bound
// ---------------------------------------------------------------------------

namespace detail {

// Exact volume of the Minkowski sum of an axis-aligned ellipsoid (semi-axes
// axes_i) and an axis-aligned box (half-widths half_i). Summing a convex body
// with the segment [-h, h] e_i adds a prism of volume 2 h vol(projection
// along axis i); iterating over the box axes leaves a sum over axis subsets,
// with coordinate projections of the ellipsoid (ellipsoids again) under the
// complementary axes. Note the sum is NOT contained in the inflated ellipsoid
// with semi-axes axes_i + half_i, and omega_n prod (axes_i + half_i) is not
// an upper bound for it: diagonal bulges beat the inflated ellipsoid.
inline double ellipsoid_box_volume(const Eigen::VectorXd& axes, const Eigen::VectorXd& half) {
  const int n = static_cast<int>(axes.size());
  double total = 0.0;
  for (std::uint32_t sel = 0; sel < (1u << n); ++sel) {
    double term = 1.0;
    int round_dims = 0;
    for (int i = 0; i < n; ++i) {
      if (sel & (1u << static_cast<unsigned>(i))) {
        term *= 2.0 * half(i);
      } else {
        term *= axes(i);
        ++round_dims;
      }
    }
    if (round_dims > 0) term *= unit_ball_volume(round_dims);
    total += term;
  }
  return total;
}

}  // namespace detail

struct MidsetConfig {
  long samples = 100000;          // pairs per round; rounds double until stable
  int max_doublings = 3;          // extra rounds allowed beyond the first
  double voxel_rel = 0.05;        // voxel side over rho (diagnostic cover)
  double convergence = 0.01;      // relative change of the bound that counts as stable
  int sphere_probes = 512;        // deliberate antipodal boundary probes
  double probe_shrink = 0.99;     // radial factor keeping probes strictly inside the ball
  double envelope_safety = 1.012; // inflation applied to the measured nonlinear slack
  double unknown_limit = 0.01;    // tolerated fraction of unresolved pairs
  int cloud_cap = 4096;           // midpoints kept for reporting
  int threads = 0;                // pair-loop workers; 0 picks the hardware count
  std::uint64_t seed = 20260815;
  // Shared by the pair flows and the per-pair Newton shots; a coarser step
  // keeps the sample budget affordable while position errors stay far below
  // the ball radius.
  IntegratorConfig integrator{1e-2};
};

// Segment data the midset stage works on. a = I_m^r(b) up to solver tolerance.
struct MidsetContext {
  Eigen::VectorXd a, b, m;
  Eigen::VectorXd p_ab;  // unit-time covector a -> b
  Eigen::VectorXd qbar;  // unit-time covector m -> b
  double r = 0.5;
  double rho = 0.0;
};

struct MidsetEstimate {
  double vol_upper = 0.0;        // usable upper estimate (see below)
  double vol_envelope = 0.0;     // linearized envelope bound
  double vol_voxel = 0.0;        // voxel cover: hit cells plus one boundary layer
  double vol_lower = 0.0;        // hit cells only; sample-only lower indication
  bool voxel_converged = false;  // voxel cover stopped growing between rounds
  double envelope_slack = 0.0;   // worst deviation from the frozen linear model (before safety)
  Eigen::VectorXd sigma;         // singular values of the frozen pair-to-midpoint operator
  Eigen::VectorXd slack_axes;    // per principal axis: half-width of the remainder extent
  double voxel_size = 0.0;       // voxel edge of the diagnostic cover
  double det_d2 = 0.0;           // |det| of the frozen midpoint differential
  long samples_used = 0;
  long accepted = 0;
  long unknowns = 0;
  int rounds = 0;
  std::vector<Eigen::VectorXd> cloud;  // midpoint subsample for reporting
};

// Upper estimate for the volume of M^r(A, B) = {M^r(I_m^r(p), q) : p, q in B}
// for the adapted ball B = b + W B(0, rho) with W the frozen endpoint
// differential (recomputed here exactly as build_sets freezes it). Pairs are
// drawn in the parameter ball: p = b + W dv, q = b + W dw with |dv|, |dw| <=
// rho, and both endpoints are reached exactly by Newton shots seeded from the
// frozen linearization, so every resolved pair is a true pair of B x B and
// only solver failures remain unknown (they inflate the bound). Composing
// the midpoint differential D2 = G W^{-1} with the ball shape W collapses the
// frozen model to
//     F - m ~ G (dw - dv),    G = endpoint differential at the midpoint time,
// so the pair displacement parameter ranges over the exactly known ball
// B(0, 2 rho) and the covector correction of the second shot is dw - dv
// itself; this is what keeps the shots well conditioned at every radius on
// the schedule. The usable bound is the exact volume of
//     G B(0, 2 rho)  (+)  R     (Minkowski sum),
// where R is the axis-aligned box, in the principal frame of G, of the
// measured extents of the remainder xi = U^T (F - m - G (dw - dv)) inflated
// by the safety factor. The per-axis signed split matters: the remainder is
// one-sided and concentrates along the middle principal axes, so charging it
// isotropically against the smallest axis would inflate the bound by orders
// of magnitude. The bound is monotone non-decreasing in the sample count and
// exact up to roundoff whenever the midpoint map is affine. A voxel cover of
// the sampled cloud (principal axes, isotropic cells, hit cells plus one
// boundary layer) and its hit-only lower indication are reported as
// diagnostics. Pairs run on chunk-indexed draw streams merged in chunk
// order, so results do not depend on the worker count.
inline MidsetEstimate midset_volume_upper(const SRStructure& s, const MidsetContext& ctx,
                                          const MidsetConfig& cfg = {}) {
  const int n = s.dim();
  const double r = ctx.r, rho = ctx.rho;
  if (!(r > 0.0 && r < 1.0)) throw InvalidRatio("midset ratio must lie in (0, 1)");
  if (!(rho > 0.0)) throw ConfigError("midset_volume_upper: ball radius must be positive");
  if (cfg.samples < 1000) throw ConfigError("midset_volume_upper: need at least 1000 samples");
  const double tau_r = r / (1.0 - r);

  IntegratorConfig fine = cfg.integrator;
  fine.step_size = std::min(fine.step_size, 1e-3);
  const Eigen::MatrixXd W = exp_differential(s, ctx.a, ctx.p_ab, 1.0, fine);
  const Eigen::MatrixXd G = exp_differential(s, ctx.a, ctx.p_ab, r, fine);
  {
    Eigen::JacobiSVD<Eigen::MatrixXd> svw(W);
    if (!(svw.singularValues()(n - 1) > 1e-12 * svw.singularValues()(0)))
      throw SmoothnessLost("endpoint differential too singular to shape the ball");
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(G, Eigen::ComputeFullU);
  Eigen::VectorXd sig = svd.singularValues();
  if (!(sig(n - 1) > 1e-12 * sig(0)))
    throw SmoothnessLost("midpoint response is singular along the segment");
  Eigen::MatrixXd Ut = svd.matrixU().transpose();

  Eigen::MatrixXd Jm = exp_differential(s, ctx.m, ctx.qbar, 1.0, fine);
  Eigen::PartialPivLU<Eigen::MatrixXd> lum(Jm);

  // Diagnostic voxel cover: isotropic cells in principal coordinates, 12-bit
  // signed cell indices packed into one word (supports n <= 5; skipped above).
  const double h = cfg.voxel_rel * rho;
  if (!(h > 0.0)) throw ConfigError("midset_volume_upper: voxel size must be positive");
  const bool voxels_on = n <= 5;
  const double vox_vol = std::pow(h, n);

  MidsetEstimate est;
  est.det_d2 = std::abs(G.determinant() / W.determinant());
  est.voxel_size = h;

  std::unordered_set<std::uint64_t> hits;
  Eigen::VectorXd rem_lo = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd rem_hi = Eigen::VectorXd::Zero(n);

  auto key_of = [&](const Eigen::VectorXd& zeta, bool* ok) -> std::uint64_t {
    std::uint64_t key = 0;
    for (int i = 0; i < n; ++i) {
      const long idx = static_cast<long>(std::floor(zeta(i) / h)) + 2048;
      if (idx < 1 || idx > 4094) {  // leave room for the +-1 layer
        *ok = false;
        return 0;
      }
      key = (key << 12) | static_cast<std::uint64_t>(idx);
    }
    *ok = true;
    return key;
  };

  // Per-chunk accumulator; chunks are merged in index order so results do
  // not depend on the thread schedule.
  struct ChunkOut {
    Eigen::VectorXd lo, hi;
    std::vector<std::uint64_t> keys;
    std::vector<Eigen::VectorXd> cloud;
    long attempted = 0;
    long resolved = 0;
    long unknowns = 0;
  };
  auto fresh = [n]() {
    ChunkOut out;
    out.lo = Eigen::VectorXd::Zero(n);
    out.hi = Eigen::VectorXd::Zero(n);
    return out;
  };

  auto run_pair = [&](const Eigen::VectorXd& dv, const Eigen::VectorXd& dw, ChunkOut& out) {
    ++out.attempted;
    try {
      // First endpoint p = b + W dv, reached exactly from the midpoint.
      Eigen::VectorXd shift = (W * dv).eval();
      Eigen::VectorXd cov_p =
          shoot(s, ctx.m, (ctx.b + shift).eval(), (ctx.qbar + lum.solve(shift)).eval(),
                cfg.integrator);

      // Inverse image of p and the unit covector from it back to p.
      PhaseState back;
      back.x = ctx.m;
      back.p = (-tau_r * cov_p).eval();
      back = flow(s, back, 1.0, cfg.integrator);
      Eigen::VectorXd c = (-back.p / r).eval();

      // Second endpoint q = b + W dw; under the frozen model the covector
      // correction for the shot is exactly dw - dv.
      Eigen::VectorXd cov_q =
          shoot(s, back.x, (ctx.b + W * dw).eval(), (c + dw - dv).eval(), cfg.integrator);

      PhaseState mid;
      mid.x = back.x;
      mid.p = cov_q;
      mid = flow(s, mid, r, cfg.integrator);

      ++out.resolved;
      Eigen::VectorXd xi = Ut * (mid.x - ctx.m - G * (dw - dv));
      for (int i = 0; i < n; ++i) {
        out.lo(i) = std::min(out.lo(i), xi(i));
        out.hi(i) = std::max(out.hi(i), xi(i));
      }

      if (voxels_on) {
        bool ok = false;
        const std::uint64_t key = key_of(Ut * (mid.x - ctx.m), &ok);
        if (ok) out.keys.push_back(key);  // overflow only starves the diagnostic
      }
      if (static_cast<int>(out.cloud.size()) < cfg.cloud_cap) out.cloud.push_back(mid.x);
    } catch (const Error&) {
      ++out.unknowns;
    }
  };

  auto merge = [&](const ChunkOut& out) {
    est.samples_used += out.attempted;
    est.accepted += out.resolved;
    est.unknowns += out.unknowns;
    for (int i = 0; i < n; ++i) {
      rem_lo(i) = std::min(rem_lo(i), out.lo(i));
      rem_hi(i) = std::max(rem_hi(i), out.hi(i));
    }
    for (std::uint64_t k : out.keys) hits.insert(k);
    for (const auto& pnt : out.cloud)
      if (static_cast<int>(est.cloud.size()) < cfg.cloud_cap) est.cloud.push_back(pnt);
  };

  auto cover_count = [&]() -> long {
    std::unordered_set<std::uint64_t> cover;
    cover.reserve(hits.size() * (n <= 3 ? 32 : 128));
    std::array<int, kMaxDim> idx{};
    std::array<int, kMaxDim> off{};
    for (std::uint64_t key : hits) {
      std::uint64_t k = key;
      for (int i = n - 1; i >= 0; --i) {
        idx[static_cast<size_t>(i)] = static_cast<int>(k & 0xfffu);
        k >>= 12;
      }
      for (int i = 0; i < n; ++i) off[static_cast<size_t>(i)] = -1;
      while (true) {
        std::uint64_t kk = 0;
        for (int i = 0; i < n; ++i)
          kk = (kk << 12) |
               static_cast<std::uint64_t>(idx[static_cast<size_t>(i)] + off[static_cast<size_t>(i)]);
        cover.insert(kk);
        int j = 0;
        while (j < n && off[static_cast<size_t>(j)] == 1) {
          off[static_cast<size_t>(j)] = -1;
          ++j;
        }
        if (j == n) break;
        ++off[static_cast<size_t>(j)];
      }
    }
    return static_cast<long>(cover.size());
  };

  // Deliberate antipodal pairs dv = -s rho u, dw = +s rho u: they pin the
  // remainder at the extremes of the displacement ball that random volume
  // sampling rarely hits.
  {
    const auto dirs = sphere_sample(n, cfg.sphere_probes);
    ChunkOut out = fresh();
    Eigen::VectorXd dv(n), dw(n);
    for (const auto& d : dirs) {
      for (int i = 0; i < n; ++i) {
        dw(i) = rho * cfg.probe_shrink * d[static_cast<size_t>(i)];
        dv(i) = -dw(i);
      }
      run_pair(dv, dw, out);
    }
    merge(out);
  }

  const int nthreads = cfg.threads > 0 ? cfg.threads : default_threads();
  constexpr long kChunkPairs = 512;
  long chunk_base = 0;  // global chunk index; fixes each chunk's draw stream
  long round = cfg.samples;
  double prev_upper = -1.0;
  long prev_cover = -1;
  while (true) {
    ++est.rounds;
    const long chunks = (round + kChunkPairs - 1) / kChunkPairs;
    std::vector<ChunkOut> outs(static_cast<size_t>(chunks));
    parallel_chunks(static_cast<int>(chunks), nthreads, [&](int c) {
      ChunkOut out = fresh();
      Rng rng = sub_rng(cfg.seed, 0x6d1d5e7u + static_cast<std::uint64_t>(chunk_base + c));
      std::vector<double> buf(static_cast<size_t>(n));
      Eigen::VectorXd dv(n), dw(n);
      const long first = static_cast<long>(c) * kChunkPairs;
      const long count = std::min(kChunkPairs, round - first);
      for (long i = 0; i < count; ++i) {
        rng.unit_ball(n, buf.data());
        for (int j = 0; j < n; ++j) dv(j) = rho * buf[static_cast<size_t>(j)];
        rng.unit_ball(n, buf.data());
        for (int j = 0; j < n; ++j) dw(j) = rho * buf[static_cast<size_t>(j)];
        run_pair(dv, dw, out);
      }
      outs[static_cast<size_t>(c)] = std::move(out);
    });
    for (const auto& out : outs) merge(out);
    chunk_base += chunks;

    if (est.accepted == 0)
      throw SampleBudget("no sampled pair could be resolved into a true pair");
    const double frac_unknown =
        static_cast<double>(est.unknowns) / static_cast<double>(est.accepted);
    if (frac_unknown > cfg.unknown_limit)
      throw SampleBudget("unresolved pair fraction " + std::to_string(frac_unknown) +
                         " exceeds " + std::to_string(cfg.unknown_limit));

    est.sigma = sig;
    est.slack_axes = (0.5 * (rem_hi - rem_lo)).eval();
    est.envelope_slack = est.slack_axes.maxCoeff();
    est.vol_envelope = detail::ellipsoid_box_volume(
        (2.0 * rho * sig).eval(), (cfg.envelope_safety * est.slack_axes).eval());
    const long cover = voxels_on ? cover_count() : 0;
    est.vol_voxel = static_cast<double>(cover) * vox_vol;
    est.vol_lower = static_cast<double>(hits.size()) * vox_vol;
    est.voxel_converged =
        prev_cover > 0 &&
        static_cast<double>(cover - prev_cover) < cfg.convergence * static_cast<double>(prev_cover);
    double upper = est.vol_envelope * (1.0 + frac_unknown);  // unknowns inflate the bound
    est.vol_upper = upper;

    if (prev_upper > 0.0 && std::abs(upper - prev_upper) < cfg.convergence * prev_upper) break;
    prev_upper = upper;
    prev_cover = cover;
    if (est.rounds > cfg.max_doublings)
      throw SampleBudget("midset bound failed to stabilise within the sample budget");
    round *= 2;
  }

  return est;
}

// ---------------------------------------------------------------------------
// end-to-end pipeline
// ---------------------------------------------------------------------------

struct PipelineConfig {
  double epsilon = 0.1;   // total multiplicative slack of the ratio tests
  double radius = 1.0;    // everything must happen inside B(x, radius)
  std::vector<double> curvature_grid = {0.0, -1.0, -10.0};
  std::vector<double> dimension_grid = {1.5, 2.0, 3.0, 5.0, 10.0};
  int covector_samples = 64;
  int fit_points = 14;
  double fit_lo = 1e-3;
  double fit_hi = 0.6;
  int max_shrinks = 4;     // segment halvings until the fits certify the window
  int max_halvings = 10;   // ball-radius halvings until the ratio tests pass
  long scout_samples = 2000;  // screening budget per radius; 0 runs full-budget only
  int set_samples = 1024;
  std::uint64_t seed = 20260815;
  IntegratorConfig flow{2e-3};   // shooting, fits, bisection
  GrowthConfig growth{};         // flag settings for the covector scan
  MidsetConfig midset{};         // midset stage; its integrator may be coarser
};

struct CounterexampleReport {
  std::string structure;
  int dim = 0;
  std::vector<int> growth;    // growth vector at the chosen covector
  int geodesic_dim = 0;       // N
  Eigen::VectorXd x;          // requested centre
  Eigen::VectorXd a, b, m;    // final segment and midpoint
  Eigen::VectorXd p_ab, qbar;
  double segment_length = 0.0;
  int shrinks = 0;
  bool swapped = false;
  double r = 0.0;
  ContractionFit fit_forward, fit_reverse;
  double epsilon = 0.0, eps1 = 0.0, eps2 = 0.0;
  double radius = 0.0;
  double rho = 0.0;
  int halvings = 0;
  SetDescriptors sets;
  MidsetEstimate midset;
  double density_lo = 1.0, density_hi = 1.0;
  double mu_a_low = 0.0, mu_a_high = 0.0;
  double mu_b_low = 0.0, mu_b_high = 0.0;
  double mu_mid_high = 0.0;
  double ratio_mid = 0.0;       // 2^{N-n} mu_mid_high / mu_b_low
  double ratio_sets_low = 0.0;  // bracket for mu(A)/mu(B)
  double ratio_sets_high = 0.0;
  bool ratio_test_passed = false;
  double diameter = 0.0;
  double theta = 0.0;
  struct Margin {
    double curvature = 0.0;
    double dimension = 0.0;
    double value = 0.0;
  };
  std::vector<Margin> margins;
  bool violated = false;  // every margin on the grid is negative
  std::uint64_t seed = 0;
};

// Full search for an interpolation-inequality violation near x: pick an ample
// covector, certify a power-law window on a short segment, find the unit
// ratio, then shrink the ball radius until the volume ratio tests pass, and
// finally score the margin grid with conservative volume brackets.
inline CounterexampleReport run_pipeline(StructurePtr s, const Eigen::VectorXd& x,
                                         const PipelineConfig& cfg = {}) {
  const int n = s->dim();
  if (!(cfg.epsilon > 0.0 && cfg.epsilon < 1.0))
    throw ConfigError("run_pipeline: epsilon must lie in (0, 1)");
  if (!(cfg.radius > 0.0)) throw ConfigError("run_pipeline: radius must be positive");
  if (!s->inside_chart(x.data())) throw ConfigError("run_pipeline: centre is outside the chart");
  const double eps = cfg.epsilon;
  // Split so that (1 + eps1)(1 + eps2) = 1 + eps / 2 exactly.
  const double eps1 = std::sqrt(1.0 + 0.5 * eps) - 1.0;
  const double eps2 = eps1;

  CounterexampleReport rep;
  rep.structure = s->spec().name;
  rep.dim = n;
  rep.x = x;
  rep.epsilon = eps;
  rep.eps1 = eps1;
  rep.eps2 = eps2;
  rep.radius = cfg.radius;
  rep.seed = cfg.seed;

  // Ample covectors with the smallest geodesic dimension among the samples.
  const auto covs = default_covector_samples(n, cfg.covector_samples);
  const int pts = detail::effective_stencil_points(cfg.growth.stencil, cfg.growth.imax);
  const double delta = ((pts - 1) / 2 + 2) * cfg.growth.stencil.spacing;
  struct ScanCandidate {
    Eigen::VectorXd cov;
    std::vector<int> growth;
  };
  int bestN = std::numeric_limits<int>::max();
  std::vector<ScanCandidate> pool;
  int scan_failures = 0;
  for (const auto& cov : covs) {
    try {
      GeodesicSegment seg = make_segment(s, x, cov, -delta, delta, cfg.growth.integrator, 3);
      GrowthData gd = growth_vector(*s, seg, 0.0, cfg.growth);
      if (!gd.ample) continue;
      if (gd.geodesic_dimension < bestN) {
        bestN = gd.geodesic_dimension;
        pool.clear();
      }
      if (gd.geodesic_dimension == bestN) pool.push_back({cov, gd.growth});
    } catch (const Error&) {
      ++scan_failures;
    }
  }
  if (pool.empty())
    throw NoAmpleFound("no ample covector among " + std::to_string(covs.size()) +
                       " samples at the requested centre (" + std::to_string(scan_failures) +
                       " failed outright)");
  const int N = bestN;

  // Among minimal-N candidates prefer the segment whose midpoint response
  // stays closest to linear: run the volume stage's antipodal probe pairs at
  // a trial radius along every principal direction and score the per-axis
  // remainder against the envelope thickness 2 rho sigma_i. With a quadratic
  // remainder the score scales linearly in the radius, so one trial radius
  // ranks the whole schedule. Unrankable candidates keep their scan order.
  size_t picked = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (size_t ci = 0; ci < pool.size(); ++ci) {
    try {
      const Eigen::VectorXd& cov = pool[ci].cov;
      const double sp = std::sqrt(2.0 * hamiltonian_value(*s, x, cov));
      Eigen::VectorXd ph = cov / sp;
      const double ct = s->safe_segment_time(x.data(), ph.data());
      const double ellc = std::min(cfg.radius / 3.0, 0.6 * ct);
      const Eigen::VectorXd pc = (ellc * ph).eval();
      const IntegratorConfig& icfg = cfg.midset.integrator;
      Eigen::MatrixXd Wc = exp_differential(*s, x, pc, 1.0, icfg);
      Eigen::MatrixXd Gc = exp_differential(*s, x, pc, 0.5, icfg);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(Gc, Eigen::ComputeFullU | Eigen::ComputeFullV);
      Eigen::VectorXd sg = svd.singularValues();
      if (!(sg(n - 1) > 1e-12 * sg(0))) continue;
      Eigen::MatrixXd Utc = svd.matrixU().transpose();
      Eigen::VectorXd b_c = exp_map(*s, x, pc, 1.0, icfg);
      PhaseState mc;
      mc.x = x;
      mc.p = pc;
      mc = flow(*s, mc, 0.5, icfg);
      Eigen::VectorXd qbar_c = (0.5 * mc.p).eval();
      Eigen::PartialPivLU<Eigen::MatrixXd> lumc(
          exp_differential(*s, mc.x, qbar_c, 1.0, icfg));
      const double rh = ellc / 40.0;
      double score = 0.0;
      for (int k = 0; k < n; ++k) {
        for (double sgn : {-1.0, 1.0}) {
          Eigen::VectorXd dw = (sgn * rh * svd.matrixV().col(k)).eval();
          Eigen::VectorXd shift = (Wc * dw).eval();
          Eigen::VectorXd cov_p = shoot(*s, mc.x, (b_c - shift).eval(),
                                        (qbar_c - lumc.solve(shift)).eval(), icfg);
          PhaseState back;
          back.x = mc.x;
          back.p = (-cov_p).eval();
          back = flow(*s, back, 1.0, icfg);
          Eigen::VectorXd cq = shoot(*s, back.x, (b_c + shift).eval(),
                                     (-2.0 * back.p + 2.0 * dw).eval(), icfg);
          PhaseState mid;
          mid.x = back.x;
          mid.p = cq;
          mid = flow(*s, mid, 0.5, icfg);
          Eigen::VectorXd xi = Utc * (mid.x - mc.x - 2.0 * (Gc * dw));
          double charge = 0.0;
          for (int i = 0; i < n; ++i) charge += std::abs(xi(i)) / (2.0 * rh * sg(i));
          score = std::max(score, charge);
        }
      }
      if (std::isfinite(score) && score < best_score) {
        best_score = score;
        picked = ci;
      }
    } catch (const Error&) {
    }
  }
  const Eigen::VectorXd bestcov = pool[picked].cov;
  rep.geodesic_dim = N;
  rep.growth = pool[picked].growth;

  // Unit-speed direction; segment short enough to avoid conjugate points and
  // stay well inside B(x, radius).
  const double speed0 = std::sqrt(2.0 * hamiltonian_value(*s, x, bestcov));
  Eigen::VectorXd phat = bestcov / speed0;
  const double conj = s->safe_segment_time(x.data(), phat.data());
  double ell = std::min(cfg.radius / 3.0, 0.6 * conj);

  UnitRatioConfig urcfg;
  urcfg.integrator = cfg.flow;
  FitConfig fitcfg;
  fitcfg.bracket = eps2;
  fitcfg.integrator = cfg.flow;
  const auto grid = log_grid(cfg.fit_lo, cfg.fit_hi, cfg.fit_points);

  UnitRatio ur;
  ContractionFit fit_fwd, fit_rev;
  bool segment_ok = false;
  std::string segment_why = "no attempt ran";
  for (int attempt = 0; attempt <= cfg.max_shrinks; ++attempt) {
    const Eigen::VectorXd pab = (ell * phat).eval();
    try {
      ur = find_unit_ratio(*s, x, pab, urcfg);
      PhaseState st;
      st.x = ur.a;
      st.p = ur.p_ab;
      PhaseState end = flow(*s, st, 1.0, cfg.flow);
      const Eigen::VectorXd pba = (-end.p).eval();
      fit_fwd = contraction_fit(*s, ur.a, ur.p_ab, grid, fitcfg);
      fit_rev = contraction_fit(*s, ur.b, pba, grid, fitcfg);
      auto certified = [&](const ContractionFit& f) {
        return std::abs(f.exponent - N) <= 0.02 * N && f.scale <= 1.0 + eps2 &&
               f.scale >= 1.0 / (1.0 + eps2) && f.t_max >= ur.r;
      };
      if (certified(fit_fwd) && certified(fit_rev)) {
        segment_ok = true;
        break;
      }
      segment_why = "fit exponent, scale, or validity window missed the certified bracket";
    } catch (const PoorFit& e) {
      segment_why = e.what();
    } catch (const NoBracket& e) {
      segment_why = e.what();
    }
    ell *= 0.5;
    ++rep.shrinks;
  }
  if (!segment_ok)
    throw NoConvergence("run_pipeline", "segment shrinking exhausted: " + segment_why);

  rep.swapped = ur.swapped;
  rep.r = ur.r;
  rep.a = ur.a;
  rep.b = ur.b;
  rep.p_ab = ur.p_ab;
  rep.fit_forward = fit_fwd;
  rep.fit_reverse = fit_rev;
  rep.segment_length = std::sqrt(2.0 * hamiltonian_value(*s, ur.a, ur.p_ab));

  PhaseState st0;
  st0.x = ur.a;
  st0.p = ur.p_ab;
  PhaseState midstate = flow(*s, st0, ur.r, cfg.flow);
  const Eigen::VectorXd m = midstate.x;
  const Eigen::VectorXd qbar = ((1.0 - ur.r) * midstate.p).eval();
  rep.m = m;
  rep.qbar = qbar;

  // Ball-radius schedule: halve until the density bracket, both volume ratio
  // tests, and the diameter budget all hold.
  double rho = rep.segment_length / 10.0;
  bool rho_ok = false;
  std::string rho_why = "no attempt ran";
  SetDescriptors sd;
  MidsetEstimate me;

  // Scores one radius: density bracket over the region the sets live in,
  // then the volume ratio tests. Returns the reason a check failed, or empty.
  auto evaluate = [&](const SetDescriptors& sdl, const MidsetEstimate& mel) -> std::string {
    std::vector<std::array<double, 2>> box(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) box[static_cast<size_t>(i)] = {m(i), m(i)};
    auto absorb = [&](const Eigen::VectorXd& pnt) {
      for (int i = 0; i < n; ++i) {
        box[static_cast<size_t>(i)][0] = std::min(box[static_cast<size_t>(i)][0], pnt(i));
        box[static_cast<size_t>(i)][1] = std::max(box[static_cast<size_t>(i)][1], pnt(i));
      }
    };
    for (const auto& pnt : sdl.a_cloud) absorb(pnt);
    for (const auto& pnt : sdl.b_cloud) absorb(pnt);
    for (const auto& pnt : mel.cloud) absorb(pnt);
    absorb(ur.a);
    absorb(ur.b);
    for (int i = 0; i < n; ++i) {
      const auto& cb = s->chart_bounds()[static_cast<size_t>(i)];
      box[static_cast<size_t>(i)][0] = std::max(box[static_cast<size_t>(i)][0] - 0.2 * rho, cb[0]);
      box[static_cast<size_t>(i)][1] = std::min(box[static_cast<size_t>(i)][1] + 0.2 * rho, cb[1]);
    }
    const auto dr = s->density_range(box);
    const double dlo = dr[0], dhi = dr[1];
    if (!(dlo > 0.0)) return "density bound degenerate over the working region";
    if (dhi / dlo > 1.0 + eps1)
      return "density bracket " + std::to_string(dhi / dlo) + " wider than 1 + eps1";
    rep.density_lo = dlo;
    rep.density_hi = dhi;
    rep.mu_a_low = sdl.vol_a * dlo;
    rep.mu_a_high = sdl.vol_a * dhi;
    rep.mu_b_low = sdl.vol_b * dlo;
    rep.mu_b_high = sdl.vol_b * dhi;
    rep.mu_mid_high = mel.vol_upper * dhi;
    rep.ratio_mid = std::exp2(static_cast<double>(N - n)) * rep.mu_mid_high / rep.mu_b_low;
    rep.ratio_sets_low = rep.mu_a_low / rep.mu_b_high;
    rep.ratio_sets_high = rep.mu_a_high / rep.mu_b_low;
    const bool sets_ok = rep.ratio_sets_low >= 1.0 - eps && rep.ratio_sets_high <= 1.0 + eps;
    const bool mid_ok = rep.ratio_mid <= 1.0 + eps;
    const bool diam_ok = sdl.diameter < cfg.radius;
    if (sets_ok && mid_ok && diam_ok) return {};
    return "ratio tests failed: vol(A)/vol(B) in [" + std::to_string(rep.ratio_sets_low) +
           ", " + std::to_string(rep.ratio_sets_high) + "], scaled midset ratio " +
           std::to_string(rep.ratio_mid) + ", diameter " + std::to_string(sdl.diameter);
  };

  for (int attempt = 0; attempt <= cfg.max_halvings; ++attempt) {
    bool pass = false;
    try {
      SetConfig sc;
      sc.samples = cfg.set_samples;
      sc.seed = cfg.seed + static_cast<std::uint64_t>(attempt);
      sc.integrator = cfg.flow;
      sd = build_sets(*s, ur.a, ur.b, m, ur.p_ab, qbar, ur.r, rho, sc);

      MidsetConfig mc = cfg.midset;
      mc.seed = cfg.seed + 1000 + static_cast<std::uint64_t>(attempt);
      MidsetContext mctx;
      mctx.a = ur.a;
      mctx.b = ur.b;
      mctx.m = m;
      mctx.p_ab = ur.p_ab;
      mctx.qbar = qbar;
      mctx.r = ur.r;
      mctx.rho = rho;

      // The bound is monotone in the sample count and the scout's draws are a
      // prefix of the full run's, so a failed scout at a small budget is
      // conclusive for this radius and skips the expensive run.
      bool scout_ok = true;
      if (cfg.scout_samples > 0 && cfg.scout_samples < mc.samples) {
        MidsetConfig scout = mc;
        scout.samples = std::max<long>(1000, cfg.scout_samples);
        scout.max_doublings = std::min(mc.max_doublings, 1);
        me = midset_volume_upper(*s, mctx, scout);
        const std::string why = evaluate(sd, me);
        if (!why.empty()) {
          scout_ok = false;
          rho_why = "scout screen: " + why;
        }
      }
      if (scout_ok) {
        me = midset_volume_upper(*s, mctx, mc);
        const std::string why = evaluate(sd, me);
        pass = why.empty();
        if (!pass) rho_why = why;
      }
    } catch (const ChartOverflow& e) {
      rho_why = e.what();
    } catch (const SampleBudget& e) {
      rho_why = e.what();
    } catch (const SmoothnessLost& e) {
      rho_why = e.what();
    }
    if (pass) {
      rho_ok = true;
      break;
    }
    rho *= 0.5;
    ++rep.halvings;
  }
  if (!rho_ok)
    throw NoConvergence("run_pipeline", "ball radius schedule exhausted: " + rho_why);

  rep.rho = rho;
  rep.sets = sd;
  rep.midset = me;
  rep.diameter = sd.diameter;
  // Distance bound between the sampled sets: the chart-Euclidean diameter of
  // the clouds, scaled by the structure's declared factor. Overestimation only
  // weakens the violation claim (tau shrinks as theta grows).
  rep.theta = s->distance_factor() * sd.diameter;
  rep.ratio_test_passed = true;

  // Margin grid, scored with the brackets least favourable to a violation.
  VolumeTriple vt;
  vt.vol_a = rep.mu_a_low;
  vt.vol_b = rep.mu_b_low;
  vt.vol_mid = rep.mu_mid_high;
  bool all_negative = true;
  for (double K : cfg.curvature_grid)
    for (double Nn : cfg.dimension_grid) {
      BMParams bp;
      bp.curvature = K;
      bp.dimension = Nn;
      bp.theta = rep.theta;
      bp.t = ur.r;
      CounterexampleReport::Margin mg;
      mg.curvature = K;
      mg.dimension = Nn;
      mg.value = bm_margin(vt, bp);
      all_negative = all_negative && mg.value < 0.0;
      rep.margins.push_back(mg);
    }
  rep.violated = all_negative;
  return rep;
}

}  // namespace srlab
