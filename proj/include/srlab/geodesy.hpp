#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "srlab/errors.hpp"
#include "srlab/hamiltonian.hpp"
#include "srlab/structures.hpp"

namespace srlab {

inline constexpr double kShootTol = 1e-10;       // endpoint residual
inline constexpr int kShootMaxIter = 50;
inline constexpr double kSingularRelTol = 1e-12; // Newton matrix rank guard
inline constexpr double kSubmersionRelTol = 1e-8;

// One normal geodesic restricted to a parameter interval, with its speed and
// a uniform grid of cached points. The curve is s |-> E_x(s p).
struct GeodesicSegment {
  StructurePtr structure;
  Eigen::VectorXd x;  // base point, gamma(0)
  Eigen::VectorXd p;  // unit-time covector
  double t0 = 0.0;
  double t1 = 1.0;
  double speed = 0.0;  // sqrt(2 H(x, p)), constant along the trajectory
  std::vector<TrajectorySample> samples;

  // Nearest cached sample at parameter s (grid resolution is the cache's).
  const TrajectorySample& nearest_sample(double s) const {
    double span = samples.back().t - samples.front().t;
    double rel = span == 0.0 ? 0.0 : (s - samples.front().t) / span;
    long i = std::lround(rel * static_cast<double>(samples.size() - 1));
    i = std::max(0L, std::min(i, static_cast<long>(samples.size()) - 1));
    return samples[static_cast<size_t>(i)];
  }
};

inline GeodesicSegment make_segment(StructurePtr s, const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& p, double t0, double t1,
                                    const IntegratorConfig& cfg = {}, int sample_count = 33) {
  GeodesicSegment seg;
  seg.structure = s;
  seg.x = x;
  seg.p = p;
  seg.t0 = t0;
  seg.t1 = t1;
  seg.speed = std::sqrt(2.0 * hamiltonian_value(*s, x, p));
  seg.samples = sample_trajectory(*s, x, p, t0, t1, sample_count, cfg);
  return seg;
}

// Evidence that (x, y) is a pair the exponential map inverts cleanly:
// E_x(p) = y with D_p E_x(p) far from singular.
struct SmoothPairCertificate {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd p;
  double det = 0.0;        // det D_p E_x(p)
  double sigma_min = 0.0;  // smallest singular value of D_p E_x(p)
  double sigma_max = 0.0;
  bool submersion = false;
};

inline SmoothPairCertificate smooth_pair(const SRStructure& s, const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& p,
                                         const IntegratorConfig& cfg = {}) {
  SmoothPairCertificate cert;
  cert.x = x;
  cert.p = p;
  PhaseState st;
  st.x = x;
  st.p = p;
  PhaseState end = flow(s, st, 1.0, cfg, Sensitivity::yes);
  cert.y = end.x;
  const int n = s.dim();
  Eigen::MatrixXd D = end.sensitivity->block(0, n, n, n);
  cert.det = D.determinant();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(D);
  cert.sigma_min = svd.singularValues()(n - 1);
  cert.sigma_max = svd.singularValues()(0);
  cert.submersion = cert.sigma_min > kSubmersionRelTol * cert.sigma_max;
  return cert;
}

// Numerical inverse of E_x near a known covector: damped Newton with Armijo
// backtracking on the endpoint residual. Trial points that wander off the
// chart just shrink the step.
inline Eigen::VectorXd shoot(const SRStructure& s, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y, const Eigen::VectorXd& p_guess,
                             const IntegratorConfig& cfg = {}) {
  const int n = s.dim();
  Eigen::VectorXd p = p_guess;
  auto residual = [&](const Eigen::VectorXd& pp) { return (exp_map(s, x, pp, 1.0, cfg) - y).eval(); };
  Eigen::VectorXd r = residual(p);
  double fr = r.norm();
  for (int iter = 0; iter < kShootMaxIter; ++iter) {
    if (fr < kShootTol) return p;
    Eigen::MatrixXd J = exp_differential(s, x, p, 1.0, cfg);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(J, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.singularValues()(n - 1) <= kSingularRelTol * svd.singularValues()(0))
      throw SingularJacobian("endpoint differential is rank-deficient at a shooting iterate");
    Eigen::VectorXd delta = svd.solve(-r);
    double lambda = 1.0;
    bool accepted = false;
    for (int back = 0; back < 30; ++back) {
      Eigen::VectorXd trial = p + lambda * delta;
      Eigen::VectorXd rtrial;
      try {
        rtrial = residual(trial);
      } catch (const LeftChart&) {
        lambda *= 0.5;
        continue;
      }
      double ftrial = rtrial.norm();
      if (ftrial <= (1.0 - 1e-4 * lambda) * fr) {
        p = trial;
        r = rtrial;
        fr = ftrial;
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!accepted)
      throw NoConvergence("shoot", "backtracking failed to reduce the endpoint residual");
  }
  if (fr < kShootTol) return p;
  std::ostringstream os;
  os << "endpoint residual " << fr << " after " << kShootMaxIter << " iterations";
  throw NoConvergence("shoot", os.str());
}

// M^t_{x,.}(y) for y = E_x(p): the point t of the way along the geodesic.
inline Eigen::VectorXd midpoint(const SRStructure& s, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& p, double t,
                                const IntegratorConfig& cfg = {}) {
  return exp_map(s, x, p, t, cfg);
}

// Jacobian determinant of y |-> M^t_{x,.}(y) at y = E_x(p). Equals
// det[t D E_x(tp)] / det[D E_x(p)]; both factors come from one trajectory
// pass (0 -> t -> 1) so t = 1 gives exactly one.
inline double midpoint_jacobian(const SRStructure& s, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& p, double t,
                                const IntegratorConfig& cfg = {}) {
  const int n = s.dim();
  PhaseState st;
  st.x = x;
  st.p = p;
  PhaseState mid = flow(s, st, t, cfg, Sensitivity::yes);
  double det_t = mid.sensitivity->block(0, n, n, n).determinant();
  PhaseState end = flow(s, mid, 1.0 - t, cfg, Sensitivity::yes);
  Eigen::MatrixXd D1 = end.sensitivity->block(0, n, n, n);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(D1);
  if (svd.singularValues()(n - 1) <= kSingularRelTol * svd.singularValues()(0))
    throw SingularJacobian("endpoint differential is singular; midpoint map has no Jacobian");
  return det_t / D1.determinant();
}

// I_m^t(y) = E_m(-[t/(1-t)] q) for y = E_m(q): the point from which m is the
// ratio-t midpoint toward y. Integrated as a unit-time flow of the scaled
// covector so the step count stays bounded as t -> 1.
inline Eigen::VectorXd inverse_geodesic(const SRStructure& s, const Eigen::VectorXd& m,
                                        const Eigen::VectorXd& q, double t,
                                        const IntegratorConfig& cfg = {}) {
  if (t == 1.0 || std::abs(1.0 - t) < 1e-12)
    throw InvalidRatio("ratio 1 sends the inverse geodesic to infinity");
  const double tau = t / (1.0 - t);
  return exp_map(s, m, (-tau * q).eval(), 1.0, cfg);
}

// Jacobian determinant of y |-> I_m^t(y) at y = E_m(q):
// (-1)^n tau^n det[D E_m(-tau q)] / det[D E_m(q)], tau = t/(1-t).
inline double inverse_geodesic_jacobian(const SRStructure& s, const Eigen::VectorXd& m,
                                        const Eigen::VectorXd& q, double t,
                                        const IntegratorConfig& cfg = {}) {
  if (t == 1.0 || std::abs(1.0 - t) < 1e-12)
    throw InvalidRatio("ratio 1 sends the inverse geodesic to infinity");
  const int n = s.dim();
  const double tau = t / (1.0 - t);
  Eigen::MatrixXd Dback = exp_differential(s, m, (-tau * q).eval(), 1.0, cfg);
  Eigen::MatrixXd Dfwd = exp_differential(s, m, q, 1.0, cfg);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Dfwd);
  if (svd.singularValues()(n - 1) <= kSingularRelTol * svd.singularValues()(0))
    throw SingularJacobian("endpoint differential is singular; inverse geodesic has no Jacobian");
  double sign = (n % 2 == 0) ? 1.0 : -1.0;
  return sign * std::pow(tau, n) * Dback.determinant() / Dfwd.determinant();
}

}  // namespace srlab
