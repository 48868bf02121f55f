#pragma once

// Closed-form geodesics of the Heisenberg frame X1 = (1,0,-y/2),
// X2 = (0,1,x/2), derived independently of the library's integrator so the
// two can check each other. The normal extremal controls rotate at rate
// w = p_z; the planar projection is a circular arc and the vertical
// coordinate is the swept area. Arbitrary start points are handled through
// the group translation that makes the frame left-invariant.

#include <cmath>
#include <limits>

namespace oracle {

struct HeisPoint {
  double x, y, z;
};

struct HeisCovector {
  double px, py, pz;
};

// wt - sin(wt), stable for small arguments.
inline double wt_minus_sin(double wt) {
  if (std::abs(wt) < 1e-3) {
    double s = wt * wt;
    return wt * s * (1.0 / 6.0 - s / 120.0 + s * s / 5040.0);
  }
  return wt - std::sin(wt);
}

// Endpoint of the geodesic from (x0, p0) after time t (unit-time covector
// convention: exp(x0, p0, t) flows the Hamiltonian field for duration t).
inline HeisPoint exp_map(const HeisPoint& g0, const HeisCovector& p0, double t) {
  const double w = p0.pz;
  const double u1 = p0.px - w * g0.y / 2.0;
  const double u2 = p0.py + w * g0.x / 2.0;
  double xi, eta, zc;
  if (w == 0.0) {
    xi = u1 * t;
    eta = u2 * t;
    zc = 0.0;
  } else {
    const double swt = std::sin(w * t);
    const double vers = 2.0 * std::sin(w * t / 2.0) * std::sin(w * t / 2.0);  // 1 - cos(wt)
    // (u1 + i u2) * (sin(wt) + i (1 - cos(wt))) / w
    xi = (u1 * swt - u2 * vers) / w;
    eta = (u1 * vers + u2 * swt) / w;
    zc = (u1 * u1 + u2 * u2) / (2.0 * w * w) * wt_minus_sin(w * t);
  }
  HeisPoint out;
  out.x = g0.x + xi;
  out.y = g0.y + eta;
  out.z = g0.z + zc + (g0.x * eta - g0.y * xi) / 2.0;
  return out;
}

// Covector along the same geodesic: controls rotate, p_z is constant, and
// the horizontal momenta follow from u_i = <p, X_i>.
inline HeisCovector covector_at(const HeisPoint& g0, const HeisCovector& p0, double t) {
  const double w = p0.pz;
  const double u1 = p0.px - w * g0.y / 2.0;
  const double u2 = p0.py + w * g0.x / 2.0;
  const double cw = std::cos(w * t), sw = std::sin(w * t);
  const double u1t = u1 * cw - u2 * sw;
  const double u2t = u1 * sw + u2 * cw;
  HeisPoint gt = exp_map(g0, p0, t);
  HeisCovector out;
  out.px = u1t + w * gt.y / 2.0;
  out.py = u2t - w * gt.x / 2.0;
  out.pz = w;
  return out;
}

// First conjugate time of the unit-time-parametrised geodesic with covector
// p: the planar arc closes after one full turn of the controls.
inline double first_conjugate_time(const HeisCovector& p) {
  const double w = std::abs(p.pz);
  if (w == 0.0) return std::numeric_limits<double>::infinity();
  return 2.0 * 3.14159265358979323846264338327950288 / w;
}

}  // namespace oracle
