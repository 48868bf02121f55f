#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracle_heisenberg.hpp"
#include "srlab/geodesy.hpp"
#include "srlab/sampling.hpp"

using namespace srlab;

namespace {

Eigen::VectorXd vec3(double a, double b, double c) {
  Eigen::VectorXd v(3);
  v << a, b, c;
  return v;
}

Eigen::VectorXd rand_vec(Rng& rng, int n, double lo, double hi) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.uniform(lo, hi);
  return v;
}

// Covector of the reversed geodesic at the far endpoint: flow to time one and
// negate the momentum.
Eigen::VectorXd reverse_covector(const SRStructure& s, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& p) {
  PhaseState st;
  st.x = x;
  st.p = p;
  return -flow(s, st, 1.0).p;
}

}  // namespace

TEST_CASE("shooting on the euclidean frame recovers the chord covector") {
  auto eucl = load_structure("euclidean_test");
  auto x = vec3(0.2, -0.3, 0.5);
  auto y = vec3(1.0, 0.7, -0.4);
  Eigen::VectorXd p = shoot(*eucl, x, y, vec3(5.0, -3.0, 2.0));
  CHECK((p - (y - x)).norm() < 1e-10);
  CHECK((exp_map(*eucl, x, p, 1.0) - y).norm() < 1e-10);

  // Coincident endpoints with a zero guess are already converged.
  Eigen::VectorXd z = shoot(*eucl, x, x, vec3(0, 0, 0));
  CHECK(z.norm() == 0.0);
}

TEST_CASE("shooting recovers perturbed covectors on heisenberg") {
  auto heis = load_structure("heisenberg");
  Rng rng(91);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd x = rand_vec(rng, 3, -0.5, 0.5);
    Eigen::VectorXd p = rand_vec(rng, 3, -1.2, 1.2);
    Eigen::VectorXd y = exp_map(*heis, x, p, 1.0);
    Eigen::VectorXd guess = p + rand_vec(rng, 3, -1e-2, 1e-2);
    Eigen::VectorXd found = shoot(*heis, x, y, guess);
    INFO("trial " << trial);
    CHECK((found - p).norm() < 1e-8);
    CHECK((exp_map(*heis, x, found, 1.0) - y).norm() < 1e-10);
  }
}

TEST_CASE("shooting reports a rank-deficient endpoint differential") {
  // At zero momentum the endpoint differential of the heisenberg frame is the
  // frame Gram matrix, which is rank two; Newton must refuse to divide by it.
  auto heis = load_structure("heisenberg");
  CHECK_THROWS_AS(shoot(*heis, vec3(0, 0, 0), vec3(1, 1, 1), vec3(0, 0, 0)), SingularJacobian);
}

TEST_CASE("smooth-pair certificates flag submersions and conjugate covectors") {
  auto eucl = load_structure("euclidean_test");
  auto ce = smooth_pair(*eucl, vec3(0.1, 0.2, 0.3), vec3(1.0, -2.0, 0.5));
  CHECK(ce.submersion);
  CHECK(ce.det == Catch::Approx(1.0).epsilon(1e-10));
  CHECK(ce.sigma_min == Catch::Approx(1.0).epsilon(1e-10));
  CHECK((ce.y - vec3(1.1, -1.8, 0.8)).norm() < 1e-12);

  auto heis = load_structure("heisenberg");
  auto ch = smooth_pair(*heis, vec3(0.1, -0.2, 0.05), vec3(0.8, 0.5, 1.0));
  CHECK(ch.submersion);
  CHECK(ch.det > 0.0);

  // Covector whose first conjugate time is exactly one.
  const double w = 2.0 * 3.14159265358979323846;
  auto conj = smooth_pair(*heis, vec3(0, 0, 0), vec3(1.0, 0.0, w));
  CHECK_FALSE(conj.submersion);
  CHECK(conj.sigma_min < 1e-8 * conj.sigma_max);
}

TEST_CASE("midpoints interpolate and respect the reversal symmetry") {
  auto eucl = load_structure("euclidean_test");
  auto x = vec3(0.5, -0.25, 0.75);
  auto p = vec3(1.0, 2.0, -0.5);
  Eigen::VectorXd m = midpoint(*eucl, x, p, 0.25);
  CHECK((m - (x + 0.25 * p)).norm() < 1e-12);

  // Ratio zero returns the base point bitwise.
  Eigen::VectorXd m0 = midpoint(*eucl, x, p, 0.0);
  CHECK(m0 == x);

  auto heis = load_structure("heisenberg");
  Rng rng(1313);
  for (int trial = 0; trial < 25; ++trial) {
    Eigen::VectorXd a = rand_vec(rng, 3, -0.5, 0.5);
    Eigen::VectorXd pa = rand_vec(rng, 3, -1.2, 1.2);
    double t = rng.uniform(0.1, 0.9);
    Eigen::VectorXd pb = reverse_covector(*heis, a, pa);
    Eigen::VectorXd b = exp_map(*heis, a, pa, 1.0);
    Eigen::VectorXd lhs = midpoint(*heis, b, pb, t);
    Eigen::VectorXd rhs = midpoint(*heis, a, pa, 1.0 - t);
    INFO("trial " << trial);
    CHECK((lhs - rhs).norm() < 1e-8);
  }
}

TEST_CASE("midpoint jacobians reduce to powers of t on the euclidean frame") {
  auto eucl = load_structure("euclidean_test");
  auto x = vec3(0.1, 0.2, -0.3);
  auto p = vec3(0.7, -0.4, 1.1);
  CHECK(midpoint_jacobian(*eucl, x, p, 1.0) == 1.0);
  CHECK(midpoint_jacobian(*eucl, x, p, 0.5) == Catch::Approx(0.125).epsilon(1e-10));
  CHECK(midpoint_jacobian(*eucl, x, p, 0.2) == Catch::Approx(0.008).epsilon(1e-10));
}

TEST_CASE("midpoint jacobians stay positive before the first conjugate time") {
  auto heis = load_structure("heisenberg");
  auto x = vec3(0, 0, 0);
  auto p = vec3(1.0, 0.0, 2.0);  // first conjugate time pi
  CHECK(midpoint_jacobian(*heis, x, p, 1.0) == 1.0);
  for (double t : {0.1, 0.25, 0.5, 0.75, 0.9, 1.0})
    CHECK(midpoint_jacobian(*heis, x, p, t) > 0.0);
}

TEST_CASE("midpoint jacobians match a shooting finite-difference oracle") {
  auto heis = load_structure("heisenberg");
  Rng rng(555);
  for (int trial = 0; trial < 3; ++trial) {
    Eigen::VectorXd x = rand_vec(rng, 3, -0.4, 0.4);
    Eigen::VectorXd p = rand_vec(rng, 3, -1.0, 1.0);
    double t = rng.uniform(0.2, 0.8);
    Eigen::VectorXd y = exp_map(*heis, x, p, 1.0);
    const double h = 1e-5;
    Eigen::MatrixXd J(3, 3);
    for (int c = 0; c < 3; ++c) {
      Eigen::VectorXd yp = y, ym = y;
      yp(c) += h;
      ym(c) -= h;
      Eigen::VectorXd pp = shoot(*heis, x, yp, p);
      Eigen::VectorXd pm = shoot(*heis, x, ym, p);
      J.col(c) = (exp_map(*heis, x, pp, t) - exp_map(*heis, x, pm, t)) / (2 * h);
    }
    double direct = midpoint_jacobian(*heis, x, p, t);
    INFO("trial " << trial << " t " << t);
    CHECK(direct == Catch::Approx(J.determinant()).epsilon(1e-4));
  }
}

TEST_CASE("inverse geodesics extend the segment backwards") {
  auto eucl = load_structure("euclidean_test");
  auto m = vec3(0.3, -0.1, 0.2);
  auto q = vec3(0.5, 0.4, -0.3);  // y = m + q
  Eigen::VectorXd a = inverse_geodesic(*eucl, m, q, 0.25);
  CHECK((a - (m - (0.25 / 0.75) * q)).norm() < 1e-10);

  // Ratio one half is the point reflection through m.
  Eigen::VectorXd refl = inverse_geodesic(*eucl, m, q, 0.5);
  CHECK((refl - (m - q)).norm() < 1e-10);

  CHECK_THROWS_AS(inverse_geodesic(*eucl, m, q, 1.0), InvalidRatio);
  CHECK_THROWS_AS(inverse_geodesic_jacobian(*eucl, m, q, 1.0), InvalidRatio);
}

TEST_CASE("the defining identity of the inverse geodesic holds on heisenberg") {
  auto heis = load_structure("heisenberg");
  Rng rng(2024);
  for (int trial = 0; trial < 15; ++trial) {
    Eigen::VectorXd x = rand_vec(rng, 3, -0.4, 0.4);
    Eigen::VectorXd p = rand_vec(rng, 3, -1.0, 1.0);
    double r = rng.uniform(0.25, 0.75);
    Eigen::VectorXd y = exp_map(*heis, x, p, 1.0);
    PhaseState st;
    st.x = x;
    st.p = p;
    PhaseState midstate = flow(*heis, st, r);
    Eigen::VectorXd m = midstate.x;
    Eigen::VectorXd q = (1.0 - r) * midstate.p;
    REQUIRE((exp_map(*heis, m, q, 1.0) - y).norm() < 1e-9);

    Eigen::VectorXd a = inverse_geodesic(*heis, m, q, r);
    INFO("trial " << trial << " r " << r);
    CHECK((a - x).norm() < 1e-8);

    // Recompute the midpoint from the recovered point: it must return m.
    Eigen::VectorXd pa = shoot(*heis, a, y, p);
    Eigen::VectorXd m2 = midpoint(*heis, a, pa, r);
    CHECK((m2 - m).norm() < 1e-8);
  }
}

TEST_CASE("inverse geodesic jacobians carry the parity sign and unit crossing") {
  auto eucl = load_structure("euclidean_test");
  auto m = vec3(0, 0, 0);
  auto q = vec3(0.4, -0.2, 0.3);
  double j25 = inverse_geodesic_jacobian(*eucl, m, q, 0.25);
  CHECK(j25 == Catch::Approx(-std::pow(1.0 / 3.0, 3)).epsilon(1e-9));
  CHECK(std::abs(inverse_geodesic_jacobian(*eucl, m, q, 0.5)) == Catch::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("the chain-rule identity ties the three jacobians together") {
  auto heis = load_structure("heisenberg");
  Rng rng(31415);
  for (int trial = 0; trial < 15; ++trial) {
    Eigen::VectorXd x = rand_vec(rng, 3, -0.4, 0.4);
    Eigen::VectorXd p = rand_vec(rng, 3, -1.0, 1.0);
    double r = rng.uniform(0.25, 0.75);
    PhaseState st;
    st.x = x;
    st.p = p;
    PhaseState midstate = flow(*heis, st, r);
    PhaseState endstate = flow(*heis, midstate, 1.0 - r);
    Eigen::VectorXd m = midstate.x;
    Eigen::VectorXd q = (1.0 - r) * midstate.p;
    Eigen::VectorXd b = endstate.x;
    Eigen::VectorXd pb = -endstate.p;

    double jac_first_arg = midpoint_jacobian(*heis, b, pb, 1.0 - r);
    double jac_inverse = inverse_geodesic_jacobian(*heis, m, q, r);
    double jac_second_arg = midpoint_jacobian(*heis, x, p, r);
    INFO("trial " << trial << " r " << r);
    CHECK(std::abs(jac_first_arg * jac_inverse) ==
          Catch::Approx(std::abs(jac_second_arg)).epsilon(1e-6));
  }
}

TEST_CASE("inverse geodesic jacobians vanish and blow up at the ratio bounds") {
  auto heis = load_structure("heisenberg");
  auto m = vec3(0.1, -0.1, 0.05);
  auto q = vec3(0.08, 0.0, 0.3);
  CHECK(std::abs(inverse_geodesic_jacobian(*heis, m, q, 0.02)) < 1e-3);
  CHECK(std::abs(inverse_geodesic_jacobian(*heis, m, q, 0.9)) > 1e2);
}

TEST_CASE("geodesic segments cache their speed and trajectory") {
  auto heis = load_structure("heisenberg");
  auto x = vec3(0.2, -0.3, 0.1);
  auto p = vec3(0.6, 0.8, 0.9);
  GeodesicSegment seg = make_segment(heis, x, p, 0.0, 1.0, {}, 21);
  REQUIRE(seg.samples.size() == 21);
  CHECK(seg.speed == Catch::Approx(std::sqrt(2.0 * hamiltonian_value(*heis, x, p))));
  CHECK((seg.samples.front().x - x).norm() == 0.0);
  CHECK((seg.samples.back().x - exp_map(*heis, x, p, 1.0)).norm() < 1e-12);

  // Planar projections of horizontal curves move at exactly the segment
  // speed, so planar chords are bounded by v |t - s| and nearly achieve it on
  // short pieces.
  for (size_t i = 0; i + 1 < seg.samples.size(); ++i) {
    const auto& s0 = seg.samples[i];
    const auto& s1 = seg.samples[i + 1];
    double chord =
        std::hypot(s1.x(0) - s0.x(0), s1.x(1) - s0.x(1));
    double arc = seg.speed * (s1.t - s0.t);
    CHECK(chord <= arc + 1e-9);
    CHECK(chord >= 0.95 * arc);
  }

  const auto& near = seg.nearest_sample(0.52);
  CHECK(near.t == Catch::Approx(0.5));
}
