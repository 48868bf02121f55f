#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "srlab/flag.hpp"

using namespace srlab;

namespace {

Eigen::VectorXd vecn(std::initializer_list<double> vals) {
  Eigen::VectorXd v(static_cast<int>(vals.size()));
  int i = 0;
  for (double x : vals) v(i++) = x;
  return v;
}

// Controls of the trajectory at its start: u_i = <p, X_i(x)>.
std::vector<double> controls_at(const SRStructure& s, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& p) {
  Eigen::MatrixXd F = s.frame_matrix(x.data());
  Eigen::VectorXd u = F.transpose() * p;
  return std::vector<double>(u.data(), u.data() + u.size());
}

// Frame field combination sum_i u_i X_i with the controls frozen, as a
// symbolic field. The first curve derivative of the pulled-back frame equals
// the bracket with this field.
PolyField frozen_control_field(const SRStructure& s, const std::vector<double>& u) {
  const int n = s.dim();
  PolyField f(n);
  for (int r = 0; r < n; ++r) {
    Polynomial acc(n);
    for (int i = 0; i < s.rank(); ++i)
      acc = acc + s.fields()[static_cast<size_t>(i)].comp[static_cast<size_t>(r)].scaled(
                      u[static_cast<size_t>(i)]);
    f.comp[static_cast<size_t>(r)] = acc;
  }
  return f;
}

}  // namespace

TEST_CASE("stencil weights reproduce the classic central difference tables") {
  const double h = 0.1;
  auto w3 = detail::fornberg_weights(0.0, {-h, 0.0, h}, 2);
  CHECK(w3[0][1] == Catch::Approx(-1.0 / (2 * h)));
  CHECK(w3[1][1] == Catch::Approx(0.0).margin(1e-14));
  CHECK(w3[2][1] == Catch::Approx(1.0 / (2 * h)));
  CHECK(w3[0][2] == Catch::Approx(1.0 / (h * h)));
  CHECK(w3[1][2] == Catch::Approx(-2.0 / (h * h)));
  CHECK(w3[2][2] == Catch::Approx(1.0 / (h * h)));

  auto w5 = detail::fornberg_weights(0.0, {-2 * h, -h, 0.0, h, 2 * h}, 1);
  CHECK(w5[0][1] == Catch::Approx(1.0 / (12 * h)));
  CHECK(w5[1][1] == Catch::Approx(-8.0 / (12 * h)));
  CHECK(w5[2][1] == Catch::Approx(0.0).margin(1e-13));
  CHECK(w5[3][1] == Catch::Approx(8.0 / (12 * h)));
  CHECK(w5[4][1] == Catch::Approx(-1.0 / (12 * h)));
}

TEST_CASE("the zeroth flag level is the frame itself") {
  auto heis = load_structure("heisenberg");
  auto x = vecn({0.2, -0.3, 0.1});
  auto p = vecn({0.8, 0.4, 1.1});
  GeodesicSegment seg = make_segment(heis, x, p, -0.05, 0.05);
  FlagBasis fb = flag_basis(*heis, seg, 0.0, 2);
  REQUIRE(fb.levels.size() == 2);
  REQUIRE(fb.levels[0].size() == 2);
  Eigen::MatrixXd F = heis->frame_matrix(x.data());
  CHECK((fb.levels[0][0] - F.col(0)).norm() < 1e-10);
  CHECK((fb.levels[0][1] - F.col(1)).norm() < 1e-10);
}

TEST_CASE("the first flag level matches the symbolic bracket with the control field") {
  for (const char* name : {"heisenberg", "martinet"}) {
    auto s = load_structure(name);
    auto x = vecn({0.3, -0.2, 0.15});
    auto p = vecn({0.9, 0.5, 0.7});
    GeodesicSegment seg = make_segment(s, x, p, -0.05, 0.05);
    FlagBasis fb = flag_basis(*s, seg, 0.0, 2);
    auto u = controls_at(*s, x, p);
    PolyField fu = frozen_control_field(*s, u);
    for (int f = 0; f < s->rank(); ++f) {
      PolyField br = lie_bracket(fu, s->fields()[static_cast<size_t>(f)]);
      Eigen::VectorXd expect(3);
      double buf[3];
      br.eval(x.data(), buf);
      for (int r = 0; r < 3; ++r) expect(r) = buf[r];
      INFO(name << " field " << f);
      CHECK((fb.levels[1][static_cast<size_t>(f)] - expect).norm() < 1e-7);
    }
  }
}

TEST_CASE("heisenberg geodesics have growth (2,3) and dimension five") {
  auto heis = load_structure("heisenberg");
  auto x = vecn({0.1, 0.2, -0.05});
  auto p = vecn({0.7, -0.4, 0.9});
  GeodesicSegment seg = make_segment(heis, x, p, -0.05, 0.05);
  GrowthData g = growth_vector(*heis, seg, 0.0, {});
  CHECK(g.growth == std::vector<int>{2, 3});
  CHECK(g.step == 2);
  CHECK(g.ample);
  CHECK(g.geodesic_dimension == 5);
  CHECK((g.x - x).norm() < 1e-12);
  CHECK((g.p - p).norm() < 1e-12);
}

TEST_CASE("martinet growth depends on which side of the singular surface") {
  auto mart = load_structure("martinet");

  // Off the surface the structure is step two everywhere.
  GeodesicSegment off = make_segment(mart, vecn({0.5, 0.0, 0.0}), vecn({0.7, 0.5, 0.3}),
                                     -0.05, 0.05);
  GrowthData goff = growth_vector(*mart, off, 0.0, {});
  CHECK(goff.growth == std::vector<int>{2, 3});
  CHECK(goff.geodesic_dimension == 5);

  // On the surface the first derivative level degenerates and the flag needs
  // one more order, raising the dimension.
  GeodesicSegment on = make_segment(mart, vecn({0.0, 0.2, 0.1}), vecn({1.0, 0.3, 0.8}),
                                    -0.05, 0.05);
  GrowthData gon = growth_vector(*mart, on, 0.0, {});
  CHECK(gon.growth == std::vector<int>{2, 2, 3});
  CHECK(gon.step == 3);
  CHECK(gon.ample);
  CHECK(gon.geodesic_dimension == 7);
}

TEST_CASE("the corank-one carnot group is ample at step two with dimension n+2") {
  auto carnot = load_structure("corank1_carnot");
  auto x = vecn({0, 0, 0, 0, 0});
  auto p = vecn({0.6, -0.4, 0.5, 0.3, 0.7});
  GeodesicSegment seg = make_segment(carnot, x, p, -0.05, 0.05);
  GrowthData g = growth_vector(*carnot, seg, 0.0, {});
  CHECK(g.growth == std::vector<int>{4, 5});
  CHECK(g.ample);
  CHECK(g.geodesic_dimension == 7);
  CHECK(g.geodesic_dimension == carnot->dim() + 2);
}

TEST_CASE("the euclidean frame saturates immediately") {
  auto eucl = load_structure("euclidean_test");
  GeodesicSegment seg = make_segment(eucl, vecn({0.1, -0.1, 0.2}), vecn({1.0, 0.5, -0.3}),
                                     -0.05, 0.05);
  GrowthData g = growth_vector(*eucl, seg, 0.0, {});
  CHECK(g.growth == std::vector<int>{3});
  CHECK(g.step == 1);
  CHECK(g.geodesic_dimension == 3);
}

TEST_CASE("growth data satisfies the structural inequalities") {
  // k_1 equals the frame rank, ranks never decrease, and the dimension obeys
  // N >= k_1 + 3(n - k_1) with equality exactly at step two.
  struct Case {
    const char* name;
    std::vector<double> x, p;
  };
  for (const auto& c : std::initializer_list<Case>{
           {"heisenberg", {0.1, 0.2, -0.05}, {0.7, -0.4, 0.9}},
           {"martinet", {0.0, 0.2, 0.1}, {1.0, 0.3, 0.8}},
           {"corank1_carnot", {0, 0, 0, 0, 0}, {0.6, -0.4, 0.5, 0.3, 0.7}}}) {
    auto s = load_structure(c.name);
    const int n = s->dim();
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(c.x.data(), n);
    Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(c.p.data(), n);
    GeodesicSegment seg = make_segment(s, x, p, -0.05, 0.05);
    GrowthData g = growth_vector(*s, seg, 0.0, {});
    INFO(c.name);
    REQUIRE(g.ample);
    CHECK(g.growth.front() == s->rank());
    for (size_t i = 1; i < g.growth.size(); ++i) CHECK(g.growth[i] >= g.growth[i - 1]);
    const int r = s->rank();
    CHECK(g.geodesic_dimension >= r + 3 * (n - r));
    CHECK(g.geodesic_dimension >= n + 2);

    // Independent recomputation of the dimension formula from the raw ranks.
    int acc = 0, last = 0;
    for (size_t i = 0; i < g.growth.size(); ++i) {
      acc += (2 * static_cast<int>(i) + 1) * (g.growth[i] - last);
      last = g.growth[i];
    }
    CHECK(acc == g.geodesic_dimension);
  }
}

TEST_CASE("growth vectors are invariant under time reversal") {
  auto mart = load_structure("martinet");
  auto x = vecn({0.0, 0.2, 0.1});
  auto p = vecn({1.0, 0.3, 0.8});
  GeodesicSegment fwd = make_segment(mart, x, p, -0.05, 0.05);
  GeodesicSegment rev = make_segment(mart, x, (-p).eval(), -0.05, 0.05);
  GrowthData gf = growth_vector(*mart, fwd, 0.0, {});
  GrowthData gr = growth_vector(*mart, rev, 0.0, {});
  CHECK(gf.growth == gr.growth);
  CHECK(gf.ample == gr.ample);
  CHECK(gf.geodesic_dimension == gr.geodesic_dimension);
}

TEST_CASE("stencils must stay inside the segment interval") {
  auto heis = load_structure("heisenberg");
  GeodesicSegment seg = make_segment(heis, vecn({0, 0, 0}), vecn({1, 0, 0.5}), 0.0, 1.0);
  CHECK_THROWS_AS(flag_basis(*heis, seg, 0.0, 2), StencilOutOfRange);
  CHECK_NOTHROW(flag_basis(*heis, seg, 0.5, 2));
  CHECK_THROWS_AS(flag_basis(*heis, seg, 0.0, 7), ConfigError);
}

TEST_CASE("capping the order below saturation reports a non-ample flag") {
  auto heis = load_structure("heisenberg");
  GeodesicSegment seg = make_segment(heis, vecn({0, 0, 0}), vecn({1, 0, 0.5}), -0.05, 0.05);
  GrowthConfig cfg;
  cfg.imax = 1;
  GrowthData g = growth_vector(*heis, seg, 0.0, cfg);
  CHECK_FALSE(g.ample);
  CHECK(g.step == 0);
  CHECK(g.geodesic_dimension == -1);
  CHECK(g.growth == std::vector<int>{2});
}

TEST_CASE("sampled geodesic dimensions reproduce the frozen minima") {
  auto heis = load_structure("heisenberg");
  auto covs3 = default_covector_samples(3);
  CHECK(geodesic_dimension_at(heis, vecn({0, 0, 0}), covs3) == 5);

  auto mart = load_structure("martinet");
  CHECK(geodesic_dimension_at(mart, vecn({0.5, 0.0, 0.0}), covs3) == 5);
  // On the singular surface every ample sample needs the extra flag order.
  CHECK(geodesic_dimension_at(mart, vecn({0, 0, 0}), covs3) == 7);

  auto eucl = load_structure("euclidean_test");
  CHECK(geodesic_dimension_at(eucl, vecn({0, 0, 0}), covs3) == 3);

  auto carnot = load_structure("corank1_carnot");
  auto covs5 = default_covector_samples(5);
  int nc = geodesic_dimension_at(carnot, vecn({0, 0, 0, 0, 0}), covs5);
  CHECK(nc == 7);
  CHECK(nc >= carnot->dim() + 2);
}

TEST_CASE("dimension sampling fails loudly when no covector is ample") {
  // On the martinet singular surface, covectors without a first control keep
  // the trajectory inside the surface and the flag never saturates.
  auto mart = load_structure("martinet");
  std::vector<Eigen::VectorXd> bad = {vecn({0, 1, 0}), vecn({0, 0, 1}), vecn({0, 0.5, 0.5})};
  CHECK_THROWS_AS(geodesic_dimension_at(mart, vecn({0, 0, 0}), bad), NoAmpleFound);
}
