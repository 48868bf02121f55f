#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "oracle_heisenberg.hpp"
#include "srlab/hamiltonian.hpp"
#include "srlab/sampling.hpp"
#include "srlab/structures.hpp"

using namespace srlab;

namespace {

Eigen::VectorXd vec3(double a, double b, double c) {
  Eigen::VectorXd v(3);
  v << a, b, c;
  return v;
}

// FD of the full right-hand side in phase space, column by column.
Eigen::MatrixXd rhs_jacobian_fd(const SRStructure& s, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& p) {
  const int n = s.dim();
  const int m = 2 * n;
  SRStructure::Workspace ws;
  ws.resize(s.rank(), n);
  std::vector<double> z(static_cast<size_t>(m)), dx(static_cast<size_t>(n)),
      dp(static_cast<size_t>(n));
  auto eval = [&](const std::vector<double>& zz, Eigen::VectorXd& out) {
    s.eval_rhs(zz.data(), zz.data() + n, dx.data(), dp.data(), ws);
    for (int i = 0; i < n; ++i) {
      out(i) = dx[static_cast<size_t>(i)];
      out(n + i) = dp[static_cast<size_t>(i)];
    }
  };
  for (int i = 0; i < n; ++i) {
    z[static_cast<size_t>(i)] = x(i);
    z[static_cast<size_t>(n + i)] = p(i);
  }
  const double h = 1e-5;
  Eigen::MatrixXd J(m, m);
  Eigen::VectorXd fp(m), fm(m);
  for (int c = 0; c < m; ++c) {
    std::vector<double> zp = z, zm = z;
    zp[static_cast<size_t>(c)] += h;
    zm[static_cast<size_t>(c)] -= h;
    eval(zp, fp);
    eval(zm, fm);
    J.col(c) = (fp - fm) / (2 * h);
  }
  return J;
}

// The analytic block matrix [[A, B], [C, -A^T]] assembled from eval_blocks.
Eigen::MatrixXd rhs_jacobian_blocks(const SRStructure& s, const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& p) {
  const int n = s.dim();
  SRStructure::Workspace ws;
  ws.resize(s.rank(), n);
  std::vector<double> dx(static_cast<size_t>(n)), dp(static_cast<size_t>(n));
  std::vector<double> A(static_cast<size_t>(n) * n), B(static_cast<size_t>(n) * n),
      C(static_cast<size_t>(n) * n);
  s.eval_rhs(x.data(), p.data(), dx.data(), dp.data(), ws);
  s.eval_blocks(x.data(), p.data(), A.data(), B.data(), C.data(), ws);
  Eigen::MatrixXd J(2 * n, 2 * n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      J(r, c) = A[static_cast<size_t>(r) * n + c];
      J(r, n + c) = B[static_cast<size_t>(r) * n + c];
      J(n + r, c) = C[static_cast<size_t>(r) * n + c];
      J(n + r, n + c) = -A[static_cast<size_t>(c) * n + r];
    }
  }
  return J;
}

}  // namespace

TEST_CASE("closed-form endpoints match their frozen values") {
  // Guards the transcription of the closed form itself.
  oracle::HeisPoint g0{0.0, 0.0, 0.0};
  oracle::HeisCovector p0{1.0, 0.0, 2.0};
  auto e = oracle::exp_map(g0, p0, 1.0);
  CHECK(e.x == Catch::Approx(0.45464871341284085).epsilon(1e-14));
  CHECK(e.y == Catch::Approx(0.7080734182735712).epsilon(1e-14));
  CHECK(e.z == Catch::Approx(0.1363378216467898).epsilon(1e-14));

  oracle::HeisPoint g1{0.3, -0.2, 0.1};
  oracle::HeisCovector p1{0.5, -1.0, 0.7};
  auto e1 = oracle::exp_map(g1, p1, 0.8);
  CHECK(e1.x == Catch::Approx(0.9278325835112802).epsilon(1e-14));
  CHECK(e1.y == Catch::Approx(-0.7547815148811969).epsilon(1e-14));
  CHECK(e1.z == Catch::Approx(0.11267029653316206).epsilon(1e-14));
}

TEST_CASE("integrated endpoints agree with the closed form") {
  auto heis = load_structure("heisenberg");
  auto x = vec3(0.3, -0.2, 0.1);
  auto p = vec3(0.5, -1.0, 0.7);
  Eigen::VectorXd e = exp_map(*heis, x, p, 0.8);
  auto ref = oracle::exp_map({0.3, -0.2, 0.1}, {0.5, -1.0, 0.7}, 0.8);
  CHECK(std::abs(e(0) - ref.x) < 1e-10);
  CHECK(std::abs(e(1) - ref.y) < 1e-10);
  CHECK(std::abs(e(2) - ref.z) < 1e-10);
}

TEST_CASE("closed-form battery over random starts, covectors, and durations") {
  auto heis = load_structure("heisenberg");
  Rng rng(20260815);
  FlowKernel kernel(*heis);
  IntegratorConfig cfg;
  for (int trial = 0; trial < 60; ++trial) {
    double x0[3], p0[3];
    for (auto& v : x0) v = rng.uniform(-1.0, 1.0);
    for (auto& v : p0) v = rng.uniform(-1.5, 1.5);
    double t = rng.uniform(0.1, 1.0);
    double x[3] = {x0[0], x0[1], x0[2]};
    double p[3] = {p0[0], p0[1], p0[2]};
    kernel.integrate(x, p, t, cfg, nullptr);
    auto re = oracle::exp_map({x0[0], x0[1], x0[2]}, {p0[0], p0[1], p0[2]}, t);
    auto rp = oracle::covector_at({x0[0], x0[1], x0[2]}, {p0[0], p0[1], p0[2]}, t);
    CHECK(std::abs(x[0] - re.x) < 1e-9);
    CHECK(std::abs(x[1] - re.y) < 1e-9);
    CHECK(std::abs(x[2] - re.z) < 1e-9);
    CHECK(std::abs(p[0] - rp.px) < 1e-9);
    CHECK(std::abs(p[1] - rp.py) < 1e-9);
    CHECK(std::abs(p[2] - rp.pz) < 1e-9);
  }
}

TEST_CASE("hamiltonian values at reference covectors") {
  auto heis = load_structure("heisenberg");
  auto x = vec3(0, 0, 0);
  CHECK(hamiltonian_value(*heis, x, vec3(1, 0, 2)) == Catch::Approx(0.5));
  // At the origin the frame ignores the vertical momentum entirely.
  CHECK(hamiltonian_value(*heis, x, vec3(0, 0, 5)) == Catch::Approx(0.0).margin(1e-300));
  auto eucl = load_structure("euclidean_test");
  CHECK(hamiltonian_value(*eucl, x, vec3(3, 4, 0)) == Catch::Approx(12.5));
}

TEST_CASE("flows with vanishing vertical momentum are straight lines") {
  auto heis = load_structure("heisenberg");
  Eigen::VectorXd e = exp_map(*heis, vec3(0, 0, 0), vec3(1, 0, 0), 0.7);
  CHECK(e(0) == Catch::Approx(0.7).epsilon(1e-12));
  CHECK(std::abs(e(1)) < 1e-15);
  CHECK(std::abs(e(2)) < 1e-15);

  auto eucl = load_structure("euclidean_test");
  Eigen::VectorXd u = exp_map(*eucl, vec3(0.1, 0.2, 0.3), vec3(0.3, -0.4, 0.5), 2.0);
  CHECK(u(0) == Catch::Approx(0.7).epsilon(1e-12));
  CHECK(u(1) == Catch::Approx(-0.6).epsilon(1e-12));
  CHECK(u(2) == Catch::Approx(1.3).epsilon(1e-12));
}

TEST_CASE("time-zero flows return their input bitwise") {
  auto heis = load_structure("heisenberg");
  auto x = vec3(0.25, -0.125, 0.5);
  Eigen::VectorXd e = exp_map(*heis, x, vec3(1, 2, 3), 0.0);
  CHECK(e(0) == x(0));
  CHECK(e(1) == x(1));
  CHECK(e(2) == x(2));
  PhaseState st;
  st.x = x;
  st.p = vec3(1, 2, 3);
  PhaseState out = flow(*heis, st, 0.0, {}, Sensitivity::yes);
  REQUIRE(out.sensitivity.has_value());
  CHECK(out.sensitivity->isIdentity(0.0));
}

TEST_CASE("covector scaling is equivalent to time scaling") {
  auto heis = load_structure("heisenberg");
  auto x = vec3(0.2, 0.1, -0.3);
  auto p = vec3(0.5, -0.3, 0.8);
  Eigen::VectorXd a = exp_map(*heis, x, 2.0 * p, 0.4);
  Eigen::VectorXd b = exp_map(*heis, x, p, 0.8);
  CHECK((a - b).norm() < 1e-9);
}

TEST_CASE("flows compose over concatenated intervals") {
  auto heis = load_structure("heisenberg");
  PhaseState st;
  st.x = vec3(0.1, -0.4, 0.2);
  st.p = vec3(1.1, 0.3, -0.9);
  PhaseState whole = flow(*heis, st, 0.9);
  PhaseState part = flow(*heis, flow(*heis, st, 0.5), 0.4);
  CHECK((whole.x - part.x).norm() < 1e-9);
  CHECK((whole.p - part.p).norm() < 1e-9);
  CHECK(whole.time == Catch::Approx(0.9));
}

TEST_CASE("the hamiltonian is conserved along trajectories") {
  auto heis = load_structure("heisenberg");
  auto traj = sample_trajectory(*heis, vec3(0.3, -0.2, 0.1), vec3(0.5, -1.0, 0.7), 0.0, 1.5, 31);
  REQUIRE(traj.size() == 31);
  double h0 = traj.front().H;
  for (const auto& row : traj) CHECK(std::abs(row.H - h0) < 1e-9);
  CHECK(traj.front().t == Catch::Approx(0.0));
  CHECK(traj.back().t == Catch::Approx(1.5));
  CHECK_THROWS_AS(sample_trajectory(*heis, vec3(0, 0, 0), vec3(1, 0, 0), 0.0, 1.0, 1),
                  ConfigError);
}

TEST_CASE("variational blocks match finite differences of the vector field") {
  Rng rng(777);
  for (const char* name : {"heisenberg", "martinet", "corank1_carnot"}) {
    auto s = load_structure(name);
    const int n = s->dim();
    for (int trial = 0; trial < 10; ++trial) {
      Eigen::VectorXd x(n), p(n);
      for (int i = 0; i < n; ++i) {
        x(i) = rng.uniform(-1.5, 1.5);
        p(i) = rng.uniform(-2.0, 2.0);
      }
      Eigen::MatrixXd Jb = rhs_jacobian_blocks(*s, x, p);
      Eigen::MatrixXd Jf = rhs_jacobian_fd(*s, x, p);
      INFO(name << " trial " << trial);
      CHECK((Jb - Jf).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("flow differentials stay symplectic") {
  auto heis = load_structure("heisenberg");
  PhaseState st;
  st.x = vec3(0.1, 0.2, -0.1);
  st.p = vec3(1.0, 0.0, 2.0);
  PhaseState out = flow(*heis, st, 1.0, {}, Sensitivity::yes);
  REQUIRE(out.sensitivity.has_value());
  const int n = 3;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  J.block(0, n, n, n) = Eigen::MatrixXd::Identity(n, n);
  J.block(n, 0, n, n) = -Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd& S = *out.sensitivity;
  CHECK((S.transpose() * J * S - J).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("exponential differential matches finite differences") {
  Rng rng(4242);
  for (const char* name : {"heisenberg", "martinet"}) {
    auto s = load_structure(name);
    const int n = s->dim();
    for (int trial = 0; trial < 5; ++trial) {
      Eigen::VectorXd x(n), p(n);
      for (int i = 0; i < n; ++i) {
        x(i) = rng.uniform(-0.5, 0.5);
        p(i) = rng.uniform(-1.5, 1.5);
      }
      double t = rng.uniform(0.3, 1.0);
      Eigen::MatrixXd D = exp_differential(*s, x, p, t);
      const double h = 1e-5;
      for (int c = 0; c < n; ++c) {
        Eigen::VectorXd pp = p, pm = p;
        pp(c) += h;
        pm(c) -= h;
        Eigen::VectorXd col = (exp_map(*s, x, pp, t) - exp_map(*s, x, pm, t)) / (2 * h);
        INFO(name << " trial " << trial << " column " << c);
        CHECK((D.col(c) - col).cwiseAbs().maxCoeff() < 1e-7);
      }
    }
  }
}

TEST_CASE("euclidean exponential differential is t times the identity") {
  auto eucl = load_structure("euclidean_test");
  Eigen::MatrixXd D = exp_differential(*eucl, vec3(0.1, -0.2, 0.3), vec3(1, 2, -1), 0.7);
  CHECK((D - 0.7 * Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(D.determinant() == Catch::Approx(0.343).epsilon(1e-10));
}

TEST_CASE("sensitivity matrices chain across composed flows") {
  auto heis = load_structure("heisenberg");
  PhaseState st;
  st.x = vec3(0.2, -0.1, 0.05);
  st.p = vec3(0.8, 0.6, 1.1);
  PhaseState whole = flow(*heis, st, 0.9, {}, Sensitivity::yes);
  PhaseState first = flow(*heis, st, 0.5, {}, Sensitivity::yes);
  PhaseState second = flow(*heis, first, 0.4, {}, Sensitivity::yes);
  REQUIRE(whole.sensitivity.has_value());
  REQUIRE(second.sensitivity.has_value());
  CHECK((*whole.sensitivity - *second.sensitivity).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("leaving the chart raises an error naming the flow stage") {
  auto heis = load_structure("heisenberg");
  try {
    exp_map(*heis, vec3(0, 0, 0), vec3(9, 0, 0), 1.0);
    FAIL("expected LeftChart");
  } catch (const LeftChart& e) {
    CHECK(e.stage() == "flow");
  }
}

TEST_CASE("step budgets are enforced before integrating") {
  auto heis = load_structure("heisenberg");
  IntegratorConfig cfg;
  cfg.max_steps = 10;
  CHECK_THROWS_AS(exp_map(*heis, vec3(0, 0, 0), vec3(1, 0, 0), 1.0, cfg), StepBudget);
}

TEST_CASE("trajectory csv layout is stable") {
  auto heis = load_structure("heisenberg");
  auto traj = sample_trajectory(*heis, vec3(0, 0, 0), vec3(1, 0, 2), 0.0, 1.0, 3);
  std::ostringstream os;
  write_trajectory_csv(os, traj);
  std::istringstream in(os.str());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "t,x1,x2,x3,p1,p2,p3,H");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 3);
}

TEST_CASE("first conjugate time marks the vanishing of the differential") {
  // det of the exponential differential changes sign at the closed-form
  // conjugate time, so it must be small right there and positive before.
  auto heis = load_structure("heisenberg");
  auto x = vec3(0, 0, 0);
  auto p = vec3(1.0, 0.0, 2.0);
  double tc = oracle::first_conjugate_time({1.0, 0.0, 2.0});
  CHECK(tc == Catch::Approx(3.14159265358979323846));
  double before = exp_differential(*heis, x, p, 0.9 * tc).determinant();
  double at = exp_differential(*heis, x, p, tc).determinant();
  CHECK(before > 0.0);
  CHECK(std::abs(at) < 1e-8);
}
