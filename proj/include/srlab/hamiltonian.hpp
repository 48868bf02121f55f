#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "srlab/errors.hpp"
#include "srlab/structures.hpp"

namespace srlab {

struct IntegratorConfig {
  double step_size = 1e-3;     // upper bound; actual step divides the interval evenly
  long max_steps = 20000000;   // budget across one flow call
  static constexpr const char* scheme = "rk4";
};

// Point on the cotangent bundle, optionally carrying the differential of the
// flow that produced it (2n x 2n, d(x,p)/d(x0,p0)).
struct PhaseState {
  Eigen::VectorXd x;
  Eigen::VectorXd p;
  std::optional<Eigen::MatrixXd> sensitivity;
  double time = 0.0;
};

inline double hamiltonian_value(const SRStructure& s, const double* x, const double* p) {
  const int n = s.dim(), k = s.rank();
  std::vector<double> v(static_cast<size_t>(n));
  double h = 0.0;
  for (int i = 0; i < k; ++i) {
    s.fields()[static_cast<size_t>(i)].eval(x, v.data());
    double u = 0.0;
    for (int r = 0; r < n; ++r) u += p[r] * v[static_cast<size_t>(r)];
    h += u * u;
  }
  return 0.5 * h;
}

inline double hamiltonian_value(const SRStructure& s, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& p) {
  return hamiltonian_value(s, x.data(), p.data());
}

// Classical fixed-step RK4 on the Hamiltonian system, with the variational
// system integrated alongside using the same stages. That makes the returned
// sensitivity the exact derivative of the discrete flow map (up to roundoff),
// which is what downstream Jacobian consumers and finite-difference checks
// both see. All buffers live in the kernel: no allocation per step.
class FlowKernel {
public:
  explicit FlowKernel(const SRStructure& s) : s_(&s), n_(s.dim()) {
    ws_.resize(s.rank(), n_);
    const size_t m = static_cast<size_t>(2 * n_);
    z_.resize(m);
    zs_.resize(m);
    for (auto& kv : k_) kv.resize(m);
    A_.resize(static_cast<size_t>(n_) * n_);
    B_.resize(static_cast<size_t>(n_) * n_);
    C_.resize(static_cast<size_t>(n_) * n_);
    S_.resize(m * m);
    Ss_.resize(m * m);
    for (auto& kv : kS_) kv.resize(m * m);
  }

  const SRStructure& structure() const { return *s_; }

  // Advances (x, p) in place by duration t. If S is non-null it must hold a
  // row-major 2n x 2n matrix which is propagated by the flow differential.
  // Callback, when set, observes every accepted step (including the start).
  void integrate(double* x, double* p, double t, const IntegratorConfig& cfg, double* S,
                 const std::function<void(double, const double*, const double*)>& observe = {}) {
    const int n = n_;
    if (t == 0.0) {
      if (observe) observe(0.0, x, p);
      return;
    }
    double steps_needed = std::ceil(std::abs(t) / cfg.step_size);
    if (steps_needed > static_cast<double>(cfg.max_steps))
      throw StepBudget("flow over duration " + std::to_string(t) + " needs " +
                       std::to_string(static_cast<long long>(steps_needed)) +
                       " steps, budget is " + std::to_string(cfg.max_steps));
    const long N = static_cast<long>(steps_needed);
    const double h = t / static_cast<double>(N);
    for (int i = 0; i < n; ++i) {
      z_[static_cast<size_t>(i)] = x[i];
      z_[static_cast<size_t>(n + i)] = p[i];
    }
    if (S) std::memcpy(S_.data(), S, sizeof(double) * S_.size());
    if (observe) observe(0.0, x, p);
    for (long step = 0; step < N; ++step) {
      rk4_step(h, S != nullptr);
      if (!s_->inside_chart(z_.data())) {
        std::ostringstream os;
        os << "trajectory left the chart at t=" << (static_cast<double>(step + 1) * h);
        throw LeftChart(os.str());
      }
      if (observe) observe(static_cast<double>(step + 1) * h, z_.data(), z_.data() + n);
    }
    for (int i = 0; i < n; ++i) {
      x[i] = z_[static_cast<size_t>(i)];
      p[i] = z_[static_cast<size_t>(n + i)];
    }
    if (S) std::memcpy(S, S_.data(), sizeof(double) * S_.size());
  }

private:
  void rhs(const double* z, double* out) {
    s_->eval_rhs(z, z + n_, out, out + n_, ws_);
  }

  // dS = [[A, B], [C, -A^T]] * S evaluated at the stage state zs_.
  void sens_rhs(const double* S, double* out) {
    const int n = n_, m = 2 * n_;
    s_->eval_blocks(zs_.data(), zs_.data() + n, A_.data(), B_.data(), C_.data(), ws_);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < m; ++c) {
        double top = 0.0, bot = 0.0;
        for (int j = 0; j < n; ++j) {
          top += A_[static_cast<size_t>(r) * n + j] * S[static_cast<size_t>(j) * m + c] +
                 B_[static_cast<size_t>(r) * n + j] * S[static_cast<size_t>(n + j) * m + c];
          bot += C_[static_cast<size_t>(r) * n + j] * S[static_cast<size_t>(j) * m + c] -
                 A_[static_cast<size_t>(j) * n + r] * S[static_cast<size_t>(n + j) * m + c];
        }
        out[static_cast<size_t>(r) * m + c] = top;
        out[static_cast<size_t>(n + r) * m + c] = bot;
      }
    }
  }

  void rk4_step(double h, bool with_sens) {
    const size_t m = z_.size();
    const size_t msq = S_.size();
    static constexpr double stage_c[3] = {0.5, 0.5, 1.0};
    // stage 1 at z
    std::memcpy(zs_.data(), z_.data(), sizeof(double) * m);
    rhs(zs_.data(), k_[0].data());
    if (with_sens) {
      std::memcpy(Ss_.data(), S_.data(), sizeof(double) * msq);
      sens_rhs(Ss_.data(), kS_[0].data());
    }
    for (int st = 1; st < 4; ++st) {
      const double c = stage_c[st - 1] * h;
      for (size_t i = 0; i < m; ++i) zs_[i] = z_[i] + c * k_[static_cast<size_t>(st - 1)][i];
      if (with_sens) {
        for (size_t i = 0; i < msq; ++i)
          Ss_[i] = S_[i] + c * kS_[static_cast<size_t>(st - 1)][i];
        rhs(zs_.data(), k_[static_cast<size_t>(st)].data());
        sens_rhs(Ss_.data(), kS_[static_cast<size_t>(st)].data());
      } else {
        rhs(zs_.data(), k_[static_cast<size_t>(st)].data());
      }
    }
    const double w = h / 6.0;
    for (size_t i = 0; i < m; ++i)
      z_[i] += w * (k_[0][i] + 2 * k_[1][i] + 2 * k_[2][i] + k_[3][i]);
    if (with_sens)
      for (size_t i = 0; i < msq; ++i)
        S_[i] += w * (kS_[0][i] + 2 * kS_[1][i] + 2 * kS_[2][i] + kS_[3][i]);
  }

  const SRStructure* s_;
  int n_;
  SRStructure::Workspace ws_;
  std::vector<double> z_, zs_;
  std::array<std::vector<double>, 4> k_;
  std::vector<double> A_, B_, C_;
  std::vector<double> S_, Ss_;
  std::array<std::vector<double>, 4> kS_;
};

enum class Sensitivity { no, yes };

// Flow of the Hamiltonian vector field over duration t from `start`.
// If `start` already carries a sensitivity matrix the result is composed with
// it, so flows over concatenated intervals chain correctly.
inline PhaseState flow(const SRStructure& s, const PhaseState& start, double t,
                       const IntegratorConfig& cfg = {}, Sensitivity sens = Sensitivity::no) {
  const int n = s.dim();
  const int m = 2 * n;
  PhaseState out;
  out.x = start.x;
  out.p = start.p;
  out.time = start.time + t;
  FlowKernel kernel(s);
  if (sens == Sensitivity::yes) {
    std::vector<double> S(static_cast<size_t>(m) * m, 0.0);
    for (int i = 0; i < m; ++i) S[static_cast<size_t>(i) * m + i] = 1.0;
    kernel.integrate(out.x.data(), out.p.data(), t, cfg, S.data());
    Eigen::MatrixXd Sm(m, m);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c) Sm(r, c) = S[static_cast<size_t>(r) * m + c];
    if (start.sensitivity) Sm = Sm * (*start.sensitivity);
    out.sensitivity = Sm;
  } else {
    kernel.integrate(out.x.data(), out.p.data(), t, cfg, nullptr);
    out.sensitivity.reset();
  }
  return out;
}

// E_x(t p): endpoint of the unit-time geodesic with initial covector t p,
// computed as the time-t flow from (x, p). exp_map(s, x, p, 0) == x exactly.
inline Eigen::VectorXd exp_map(const SRStructure& s, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& p, double t,
                               const IntegratorConfig& cfg = {}) {
  PhaseState st;
  st.x = x;
  st.p = p;
  return flow(s, st, t, cfg).x;
}

// Derivative of p |-> E_x(t p) at the given p: the upper-right n x n block of
// the flow differential over [0, t].
inline Eigen::MatrixXd exp_differential(const SRStructure& s, const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& p, double t,
                                        const IntegratorConfig& cfg = {}) {
  const int n = s.dim();
  PhaseState st;
  st.x = x;
  st.p = p;
  PhaseState end = flow(s, st, t, cfg, Sensitivity::yes);
  return end.sensitivity->block(0, n, n, n);
}

struct TrajectorySample {
  double t;
  Eigen::VectorXd x;
  Eigen::VectorXd p;
  double H;
};

// Samples the trajectory at `count` uniformly spaced times over [t0, t1]
// (count >= 2). Each gap is integrated with its own evenly divided steps.
inline std::vector<TrajectorySample> sample_trajectory(const SRStructure& s,
                                                       const Eigen::VectorXd& x,
                                                       const Eigen::VectorXd& p, double t0,
                                                       double t1, int count,
                                                       const IntegratorConfig& cfg = {}) {
  if (count < 2) throw ConfigError("trajectory sampling needs at least two points");
  std::vector<TrajectorySample> out;
  out.reserve(static_cast<size_t>(count));
  PhaseState st;
  st.x = x;
  st.p = p;
  st.time = 0.0;
  if (t0 != 0.0) st = flow(s, st, t0, cfg);
  out.push_back({t0, st.x, st.p, hamiltonian_value(s, st.x, st.p)});
  for (int i = 1; i < count; ++i) {
    double target = t0 + (t1 - t0) * static_cast<double>(i) / (count - 1);
    st = flow(s, st, target - st.time, cfg);
    st.time = target;  // avoid accumulation drift in the label
    out.push_back({target, st.x, st.p, hamiltonian_value(s, st.x, st.p)});
  }
  return out;
}

// CSV layout: t, x1..xn, p1..pn, H.
inline void write_trajectory_csv(std::ostream& os, const std::vector<TrajectorySample>& traj) {
  if (traj.empty()) return;
  const int n = static_cast<int>(traj.front().x.size());
  os << "t";
  for (int i = 1; i <= n; ++i) os << ",x" << i;
  for (int i = 1; i <= n; ++i) os << ",p" << i;
  os << ",H\n";
  os.precision(17);
  for (const auto& row : traj) {
    os << row.t;
    for (int i = 0; i < n; ++i) os << "," << row.x(i);
    for (int i = 0; i < n; ++i) os << "," << row.p(i);
    os << "," << row.H << "\n";
  }
}

}  // namespace srlab
