#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace srlab {

// splitmix64: tiny, portable, and the stream is pinned by this code rather
// than by library internals, so seeded runs are reproducible everywhere.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller with an explicit formula (no library distribution state).
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform point in the unit ball of R^n (rejection-free: direction * radius).
  void unit_ball(int n, double* out) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      out[i] = gaussian();
      s += out[i] * out[i];
    }
    s = std::sqrt(s);
    if (s < 1e-300) s = 1e-300;
    double r = std::pow(uniform(), 1.0 / n) / s;
    for (int i = 0; i < n; ++i) out[i] *= r;
  }

private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent stream for a labelled sub-task of a seeded run.
inline Rng sub_rng(std::uint64_t seed, std::uint64_t stream) {
  Rng mix(seed ^ (0x517cc1b727220a95ULL * (stream + 1)));
  mix.next_u64();
  return mix;
}

inline double halton(std::uint64_t index, std::uint64_t base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= static_cast<double>(base);
    r += f * static_cast<double>(index % base);
    index /= base;
  }
  return r;
}

// Inverse of the standard normal CDF (Acklam's rational approximation).
// Plenty for quasi-random direction generation.
inline double inverse_normal_cdf(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double q, r;
  if (p < plow) {
    q = std::sqrt(-2 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  if (p > phigh) {
    q = std::sqrt(-2 * std::log(1 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  q = p - 0.5;
  r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

// Deterministic low-discrepancy sample on the unit sphere of R^n:
// Halton points mapped through the inverse normal CDF, then normalised.
inline std::vector<std::vector<double>> sphere_sample(int n, int count) {
  static const std::uint64_t primes[] = {2, 3, 5, 7, 11, 13, 17, 19};
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<size_t>(count));
  std::uint64_t index = 1;
  while (static_cast<int>(out.size()) < count) {
    std::vector<double> v(static_cast<size_t>(n));
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      double u = halton(index, primes[j]);
      u = std::min(std::max(u, 1e-12), 1.0 - 1e-12);
      v[static_cast<size_t>(j)] = inverse_normal_cdf(u);
      s += v[static_cast<size_t>(j)] * v[static_cast<size_t>(j)];
    }
    ++index;
    if (s < 1e-12) continue;
    s = std::sqrt(s);
    for (auto& c : v) c /= s;
    out.push_back(std::move(v));
  }
  return out;
}

// FNV-1a over a byte string; used to stamp resolved configurations.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Runs fn(chunk) for chunk = 0..chunks-1 across `threads` workers.
// Chunk ownership is static, so any reduction done per chunk and merged in
// chunk order is deterministic regardless of thread scheduling.
inline void parallel_chunks(int chunks, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || chunks <= 1) {
    for (int c = 0; c < chunks; ++c) fn(c);
    return;
  }
  int workers = std::min(threads, chunks);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (int c = w; c < chunks; c += workers) fn(c);
    });
  }
  for (auto& t : pool) t.join();
}

inline int default_threads() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace srlab
