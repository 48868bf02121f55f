#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "srlab/errors.hpp"

namespace srlab {

// Hard cap on chart dimension. Keeps exponent tuples in fixed storage so the
// evaluation hot path never allocates.
inline constexpr int kMaxDim = 8;

using Exponents = std::array<std::uint8_t, kMaxDim>;

struct Monomial {
  double coeff = 0.0;
  Exponents exps{};  // entries beyond dim are zero

  int degree() const {
    int d = 0;
    for (auto e : exps) d += e;
    return d;
  }
};

// Sparse multivariate polynomial over a fixed chart dimension.
class Polynomial {
public:
  Polynomial() = default;
  explicit Polynomial(int dim) : dim_(dim) {}

  static Polynomial constant(int dim, double c) {
    Polynomial p(dim);
    if (c != 0.0) p.terms_.push_back({c, {}});
    return p;
  }

  static Polynomial variable(int dim, int axis) {
    Polynomial p(dim);
    Monomial m;
    m.coeff = 1.0;
    m.exps[axis] = 1;
    p.terms_.push_back(m);
    return p;
  }

  int dim() const { return dim_; }
  bool zero() const { return terms_.empty(); }
  const std::vector<Monomial>& terms() const { return terms_; }

  int degree() const {
    int d = 0;
    for (const auto& t : terms_) d = std::max(d, t.degree());
    return d;
  }

  void add_term(double coeff, const Exponents& e) {
    if (coeff == 0.0) return;
    for (auto& t : terms_) {
      if (t.exps == e) {
        t.coeff += coeff;
        if (t.coeff == 0.0) {
          t.exps = terms_.back().exps;
          t.coeff = terms_.back().coeff;
          terms_.pop_back();
        }
        return;
      }
    }
    Monomial m;
    m.coeff = coeff;
    m.exps = e;
    terms_.push_back(m);
  }

  double eval(const double* x) const {
    double acc = 0.0;
    for (const auto& t : terms_) {
      double v = t.coeff;
      for (int j = 0; j < dim_; ++j) {
        double xj = x[j];
        for (int r = 0; r < t.exps[j]; ++r) v *= xj;
      }
      acc += v;
    }
    return acc;
  }

  Polynomial derivative(int axis) const {
    Polynomial out(dim_);
    for (const auto& t : terms_) {
      if (t.exps[axis] == 0) continue;
      Monomial m = t;
      m.coeff = t.coeff * t.exps[axis];
      m.exps[axis] = static_cast<std::uint8_t>(t.exps[axis] - 1);
      out.add_term(m.coeff, m.exps);
    }
    return out;
  }

  Polynomial operator+(const Polynomial& o) const {
    Polynomial out = *this;
    for (const auto& t : o.terms_) out.add_term(t.coeff, t.exps);
    return out;
  }

  Polynomial operator-(const Polynomial& o) const {
    Polynomial out = *this;
    for (const auto& t : o.terms_) out.add_term(-t.coeff, t.exps);
    return out;
  }

  Polynomial operator*(const Polynomial& o) const {
    Polynomial out(dim_);
    for (const auto& a : terms_) {
      for (const auto& b : o.terms_) {
        Exponents e{};
        for (int j = 0; j < dim_; ++j) {
          int s = a.exps[j] + b.exps[j];
          if (s > 255) throw ConfigError("monomial exponent overflow in polynomial product");
          e[j] = static_cast<std::uint8_t>(s);
        }
        out.add_term(a.coeff * b.coeff, e);
      }
    }
    return out;
  }

  Polynomial scaled(double c) const {
    Polynomial out(dim_);
    for (const auto& t : terms_) out.add_term(c * t.coeff, t.exps);
    return out;
  }

  // Drops terms with negligible coefficients (products of exactly
  // representable inputs rarely need this; brackets of messy imports do).
  void prune(double tol = 0.0) {
    std::erase_if(terms_, [&](const Monomial& t) { return std::abs(t.coeff) <= tol; });
  }

private:
  int dim_ = 0;
  std::vector<Monomial> terms_;
};

// Vector field with polynomial components on a chart of dimension dim.
struct PolyField {
  int dim = 0;
  std::vector<Polynomial> comp;  // size dim

  explicit PolyField(int d = 0) : dim(d), comp(static_cast<size_t>(d), Polynomial(d)) {}

  void eval(const double* x, double* out) const {
    for (int i = 0; i < dim; ++i) out[i] = comp[i].eval(x);
  }
};

// Lie bracket [V, W] = (DW) V - (DV) W, computed symbolically.
inline PolyField lie_bracket(const PolyField& V, const PolyField& W) {
  const int n = V.dim;
  PolyField out(n);
  for (int i = 0; i < n; ++i) {
    Polynomial acc(n);
    for (int j = 0; j < n; ++j) {
      acc = acc + W.comp[i].derivative(j) * V.comp[j];
      acc = acc - V.comp[i].derivative(j) * W.comp[j];
    }
    acc.prune();
    out.comp[i] = acc;
  }
  return out;
}

}  // namespace srlab
