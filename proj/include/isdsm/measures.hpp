#pragma once

// Tempered weights phi_p, purely atomic measures and the weighted
// total-variation distance between them.

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <vector>

#include "isdsm/errors.hpp"

namespace isdsm {

/// phi_p(x) = (1 + x^2)^(-p/2).
inline double phi_p(double x, double p) { return std::pow(1.0 + x * x, -0.5 * p); }

inline double phi_p_d1(double x, double p) { return -p * x * std::pow(1.0 + x * x, -0.5 * p - 1.0); }

inline double phi_p_d2(double x, double p) {
  const double s = 1.0 + x * x;
  return -p * std::pow(s, -0.5 * p - 1.0) + p * (p + 2.0) * x * x * std::pow(s, -0.5 * p - 2.0);
}

/// The weight phi_p together with a constant c_p such that
/// |phi_p'| + |phi_p''| <= c_p phi_p everywhere.
class TemperWeight {
 public:
  explicit TemperWeight(double p) : p_(p) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("tempering exponent p must be finite and >= 0");
    c_p_ = dominating_constant(p);
  }

  double p() const { return p_; }
  double c_p() const { return c_p_; }
  double operator()(double x) const { return phi_p(x, p_); }

  /// (|phi'| + |phi''|) / phi in closed form.
  static double derivative_ratio(double x, double p) {
    const double s = 1.0 + x * x;
    return p * std::abs(x) / s + p * std::abs((p + 1.0) * x * x - 1.0) / (s * s);
  }

 private:
  // Grid maximisation over |x| <= 1e6, refined by golden section around the
  // best grid point; beyond 1e6 the ratio is below p/|x| + p(p+1)/x^2.
  static double dominating_constant(double p) {
    if (p == 0.0) return 0.0;
    double best_x = 0.0;
    double best = derivative_ratio(0.0, p);
    const auto consider = [&](double x) {
      const double r = derivative_ratio(x, p);
      if (r > best) {
        best = r;
        best_x = x;
      }
    };
    for (int i = 1; i <= 200000; ++i) consider(i * 1e-4);
    for (double x = 20.0; x <= 1e6; x *= 1.001) consider(x);

    double lo = std::max(0.0, best_x - 1e-4);
    double hi = best_x + 1e-4;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 100; ++it) {
      const double a = hi - g * (hi - lo);
      const double b = lo + g * (hi - lo);
      if (derivative_ratio(a, p) > derivative_ratio(b, p)) {
        hi = b;
      } else {
        lo = a;
      }
    }
    best = std::max(best, derivative_ratio(0.5 * (lo + hi), p));
    const double tail = p / 1e6 + p * (p + 1.0) / 1e12;
    return std::max(best, tail) * (1.0 + 1e-12);
  }

  double p_;
  double c_p_;
};

struct Atom {
  double position = 0.0;
  double mass = 0.0;

  friend bool operator==(const Atom&, const Atom&) = default;
};

/// A finite, purely atomic measure. Atoms are sorted by position, zero-mass
/// atoms are dropped and atoms at bit-identical positions are merged.
class AtomicMeasure {
 public:
  AtomicMeasure() = default;
  explicit AtomicMeasure(std::vector<Atom> atoms) : atoms_(std::move(atoms)) { normalize(); }

  std::span<const Atom> atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  bool empty() const { return atoms_.empty(); }

  double total_mass() const {
    double total = 0.0;
    for (const Atom& a : atoms_) total += a.mass;
    return total;
  }

  /// Mass sitting exactly at x.
  double mass_at(double x) const {
    const auto it = std::lower_bound(atoms_.begin(), atoms_.end(), x,
                                     [](const Atom& a, double v) { return a.position < v; });
    return (it != atoms_.end() && it->position == x) ? it->mass : 0.0;
  }

  friend bool operator==(const AtomicMeasure&, const AtomicMeasure&) = default;

 private:
  void normalize() {
    for (const Atom& a : atoms_) {
      if (!std::isfinite(a.position) || !std::isfinite(a.mass) || a.mass < 0.0) {
        std::ostringstream msg;
        msg << "invalid atom (position " << a.position << ", mass " << a.mass << ")";
        throw ConfigError(msg.str());
      }
    }
    std::erase_if(atoms_, [](const Atom& a) { return a.mass == 0.0; });
    std::stable_sort(atoms_.begin(), atoms_.end(),
                     [](const Atom& a, const Atom& b) { return a.position < b.position; });
    std::vector<Atom> merged;
    merged.reserve(atoms_.size());
    for (const Atom& a : atoms_) {
      if (!merged.empty() && merged.back().position == a.position) {
        merged.back().mass += a.mass;
      } else {
        merged.push_back(a);
      }
    }
    atoms_ = std::move(merged);
  }

  std::vector<Atom> atoms_;
};

/// <phi, mu> = sum_i mass_i phi(position_i).
template <class Fn>
double pair(const AtomicMeasure& mu, Fn&& phi) {
  double total = 0.0;
  for (const Atom& a : mu.atoms()) {
    const double v = phi(a.position);
    if (!std::isfinite(v)) {
      std::ostringstream msg;
      msg << "test function is not finite at atom position " << a.position;
      throw EvaluationError(msg.str());
    }
    total += a.mass * v;
  }
  return total;
}

/// ||mu - nu||_p. For atomic arguments the supremum over |f| <= 1 is attained
/// by f = sign(mu({x}) - nu({x})), giving a weighted mass-gap sum.
inline double distance_p(const AtomicMeasure& mu, const AtomicMeasure& nu, double p) {
  const auto a = mu.atoms();
  const auto b = nu.atoms();
  std::size_t i = 0, j = 0;
  double total = 0.0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].position < b[j].position)) {
      total += phi_p(a[i].position, p) * a[i].mass;
      ++i;
    } else if (i == a.size() || b[j].position < a[i].position) {
      total += phi_p(b[j].position, p) * b[j].mass;
      ++j;
    } else {
      total += phi_p(a[i].position, p) * std::abs(a[i].mass - b[j].mass);
      ++i;
      ++j;
    }
  }
  return total;
}

}  // namespace isdsm
