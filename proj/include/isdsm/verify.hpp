#pragma once

// Statistical checks: martingale residuals, first-moment formula, Gronwall
// moment bounds and the report type shared by every check.

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "isdsm/errors.hpp"
#include "isdsm/kernel.hpp"
#include "isdsm/measures.hpp"
#include "isdsm/rates.hpp"
#include "isdsm/stats.hpp"
#include "isdsm/superprocess.hpp"

namespace isdsm {

/// A C^2 test function with closed-form derivatives.
struct TestFunction {
  std::string name;
  RealFn f;
  RealFn d1;
  RealFn d2;
};

inline TestFunction constant_one() {
  return {"one", [](double) { return 1.0; }, [](double) { return 0.0; }, [](double) { return 0.0; }};
}

inline TestFunction tempered_weight(double p) {
  return {"phi_p", [p](double x) { return phi_p(x, p); }, [p](double x) { return phi_p_d1(x, p); },
          [p](double x) { return phi_p_d2(x, p); }};
}

/// exp(-(x - c)^2 / (2 s^2)).
inline TestFunction gaussian_bump(double center = 0.0, double scale = 1.0) {
  const double v = scale * scale;
  return {"bump", [=](double x) { return std::exp(-0.5 * (x - center) * (x - center) / v); },
          [=](double x) { return -(x - center) / v * std::exp(-0.5 * (x - center) * (x - center) / v); },
          [=](double x) {
            const double y = x - center;
            return (y * y / v - 1.0) / v * std::exp(-0.5 * y * y / v);
          }};
}

// ---------------------------------------------------------------------------
// Reports

enum class CheckKind { kEquality, kUpperBound, kLowerBound, kRange, kRelative, kFlag };

inline const char* to_string(CheckKind k) {
  switch (k) {
    case CheckKind::kEquality:
      return "equality";
    case CheckKind::kUpperBound:
      return "upper_bound";
    case CheckKind::kLowerBound:
      return "lower_bound";
    case CheckKind::kRange:
      return "range";
    case CheckKind::kRelative:
      return "relative";
    case CheckKind::kFlag:
      return "flag";
  }
  return "unknown";
}

/// One verified identity. The verdict is a pure function of the other fields:
///  equality:    |empirical - target| <= slack * se
///  upper_bound: empirical <= target + slack * se
///  lower_bound: empirical >= target - slack * se
///  range:       target <= empirical <= target_hi
///  relative:    |empirical - target| <= tolerance * |target|
///  flag:        empirical != 0
struct VerificationReport {
  std::string name;
  std::string anchor;
  CheckKind kind = CheckKind::kEquality;
  double empirical = 0.0;
  double target = 0.0;
  double target_hi = 0.0;
  double se = 0.0;
  double slack = 3.0;
  double tolerance = 0.0;
  std::size_t replicates = 0;
  std::string detail;

  bool verdict() const {
    if (!std::isfinite(empirical)) return false;
    switch (kind) {
      case CheckKind::kEquality:
        return std::abs(empirical - target) <= slack * se;
      case CheckKind::kUpperBound:
        return empirical <= target + slack * se;
      case CheckKind::kLowerBound:
        return empirical >= target - slack * se;
      case CheckKind::kRange:
        return empirical >= target && empirical <= target_hi;
      case CheckKind::kRelative:
        return std::abs(empirical - target) <= tolerance * std::abs(target);
      case CheckKind::kFlag:
        return empirical != 0.0;
    }
    return false;
  }
};

inline VerificationReport mean_equals(std::string name, std::string anchor, std::span<const double> samples,
                                      double target) {
  const auto s = stats::summarize(samples);
  VerificationReport r;
  r.name = std::move(name);
  r.anchor = std::move(anchor);
  r.kind = CheckKind::kEquality;
  r.empirical = s.mean;
  r.target = target;
  r.se = s.se();
  r.replicates = s.n;
  return r;
}

inline VerificationReport mean_below(std::string name, std::string anchor, std::span<const double> samples,
                                     double bound) {
  VerificationReport r = mean_equals(std::move(name), std::move(anchor), samples, bound);
  r.kind = CheckKind::kUpperBound;
  return r;
}

inline VerificationReport value_in_range(std::string name, std::string anchor, double value, double lo, double hi,
                                         double se = 0.0, std::size_t replicates = 0) {
  VerificationReport r;
  r.name = std::move(name);
  r.anchor = std::move(anchor);
  r.kind = CheckKind::kRange;
  r.empirical = value;
  r.target = lo;
  r.target_hi = hi;
  r.se = se;
  r.replicates = replicates;
  return r;
}

inline VerificationReport relative_match(std::string name, std::string anchor, double value, double target,
                                         double tolerance, std::size_t replicates = 0) {
  VerificationReport r;
  r.name = std::move(name);
  r.anchor = std::move(anchor);
  r.kind = CheckKind::kRelative;
  r.empirical = value;
  r.target = target;
  r.tolerance = tolerance;
  r.replicates = replicates;
  return r;
}

inline VerificationReport flag(std::string name, std::string anchor, bool ok, std::string detail = {},
                               std::size_t replicates = 0) {
  VerificationReport r;
  r.name = std::move(name);
  r.anchor = std::move(anchor);
  r.kind = CheckKind::kFlag;
  r.empirical = ok ? 1.0 : 0.0;
  r.target = 1.0;
  r.replicates = replicates;
  r.detail = std::move(detail);
  return r;
}

/// Sample variance against an upper bound, slack in units of its standard error.
inline VerificationReport variance_below(std::string name, std::string anchor, std::span<const double> samples,
                                         double bound) {
  const auto s = stats::summarize(samples);
  VerificationReport r;
  r.name = std::move(name);
  r.anchor = std::move(anchor);
  r.kind = CheckKind::kUpperBound;
  r.empirical = s.variance();
  r.target = bound;
  r.se = stats::variance_se(samples);
  r.replicates = s.n;
  return r;
}

/// Two-sample KS at level alpha: passes when p >= alpha.
inline VerificationReport ks_same_law(std::string name, std::string anchor, std::vector<double> a,
                                      std::vector<double> b, double alpha = 0.01) {
  const std::size_t n = std::min(a.size(), b.size());
  const auto ks = stats::ks_two_sample(std::move(a), std::move(b));
  VerificationReport r;
  r.name = std::move(name);
  r.anchor = std::move(anchor);
  r.kind = CheckKind::kLowerBound;
  r.empirical = ks.p_value;
  r.target = alpha;
  r.slack = 0.0;
  r.replicates = n;
  r.detail = "ks_statistic=" + std::to_string(ks.statistic);
  return r;
}

/// True when values strictly decrease.
inline bool strictly_decreasing(std::span<const double> v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] < v[i - 1])) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Martingale problem

namespace detail {

/// <rho(x - y) phi'(x) phi'(y), Y Y>, truncated where rho vanishes.
inline double flow_quadratic(const Snapshot& s, const CorrelationKernel& kernel, const RealFn& d1) {
  std::vector<std::pair<double, double>> pts;
  pts.reserve(s.atoms.size());
  for (const PathAtom& a : s.atoms) pts.push_back({a.position, a.mass * d1(a.position)});
  std::sort(pts.begin(), pts.end());
  double total = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    total += kernel.rho0() * pts[i].second * pts[i].second;
    for (std::size_t j = i + 1; j < pts.size() && pts[j].first - pts[i].first < kernel.span(); ++j) {
      total += 2.0 * kernel.rho(pts[j].first - pts[i].first) * pts[i].second * pts[j].second;
    }
  }
  return total;
}

}  // namespace detail

/// Drift of the immigration term at grid step k: <rate(t_k, .) phi, m>.
using ImmigrationDrift = std::function<double(std::size_t k, const Snapshot& s)>;

inline ImmigrationDrift fixed_drift(const ImmigrationRate& eta, const ReferenceMeasure& m, RealFn phi) {
  return [&eta, &m, phi](std::size_t, const Snapshot& s) {
    return m.integrate([&](double a) { return eta(s.time, a) * phi(a); });
  };
}

/// Interactive drift evaluated on the left-limit state (snapshot k - 1 for the
/// interval (t_{k-1}, t_k]), matching the thinning rule.
inline ImmigrationDrift interactive_drift(const ImmigrationRate& q, const ReferenceMeasure& m, RealFn phi) {
  return [&q, &m, phi](std::size_t, const Snapshot& s) {
    const AtomicMeasure mu = s.measure();
    return m.integrate([&](double a) { return q(mu, s.time, a) * phi(a); });
  };
}

struct MartingaleSeries {
  std::vector<double> m;                   // M_t(phi) on the grid
  std::vector<double> realized_qv;         // sum of (dM)^2 up to t
  std::vector<double> predicted_qv;        // trapezoid of the quadratic-variation integrand
};

/// M_t(phi) = <phi, Y_t> - <phi, Y_0> - rho0/2 int <phi'', Y_s> ds - int drift ds,
/// with trapezoid time integrals. For interactive rates the drift over
/// (t_{k-1}, t_k] is taken at snapshot k - 1, so the drift integral is a left
/// Riemann sum.
inline MartingaleSeries martingale_residual(const SuperprocessPath& path, const TestFunction& phi,
                                            const CorrelationKernel& kernel, double sigma,
                                            const ImmigrationDrift& drift, bool left_point_drift = false) {
  MartingaleSeries out;
  const std::size_t n = path.snapshots.size();
  out.m.assign(n, 0.0);
  out.realized_qv.assign(n, 0.0);
  out.predicted_qv.assign(n, 0.0);
  if (n == 0) return out;
  const double dt = path.grid.dt;
  const double rho0 = kernel.rho0();
  std::vector<double> pair_phi(n), pair_d2(n), drifts(n), qv(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Snapshot& s = path.snapshots[k];
    pair_phi[k] = s.pair(phi.f);
    pair_d2[k] = s.pair(phi.d2);
    drifts[k] = drift ? drift(k, s) : 0.0;
    qv[k] = sigma * s.pair([&](double x) { return phi.f(x) * phi.f(x); }) + detail::flow_quadratic(s, kernel, phi.d1);
  }
  double diffusion = 0.0, immigration = 0.0, predicted = 0.0, realized = 0.0;
  for (std::size_t k = 1; k < n; ++k) {
    diffusion += 0.5 * (pair_d2[k - 1] + pair_d2[k]) * dt;
    immigration += left_point_drift ? drifts[k - 1] * dt : 0.5 * (drifts[k - 1] + drifts[k]) * dt;
    predicted += 0.5 * (qv[k - 1] + qv[k]) * dt;
    out.m[k] = pair_phi[k] - pair_phi[0] - 0.5 * rho0 * diffusion - immigration;
    const double dm = out.m[k] - out.m[k - 1];
    realized += dm * dm;
    out.realized_qv[k] = realized;
    out.predicted_qv[k] = predicted;
  }
  return out;
}

// ---------------------------------------------------------------------------
// First-moment formula

/// <P_t phi, mu> + int_0^t <eta(s, .) P_{t-s} phi, m> ds.
inline double first_moment_target(const RealFn& phi, const InitialCondition& mu0,
                                  const std::function<double(double, double)>& eta, const ReferenceMeasure& m,
                                  double rho0, double t, double tol = 1e-9) {
  const auto pt = [&](double u, double x) { return heat_semigroup(phi, u, rho0, x); };
  double total = pair(mu0.atoms, [&](double x) { return pt(t, x); });
  if (mu0.diffuse) total += mu0.diffuse->integrate([&](double x) { return pt(t, x); });
  if (t > 0.0) {
    const auto inner = [&](double s) { return m.integrate([&](double a) { return eta(s, a) * pt(t - s, a); }); };
    total += detail::integrate(inner, 0.0, t, tol);
  }
  return total;
}

inline VerificationReport first_moment_check(std::span<const double> samples, double target, std::string name) {
  return mean_equals(std::move(name), "first-moment formula", samples, target);
}

// ---------------------------------------------------------------------------
// Gronwall bounds

/// Moment bounds for <phi_p, Y_t>. Fixed-rate form:
///   E<phi_p,Y_t> <= G_t + a int_0^t G_s e^{a(t-s)} ds,  a = c ||rho|| / 2,
///   G_t = <phi_p,mu> + int_0^t <eta(s) phi_p, m> ds;
///   E sup <phi_p,Y_s>^2 <= H_t + C(t) int_0^t H_s e^{C(t)(t-s)} ds,
///   C(t) = c^2 ||rho|| (16 + ||rho|| t),
///   H_t = 4<phi_p,mu>^2 + 4t int_0^t <eta(s) phi_p, m>^2 ds + 16 sigma int_0^t E<phi_p,Y_s> ds.
/// Interactive form: a = C_1 = K + c ||rho|| / 2, G_t = <phi_p,mu> + K t,
///   H_t = 4<phi_p,mu>^2 + 4 K^2 t^2 + 8 (K t + 2 sigma) int_0^t E<phi_p,Y_s> ds.
/// E<phi_p,Y_s> inside H is replaced by its own first-moment bound.
class GronwallBound {
 public:
  static GronwallBound fixed_rate(double p, double norm_rho, double sigma, double mu_pair,
                                  std::function<double(double)> immigration_pair) {
    GronwallBound b(p, norm_rho, sigma, mu_pair);
    b.interactive_ = false;
    b.eta_pair_ = std::move(immigration_pair);
    return b;
  }
  static GronwallBound interactive(double p, double norm_rho, double sigma, double mu_pair, double K) {
    if (!(K > 0.0)) throw ConfigError("growth constant K must be > 0");
    GronwallBound b(p, norm_rho, sigma, mu_pair);
    b.interactive_ = true;
    b.K_ = K;
    return b;
  }

  double c_p() const { return c_; }
  double norm_rho() const { return rho_; }
  double K() const { return K_; }
  double C1() const { return interactive_ ? K_ + 0.5 * c_ * rho_ : 0.5 * c_ * rho_; }
  double C2(double t) const { return c_ * c_ * rho_ * (16.0 + rho_ * t); }

  double G(double t) const {
    if (interactive_) return mu_ + K_ * t;
    return mu_ + quad(eta_pair_, 0.0, t);
  }

  double first_moment(double t) const {
    const double a = C1();
    return G(t) + a * quad([&](double s) { return G(s) * std::exp(a * (t - s)); }, 0.0, t);
  }

  double H(double t) const {
    const double occupation = quad([&](double s) { return first_moment(s); }, 0.0, t);
    if (interactive_) return 4.0 * mu_ * mu_ + 4.0 * K_ * K_ * t * t + 8.0 * (K_ * t + 2.0 * sigma_) * occupation;
    const double sq = quad([&](double s) { return eta_pair_(s) * eta_pair_(s); }, 0.0, t);
    return 4.0 * mu_ * mu_ + 4.0 * t * sq + 16.0 * sigma_ * occupation;
  }

  double second_moment(double t) const {
    const double c2 = C2(t);
    return H(t) + c2 * quad([&](double s) { return H(s) * std::exp(c2 * (t - s)); }, 0.0, t);
  }

 private:
  GronwallBound(double p, double norm_rho, double sigma, double mu_pair)
      : c_(TemperWeight(p).c_p()), rho_(norm_rho), sigma_(sigma), mu_(mu_pair) {
    if (!(norm_rho > 0.0)) throw ConfigError("||rho|| must be > 0");
  }

  template <class F>
  static double quad(F&& f, double a, double b) {
    if (!(b > a)) return 0.0;
    return boost::math::quadrature::gauss<double, 30>::integrate(f, a, b);
  }

  double c_ = 0.0;
  double rho_ = 0.0;
  double sigma_ = 0.0;
  double mu_ = 0.0;
  double K_ = 0.0;
  bool interactive_ = false;
  std::function<double(double)> eta_pair_;
};

/// One-sided checks of both bounds at time t from per-replicate <phi_p, Y_t>
/// and sup_{s<=t} <phi_p, Y_s>^2.
inline std::vector<VerificationReport> gronwall_check(std::span<const double> pair_at_t,
                                                      std::span<const double> sup_square, const GronwallBound& bound,
                                                      double t, const std::string& label) {
  std::vector<VerificationReport> out;
  out.push_back(mean_below(label + ": E<phi_p,Y_t> bound", "first-moment Gronwall bound", pair_at_t,
                           bound.first_moment(t)));
  out.push_back(mean_below(label + ": E sup <phi_p,Y_s>^2 bound", "second-moment Gronwall bound", sup_square,
                           bound.second_moment(t)));
  return out;
}

}  // namespace isdsm
