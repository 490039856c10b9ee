#pragma once

// Reference immigration measure m and immigration rates: a predictable
// eta(s, a) bounded by q_max, or an interactive q(mu, a) bounded by q_max.

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "isdsm/errors.hpp"
#include "isdsm/measures.hpp"

namespace isdsm {

/// Lebesgue density on [lo, hi], sampled by rejection against `bound`.
struct DensityMeasure {
  std::function<double(double)> density;
  double lo = -1.0;
  double hi = 1.0;
  double bound = 1.0;
};

/// Lebesgue measure restricted to [-half_width, half_width].
struct LebesgueWindow {
  double half_width = 1.0;
};

/// m: finite atoms, a bounded density on a window, or windowed Lebesgue.
class ReferenceMeasure {
 public:
  ReferenceMeasure() = default;
  explicit ReferenceMeasure(AtomicMeasure atoms) : rep_(std::move(atoms)) {}
  explicit ReferenceMeasure(DensityMeasure d) : rep_(std::move(d)) {
    const auto& dm = std::get<DensityMeasure>(rep_);
    if (!(dm.hi > dm.lo) || !(dm.bound > 0.0)) throw ConfigError("density measure needs hi > lo and bound > 0");
  }
  explicit ReferenceMeasure(LebesgueWindow w) : rep_(w) {
    if (!(w.half_width > 0.0)) throw ConfigError("lebesgue window half_width must be > 0");
  }

  bool is_atomic() const { return std::holds_alternative<AtomicMeasure>(rep_); }
  bool is_lebesgue() const { return std::holds_alternative<LebesgueWindow>(rep_); }
  const AtomicMeasure* atoms() const { return std::get_if<AtomicMeasure>(&rep_); }
  const LebesgueWindow* lebesgue() const { return std::get_if<LebesgueWindow>(&rep_); }

  double total_mass() const { return integrate([](double) { return 1.0; }); }

  /// <f, m>, exact for atoms and by adaptive quadrature otherwise.
  double integrate(const std::function<double(double)>& f) const {
    if (const auto* a = std::get_if<AtomicMeasure>(&rep_)) return pair(*a, f);
    using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
    if (const auto* w = std::get_if<LebesgueWindow>(&rep_)) {
      return GK::integrate(f, -w->half_width, 0.0, 20, 1e-12) + GK::integrate(f, 0.0, w->half_width, 20, 1e-12);
    }
    const auto& d = std::get<DensityMeasure>(rep_);
    return GK::integrate([&](double x) { return f(x) * d.density(x); }, d.lo, d.hi, 20, 1e-12);
  }

  /// A site drawn from m / <1, m>.
  template <class Rng>
  double sample(Rng& rng) const {
    if (const auto* a = std::get_if<AtomicMeasure>(&rep_)) {
      const double total = a->total_mass();
      double u = rng.uniform() * total;
      for (const Atom& atom : a->atoms()) {
        if (u <= atom.mass) return atom.position;
        u -= atom.mass;
      }
      return a->atoms().back().position;
    }
    if (const auto* w = std::get_if<LebesgueWindow>(&rep_)) return -w->half_width + 2.0 * w->half_width * rng.uniform();
    const auto& d = std::get<DensityMeasure>(rep_);
    for (int tries = 0; tries < 1000000; ++tries) {
      const double x = d.lo + (d.hi - d.lo) * rng.uniform();
      const double v = d.density(x);
      if (v > d.bound) throw ConfigError("density exceeds its declared rejection bound");
      if (rng.uniform() * d.bound <= v) return x;
    }
    throw ConfigError("density rejection sampling failed (density nearly zero on its window)");
  }

 private:
  std::variant<AtomicMeasure, DensityMeasure, LebesgueWindow> rep_{AtomicMeasure{}};
};

/// Immigration rate presets. The rate may depend on the site a and on the
/// state mu only through the functional <phi_p, mu>.
struct RateSpec {
  enum class Kind { kConstant, kSiteBump, kMassSigmoid, kMassDecay, kTable };
  Kind kind = Kind::kConstant;
  double value = 0.0;      // constant
  double q_inf = 0.0;      // site bump: q_inf + amplitude * exp(-a^2 / (2 width^2))
  double amplitude = 0.0;  // site bump, mass decay
  double width = 1.0;
  double low = 0.0;  // mass sigmoid: low + (high - low) / (1 + exp(-(M - center) / scale))
  double high = 0.0;
  double center = 0.0;
  double scale = 1.0;   // mass sigmoid, mass decay: limit + amplitude * exp(-M / scale)
  double limit = 0.0;   // mass decay
  double p = 0.0;       // M = <phi_p, mu>
  std::vector<double> table_a, table_q;

  static RateSpec constant(double c) {
    RateSpec r;
    r.kind = Kind::kConstant;
    r.value = c;
    return r;
  }
  static RateSpec site_bump(double q_inf, double amplitude, double width) {
    RateSpec r;
    r.kind = Kind::kSiteBump;
    r.q_inf = q_inf;
    r.amplitude = amplitude;
    r.width = width;
    return r;
  }
  static RateSpec mass_sigmoid(double low, double high, double center, double scale, double p = 0.0) {
    RateSpec r;
    r.kind = Kind::kMassSigmoid;
    r.low = low;
    r.high = high;
    r.center = center;
    r.scale = scale;
    r.p = p;
    return r;
  }
  static RateSpec mass_decay(double limit, double amplitude, double scale, double p = 0.0) {
    RateSpec r;
    r.kind = Kind::kMassDecay;
    r.limit = limit;
    r.amplitude = amplitude;
    r.scale = scale;
    r.p = p;
    return r;
  }
  static RateSpec table(const std::string& path);

  bool depends_on_state() const { return kind == Kind::kMassSigmoid || kind == Kind::kMassDecay; }

  /// q given M = <phi_p, mu> and site a.
  double evaluate(double mass_functional, double a) const {
    switch (kind) {
      case Kind::kConstant:
        return value;
      case Kind::kSiteBump:
        return q_inf + amplitude * std::exp(-a * a / (2.0 * width * width));
      case Kind::kMassSigmoid:
        return low + (high - low) / (1.0 + std::exp(-(mass_functional - center) / scale));
      case Kind::kMassDecay:
        return limit + amplitude * std::exp(-mass_functional / scale);
      case Kind::kTable: {
        if (a <= table_a.front()) return table_q.front();
        if (a >= table_a.back()) return table_q.back();
        const auto it = std::upper_bound(table_a.begin(), table_a.end(), a);
        const std::size_t i = static_cast<std::size_t>(it - table_a.begin());
        const double w = (a - table_a[i - 1]) / (table_a[i] - table_a[i - 1]);
        return (1.0 - w) * table_q[i - 1] + w * table_q[i];
      }
    }
    return 0.0;
  }

  double evaluate(const AtomicMeasure& mu, double a) const {
    return evaluate(depends_on_state() ? pair(mu, [this](double x) { return phi_p(x, p); }) : 0.0, a);
  }

  /// Site profile q(a) = lim q(nu, a) as <1, nu> -> infinity.
  double large_mass_limit(double a) const {
    switch (kind) {
      case Kind::kMassSigmoid:
        return high;
      case Kind::kMassDecay:
        return limit;
      default:
        return evaluate(0.0, a);
    }
  }

  /// lim q(nu, a) as |a| -> infinity, for site-only rates.
  double far_field_limit() const {
    switch (kind) {
      case Kind::kConstant:
        return value;
      case Kind::kSiteBump:
        return q_inf;
      case Kind::kTable:
        if (table_q.front() != table_q.back()) throw ConfigError("table rate has different limits at +-infinity");
        return table_q.back();
      default:
        throw ConfigError("far-field limit needs a site-only rate");
    }
  }

  /// Lipschitz constant of q in <phi_p, mu>.
  double lipschitz() const {
    switch (kind) {
      case Kind::kMassSigmoid:
        return std::abs(high - low) / (4.0 * scale);
      case Kind::kMassDecay:
        return std::abs(amplitude) / scale;
      default:
        return 0.0;
    }
  }

  /// sup over (mu, a) of q.
  double supremum() const {
    switch (kind) {
      case Kind::kConstant:
        return value;
      case Kind::kSiteBump:
        return std::max(q_inf, q_inf + amplitude);
      case Kind::kMassSigmoid:
        return std::max(low, high);
      case Kind::kMassDecay:
        return std::max(limit, limit + amplitude);
      case Kind::kTable:
        return *std::max_element(table_q.begin(), table_q.end());
    }
    return 0.0;
  }

  double infimum() const {
    switch (kind) {
      case Kind::kConstant:
        return value;
      case Kind::kSiteBump:
        return std::min(q_inf, q_inf + amplitude);
      case Kind::kMassSigmoid:
        return std::min(low, high);
      case Kind::kMassDecay:
        return std::min(limit, limit + amplitude);
      case Kind::kTable:
        return *std::min_element(table_q.begin(), table_q.end());
    }
    return 0.0;
  }
};

inline RateSpec RateSpec::table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("rate table not readable: " + path);
  RateSpec r;
  r.kind = Kind::kTable;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    double a, q;
    if (!(row >> a >> q)) continue;
    r.table_a.push_back(a);
    r.table_q.push_back(q);
  }
  if (r.table_a.size() < 2) throw ConfigError("rate table needs at least 2 rows: " + path);
  for (std::size_t i = 1; i < r.table_a.size(); ++i) {
    if (!(r.table_a[i] > r.table_a[i - 1])) throw ConfigError("rate table sites must increase: " + path);
  }
  return r;
}

/// Immigration rate with its declared bounds. Predictable rates are functions
/// of (s, a); interactive rates see the state strictly before s.
class ImmigrationRate {
 public:
  using Predictable = std::function<double(double s, double a)>;
  using Interactive = std::function<double(const AtomicMeasure& mu, double a)>;

  static ImmigrationRate predictable(Predictable eta, double q_max) {
    ImmigrationRate r;
    r.eta_ = std::move(eta);
    r.q_max_ = q_max;
    r.validate();
    return r;
  }
  static ImmigrationRate interactive(Interactive q, double q_max, double growth_k = 0.0,
                                     std::function<double(double)> lipschitz = {}) {
    ImmigrationRate r;
    r.q_ = std::move(q);
    r.q_max_ = q_max;
    r.growth_k_ = growth_k;
    r.lipschitz_ = std::move(lipschitz);
    r.validate();
    return r;
  }
  static ImmigrationRate constant(double c) {
    return predictable([c](double, double) { return c; }, c);
  }
  static ImmigrationRate from_spec(const RateSpec& spec, double q_max) {
    if (spec.supremum() > q_max) throw ConfigError("rate preset exceeds declared q_max");
    if (spec.infimum() < 0.0) throw ConfigError("rate preset takes negative values");
    if (!spec.depends_on_state()) {
      return predictable([spec](double, double a) { return spec.evaluate(0.0, a); }, q_max);
    }
    const double lip = spec.lipschitz();
    return interactive([spec](const AtomicMeasure& mu, double a) { return spec.evaluate(mu, a); }, q_max, 0.0,
                       [lip](double) { return lip; });
  }

  bool is_interactive() const { return static_cast<bool>(q_); }
  double q_max() const { return q_max_; }
  double growth_k() const { return growth_k_; }
  double lipschitz(double radius) const { return lipschitz_ ? lipschitz_(radius) : 0.0; }

  double operator()(double s, double a) const {
    if (!eta_) throw UsageError("interactive rate evaluated without a state");
    return checked(eta_(s, a));
  }
  double operator()(const AtomicMeasure& mu, double s, double a) const {
    return q_ ? checked(q_(mu, a)) : (*this)(s, a);
  }

 private:
  void validate() const {
    if (!(q_max_ >= 0.0) || !std::isfinite(q_max_)) throw ConfigError("q_max must be finite and >= 0");
  }
  double checked(double v) const {
    if (!std::isfinite(v) || v < 0.0) throw EvaluationError("immigration rate returned a negative or non-finite value");
    if (v > q_max_ * (1.0 + 1e-12)) {
      std::ostringstream msg;
      msg << "immigration rate " << v << " exceeds declared q_max " << q_max_;
      throw EvaluationError(msg.str());
    }
    return v;
  }

  Predictable eta_;
  Interactive q_;
  double q_max_ = 0.0;
  double growth_k_ = 0.0;
  std::function<double(double)> lipschitz_;
};

}  // namespace isdsm
