#pragma once

// Correlation kernel rho(x) = int h(y - x) h(y) dy of the shared-noise flow,
// and the Brownian heat semigroup with speed rho(0).

#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>
#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "isdsm/errors.hpp"

namespace isdsm {

using RealFn = std::function<double(double)>;

struct QuadConfig {
  /// h is treated as zero outside [support_lo, support_hi].
  double support_lo = -1.0;
  double support_hi = 1.0;
  double tolerance = 1e-10;
  /// Number of tabulation nodes for rho on [-(hi-lo), hi-lo].
  std::size_t grid_points = 4097;
};

namespace detail {

template <class F>
double integrate(F&& f, double a, double b, double tol) {
  if (!(b > a)) return 0.0;
  double error = 0.0;
  const double value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 15, tol, &error);
  return value;
}

}  // namespace detail

/// Tabulated correlation function of a noise kernel h. Immutable.
class CorrelationKernel {
 public:
  CorrelationKernel(RealFn h, double support_lo, double support_hi, std::vector<double> table, double span)
      : h_(std::move(h)), support_lo_(support_lo), support_hi_(support_hi), span_(span) {
    const double step = 2.0 * span_ / static_cast<double>(table.size() - 1);
    rho0_ = table[(table.size() - 1) / 2];
    rho_sup_ = 0.0;
    for (double v : table) rho_sup_ = std::max(rho_sup_, std::abs(v));
    spline_ = std::make_shared<const boost::math::interpolators::cardinal_cubic_b_spline<double>>(
        table.begin(), table.end(), -span_, step, 0.0, 0.0);
    table_ = std::move(table);
  }

  double operator()(double x) const { return rho(x); }
  double rho(double x) const {
    if (std::abs(x) >= span_) return 0.0;
    if (x == 0.0) return rho0_;
    return (*spline_)(x);
  }
  double rho_d1(double x) const { return std::abs(x) >= span_ ? 0.0 : spline_->prime(x); }
  double rho_d2(double x) const { return std::abs(x) >= span_ ? 0.0 : spline_->double_prime(x); }

  double rho0() const { return rho0_; }
  /// ||rho|| = sup |rho|; equals rho(0) by Cauchy-Schwarz up to quadrature error.
  double rho_sup() const { return rho_sup_; }
  /// rho vanishes for |x| >= span (twice the effective support radius of h).
  double span() const { return span_; }

  const RealFn& h() const { return h_; }
  double h_support_lo() const { return support_lo_; }
  double h_support_hi() const { return support_hi_; }

  /// Tabulation nodes, ordered from -span to +span.
  const std::vector<double>& table() const { return table_; }
  double node(std::size_t i) const {
    return -span_ + 2.0 * span_ * static_cast<double>(i) / static_cast<double>(table_.size() - 1);
  }

 private:
  RealFn h_;
  double support_lo_;
  double support_hi_;
  double span_;
  double rho0_ = 0.0;
  double rho_sup_ = 0.0;
  std::vector<double> table_;
  std::shared_ptr<const boost::math::interpolators::cardinal_cubic_b_spline<double>> spline_;
};

/// Builds rho from h by adaptive Gauss-Kronrod quadrature at every node. When
/// h is piecewise cubic with the given knots, each node is integrated exactly
/// by a 4-point Gauss rule on the merged knot intervals instead.
inline CorrelationKernel rho_from_h(const RealFn& h, const QuadConfig& cfg, const std::vector<double>& knots = {}) {
  const double lo = cfg.support_lo;
  const double hi = cfg.support_hi;
  if (!(hi > lo)) throw ConfigError("kernel support window must have positive length");
  if (cfg.grid_points < 5 || cfg.grid_points % 2 == 0) throw ConfigError("kernel grid_points must be odd and >= 5");

  const auto h2 = [&](double y) { return h(y) * h(y); };
  const double width = hi - lo;
  const double inner = detail::integrate(h2, lo, hi, 1e-13);
  const double tail = detail::integrate(h2, hi, hi + width, 1e-13) + detail::integrate(h2, lo - width, lo, 1e-13);
  if (!std::isfinite(inner) || !(inner > 0.0)) throw ConfigError("kernel h has zero or non-finite L2 mass on its window");
  if (tail > cfg.tolerance * inner) {
    std::ostringstream msg;
    msg << "kernel h has L2 tail mass " << tail << " outside [" << lo << ", " << hi << "] (tolerance "
        << cfg.tolerance * inner << ")";
    throw ConfigError(msg.str());
  }

  const double span = width;
  std::vector<double> table(cfg.grid_points);
  for (std::size_t i = 0; i < cfg.grid_points; ++i) {
    const double x = -span + 2.0 * span * static_cast<double>(i) / static_cast<double>(cfg.grid_points - 1);
    const double a = std::max(lo, lo + x);
    const double b = std::min(hi, hi + x);
    const auto prod = [&](double y) { return h(y - x) * h(y); };
    if (knots.empty()) {
      table[i] = detail::integrate(prod, a, b, 1e-13);
      continue;
    }
    std::vector<double> cuts{a, b};
    for (double k : knots) {
      if (k > a && k < b) cuts.push_back(k);
      if (k + x > a && k + x < b) cuts.push_back(k + x);
    }
    std::sort(cuts.begin(), cuts.end());
    double sum = 0.0;
    for (std::size_t j = 1; j < cuts.size(); ++j) {
      if (cuts[j] > cuts[j - 1]) sum += boost::math::quadrature::gauss<double, 4>::integrate(prod, cuts[j - 1], cuts[j]);
    }
    table[i] = sum;
  }
  table.front() = 0.0;
  table.back() = 0.0;

  RealFn clipped = [h, lo, hi](double y) { return (y < lo || y > hi) ? 0.0 : h(y); };
  return CorrelationKernel(std::move(clipped), lo, hi, std::move(table), span);
}

/// h(y) = amplitude * exp(-y^2 / (2 width^2)), truncated at 9 widths.
inline CorrelationKernel gaussian_kernel(double amplitude, double width, std::size_t grid_points = 4097) {
  if (!(amplitude > 0.0) || !(width > 0.0)) throw ConfigError("gaussian kernel needs amplitude > 0 and width > 0");
  const RealFn h = [amplitude, width](double y) { return amplitude * std::exp(-y * y / (2.0 * width * width)); };
  QuadConfig cfg;
  cfg.support_lo = -9.0 * width;
  cfg.support_hi = 9.0 * width;
  cfg.grid_points = grid_points;
  return rho_from_h(h, cfg);
}

/// h from a two-column CSV (y, h(y)), monotone cubic interpolation, zero
/// outside the tabulated range.
inline CorrelationKernel table_kernel(const std::string& path, std::size_t grid_points = 4097) {
  std::ifstream in(path);
  if (!in) throw ConfigError("kernel table not readable: " + path);
  std::vector<double> ys, hs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::istringstream row(line);
    double y, v;
    if (!(row >> y >> v)) continue;  // header
    ys.push_back(y);
    hs.push_back(v);
  }
  if (ys.size() < 4) throw ConfigError("kernel table needs at least 4 rows: " + path);
  for (std::size_t i = 1; i < ys.size(); ++i) {
    if (!(ys[i] > ys[i - 1])) throw ConfigError("kernel table y column must be strictly increasing: " + path);
  }
  const double lo = ys.front();
  const double hi = ys.back();
  const std::vector<double> knots = ys;
  auto interp = std::make_shared<boost::math::interpolators::pchip<std::vector<double>>>(std::move(ys), std::move(hs));
  const RealFn h = [interp, lo, hi](double y) { return (y < lo || y > hi) ? 0.0 : (*interp)(y); };
  QuadConfig cfg;
  cfg.support_lo = lo;
  cfg.support_hi = hi;
  cfg.grid_points = grid_points;
  return rho_from_h(h, cfg, knots);
}

/// P_t phi(x) = int g_{rho0 t}(x, z) phi(z) dz, Gaussian density of variance rho0 t.
inline double heat_semigroup(const RealFn& phi, double t, double rho0, double x, double tol = 1e-12) {
  if (!(t >= 0.0)) throw UsageError("heat_semigroup: t must be >= 0");
  if (!(rho0 > 0.0)) throw UsageError("heat_semigroup: rho0 must be > 0");
  if (t == 0.0) return phi(x);
  const double sd = std::sqrt(rho0 * t);
  constexpr double kCut = 12.0;
  const double density_at_cut = std::exp(-0.5 * kCut * kCut) / std::sqrt(2.0 * M_PI);
  const double edge = density_at_cut * (std::abs(phi(x - kCut * sd)) + std::abs(phi(x + kCut * sd)));
  if (!std::isfinite(edge) || edge > tol) throw ConfigError("heat_semigroup: test function grows too fast for the quadrature window");
  const auto integrand = [&](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI) * phi(x + sd * z); };
  return detail::integrate(integrand, -kCut, 0.0, tol) + detail::integrate(integrand, 0.0, kCut, tol);
}

}  // namespace isdsm
