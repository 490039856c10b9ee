#pragma once

// Critical Feller branching diffusion d xi = sqrt(sigma xi) dB and its
// excursion law, sampled through the W_eps truncation {w : w(eps) > 0}.

#include <algorithm>
#include <random>
#include <span>
#include <vector>

#include "isdsm/errors.hpp"
#include "isdsm/grid.hpp"
#include "isdsm/rng.hpp"

namespace isdsm {

struct FellerParams {
  double sigma = 1.0;

  explicit FellerParams(double s = 1.0) : sigma(s) {
    if (!(sigma > 0.0)) throw ConfigError("branching rate sigma must be > 0");
  }
};

/// Exact transition draw: xi_{t+dt} given xi_t = x is a Poisson(2x/(sigma dt))
/// number of independent exponentials with mean sigma dt / 2.
template <class Rng>
double feller_step(double x, double dt, double sigma, Rng& rng) {
  if (x <= 0.0) return 0.0;
  const double scale = 0.5 * sigma * dt;
  std::poisson_distribution<long long> count(x / scale);
  const long long n = count(rng);
  if (n == 0) return 0.0;
  std::gamma_distribution<double> total(static_cast<double>(n), scale);
  return total(rng);
}

/// Chains feller_step over an increasing grid; path[0] = x0.
template <class Rng>
std::vector<double> feller_path(double x0, std::span<const double> grid, double sigma, Rng& rng) {
  std::vector<double> path(grid.size(), 0.0);
  if (grid.empty()) return path;
  path[0] = x0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double dt = grid[i] - grid[i - 1];
    if (!(dt > 0.0)) throw UsageError("feller_path: grid must be strictly increasing");
    path[i] = feller_step(path[i - 1], dt, sigma, rng);
  }
  return path;
}

/// Total excursion-law mass of W_eps, the Poisson intensity per unit of
/// (time, reference mass, mark).
inline double excursion_rate(double eps, double sigma) {
  if (!(eps > 0.0)) throw UsageError("excursion_rate: eps must be > 0");
  return 2.0 / (sigma * eps);
}

/// One excursion started at (birth_time, site) with mark u, observed from
/// birth_time + eps onwards. times[0] = birth_time + eps and values[0] > 0;
/// the value list ends at the first zero (absorption), later values are 0.
struct Excursion {
  double birth_time = 0.0;
  double site = 0.0;
  double mark = 0.0;
  std::vector<double> times;
  std::vector<double> values;

  double entrance_time() const { return times.empty() ? birth_time : times.front(); }
  bool absorbed() const { return !values.empty() && values.back() == 0.0; }

  /// Value at an observation time; 0 before the entrance time and after
  /// absorption. t must be one of `times` or later than all of them.
  double value_at(double t) const {
    if (times.empty() || t < times.front()) return 0.0;
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const auto idx = static_cast<std::size_t>(it - times.begin()) - 1;
    if (times[idx] == t) return values[idx];
    if (idx + 1 == times.size() && absorbed()) return 0.0;
    throw UsageError("Excursion::value_at: time is not an observation time");
  }
};

/// Entrance at age eps: w(eps) ~ Exponential(mean sigma eps / 2); the total
/// mass of W_eps is excursion_rate(eps). Then Feller transitions to every
/// observation time in `later` (absolute times > birth + eps), stopping at
/// absorption.
template <class Rng>
Excursion excursion_sample(double birth_time, double site, double mark, double eps, std::span<const double> later,
                           double sigma, Rng& rng) {
  if (!(eps > 0.0)) throw UsageError("excursion_sample: eps must be > 0");
  Excursion e;
  e.birth_time = birth_time;
  e.site = site;
  e.mark = mark;
  e.times.push_back(birth_time + eps);
  std::exponential_distribution<double> entrance(2.0 / (sigma * eps));
  double w = entrance(rng);
  while (w <= 0.0) w = entrance(rng);
  e.values.push_back(w);
  double t = birth_time + eps;
  for (double next : later) {
    if (!(next > t)) throw UsageError("excursion_sample: observation times must increase past the entrance time");
    w = feller_step(w, next - t, sigma, rng);
    t = next;
    e.times.push_back(t);
    e.values.push_back(w);
    if (w == 0.0) break;
  }
  return e;
}

/// Observation times after birth + eps on a uniform simulation grid.
inline std::vector<double> grid_times_after(const TimeGrid& grid, double t) {
  std::vector<double> out;
  for (std::size_t i = grid.index_at_or_after(t); i <= grid.steps; ++i) {
    const double g = grid.time(i);
    if (g > t) out.push_back(g);
  }
  return out;
}

/// Convenience form: birth at 0, observed at eps and on `ages` (> eps).
template <class Rng>
Excursion excursion_sample(double eps, std::span<const double> ages, double sigma, Rng& rng) {
  return excursion_sample(0.0, 0.0, 0.0, eps, ages, sigma, rng);
}

}  // namespace isdsm
