#pragma once

// Occupation-window estimator of local times. For a trajectory x and
// bandwidth delta,
//
//   l(b, [0, t]) = (1 / 2 delta) Leb{u <= t : b - delta < x(u) <= b + delta},
//
// integrated in time with the trapezoid rule on the simulation grid. The
// superprocess field z(b, t) weights each atom by its excursion mass.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <vector>

#include "isdsm/errors.hpp"
#include "isdsm/grid.hpp"
#include "isdsm/stats.hpp"
#include "isdsm/superprocess.hpp"

namespace isdsm {

/// Smallest bandwidth for which the estimator is considered valid at step dt.
inline double min_bandwidth(double rho0, double dt) { return 2.0 * std::sqrt(rho0 * dt); }

inline double default_bandwidth(double rho0, double dt) { return 4.0 * std::sqrt(rho0 * dt); }

inline void check_bandwidth(double delta, double rho0, double dt) {
  if (!(delta > 0.0)) throw ConfigError("local time bandwidth must be > 0");
  if (delta < min_bandwidth(rho0, dt) * (1.0 - 1e-12)) {
    std::ostringstream msg;
    msg << "bandwidth " << delta << " too small for step " << dt << " (need >= 2 sqrt(rho0 dt) = "
        << min_bandwidth(rho0, dt) << ")";
    throw ConfigError(msg.str());
  }
}

inline bool in_window(double x, double b, double delta) { return x > b - delta && x <= b + delta; }

/// l(b, [0, t_i]) for every grid time of a single trajectory.
inline std::vector<double> brownian_local_time(std::span<const double> times, std::span<const double> path, double b,
                                               double delta, double rho0) {
  if (times.size() != path.size()) throw UsageError("brownian_local_time: times and path differ in length");
  std::vector<double> out(times.size(), 0.0);
  for (std::size_t i = 1; i < times.size(); ++i) {
    const double dt = times[i] - times[i - 1];
    check_bandwidth(delta, rho0, dt);
    const double f0 = in_window(path[i - 1], b, delta) ? 1.0 : 0.0;
    const double f1 = in_window(path[i], b, delta) ? 1.0 : 0.0;
    out[i] = out[i - 1] + 0.5 * (f0 + f1) * dt / (2.0 * delta);
  }
  return out;
}

/// z(b, t) on b_grid x t_grid, stored row-major by time: values[it * nb + ib].
struct LocalTimeField {
  std::vector<double> b_grid;
  std::vector<double> t_grid;
  double delta = 0.0;
  std::vector<double> values;

  std::size_t nb() const { return b_grid.size(); }
  std::size_t nt() const { return t_grid.size(); }
  double z(std::size_t ib, std::size_t it) const { return values[it * nb() + ib]; }
  double& z(std::size_t ib, std::size_t it) { return values[it * nb() + ib]; }

  /// Trapezoid integral over b at time index it.
  double integral(std::size_t it) const {
    double s = 0.0;
    for (std::size_t i = 1; i < nb(); ++i) s += 0.5 * (z(i - 1, it) + z(i, it)) * (b_grid[i] - b_grid[i - 1]);
    return s;
  }

  bool monotone() const {
    for (std::size_t it = 1; it < nt(); ++it) {
      for (std::size_t ib = 0; ib < nb(); ++ib) {
        if (z(ib, it) < z(ib, it - 1)) return false;
      }
    }
    return true;
  }
};

/// Uniform b grid with spacing delta / per_bandwidth covering [lo, hi]. With
/// this spacing every atom covers exactly 2 * per_bandwidth nodes, so the
/// trapezoid b-integral of the estimator reproduces the occupation mass.
inline std::vector<double> bandwidth_grid(double lo, double hi, double delta, std::size_t per_bandwidth = 4) {
  const double db = delta / static_cast<double>(per_bandwidth);
  const auto i0 = static_cast<std::int64_t>(std::floor(lo / db));
  const auto i1 = static_cast<std::int64_t>(std::ceil(hi / db));
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(i1 - i0 + 1));
  for (std::int64_t i = i0; i <= i1; ++i) out.push_back(static_cast<double>(i) * db);
  return out;
}

/// Streams snapshots and accumulates z on a uniform b grid. Only the rows at
/// the requested t_grid indices are stored.
class LocalTimeAccumulator {
 public:
  LocalTimeAccumulator(std::vector<double> b_grid, const TimeGrid& grid, std::vector<std::size_t> t_indices,
                       double delta, double rho0)
      : grid_(grid), t_indices_(std::move(t_indices)) {
    check_bandwidth(delta, rho0, grid.dt);
    if (b_grid.size() < 2) throw UsageError("local time field needs at least two b nodes");
    field_.b_grid = std::move(b_grid);
    field_.delta = delta;
    db_ = field_.b_grid[1] - field_.b_grid[0];
    for (std::size_t i = 1; i < field_.b_grid.size(); ++i) {
      if (std::abs(field_.b_grid[i] - field_.b_grid[i - 1] - db_) > 1e-9 * db_) {
        throw UsageError("local time b grid must be uniform");
      }
    }
    if (!std::is_sorted(t_indices_.begin(), t_indices_.end())) throw UsageError("t indices must increase");
    for (std::size_t i : t_indices_) {
      if (i > grid.steps) throw UsageError("t index beyond the simulation grid");
      field_.t_grid.push_back(grid.time(i));
    }
    field_.values.assign(field_.nb() * field_.nt(), 0.0);
    cum_.assign(field_.nb(), 0.0);
  }

  void observe(std::size_t step, const Snapshot& snap) {
    if (step != next_step_) throw UsageError("local time accumulator expects consecutive steps");
    // Trapezoid in time: every step enters with weight dt except the first,
    // and the half weight of the latest step is removed when a row is stored.
    const double w = step == 0 ? 0.5 * grid_.dt : grid_.dt;
    double mass = 0.0;
    for (const PathAtom& a : snap.atoms) {
      mass += a.mass;
      deposit(cum_.data(), a.position, a.mass * w);
    }
    if (step > 0) occupation_ += 0.5 * (prev_mass_ + mass) * grid_.dt;
    prev_mass_ = mass;
    while (row_ < t_indices_.size() && t_indices_[row_] == step) {
      double* row = field_.values.data() + row_ * field_.nb();
      std::copy(cum_.begin(), cum_.end(), row);
      if (step > 0) {
        for (const PathAtom& a : snap.atoms) deposit(row, a.position, -0.5 * grid_.dt * a.mass);
      } else {
        std::fill(row, row + field_.nb(), 0.0);
      }
      occupation_at_.push_back(occupation_);
      ++row_;
    }
    ++next_step_;
  }

  SnapshotObserver observer() {
    return [this](std::size_t step, const Snapshot& s) { observe(step, s); };
  }

  const LocalTimeField& field() const { return field_; }
  LocalTimeField take() { return std::move(field_); }
  /// Trapezoid of <1, Y_s> over [0, t] at each stored time.
  const std::vector<double>& occupation() const { return occupation_at_; }

 private:
  void deposit(double* target, double x, double mass) const {
    // Nodes b with b - delta < x <= b + delta, i.e. x - delta <= b < x + delta.
    const double b0 = field_.b_grid.front();
    const double w = mass / (2.0 * field_.delta);
    const auto lo = static_cast<std::int64_t>(std::ceil((x - field_.delta - b0) / db_ - 1e-9));
    const auto hi = static_cast<std::int64_t>(std::floor((x + field_.delta - b0) / db_ + 1e-9));
    const auto n = static_cast<std::int64_t>(field_.nb());
    for (std::int64_t i = std::max<std::int64_t>(lo, 0); i <= std::min(hi, n - 1); ++i) {
      if (in_window(x, field_.b_grid[static_cast<std::size_t>(i)], field_.delta)) target[i] += w;
    }
  }

  TimeGrid grid_;
  std::vector<std::size_t> t_indices_;
  LocalTimeField field_;
  double db_ = 0.0;
  std::vector<double> cum_;
  double prev_mass_ = 0.0;
  double occupation_ = 0.0;
  std::vector<double> occupation_at_;
  std::size_t next_step_ = 0;
  std::size_t row_ = 0;
};

/// Grid indices for times in t_grid; each time must lie on the simulation grid.
inline std::vector<std::size_t> grid_indices(const TimeGrid& grid, std::span<const double> t_grid) {
  std::vector<std::size_t> out;
  for (double t : t_grid) {
    const double r = t / grid.dt;
    const auto i = static_cast<std::size_t>(std::llround(r));
    if (std::abs(r - static_cast<double>(i)) > 1e-6 || i > grid.steps) {
      std::ostringstream msg;
      msg << "time " << t << " is not on the simulation grid";
      throw UsageError(msg.str());
    }
    out.push_back(i);
  }
  return out;
}

inline LocalTimeField local_time_field(const SuperprocessPath& path, std::vector<double> b_grid,
                                       std::span<const double> t_grid, double delta, double rho0) {
  LocalTimeAccumulator acc(std::move(b_grid), path.grid, grid_indices(path.grid, t_grid), delta, rho0);
  for (std::size_t k = 0; k < path.snapshots.size(); ++k) acc.observe(k, path.snapshots[k]);
  return acc.take();
}

/// Relative gap between the b-integral of z and the occupation mass at every
/// stored time (0 when both vanish).
inline double occupation_residual(const LocalTimeField& field, std::span<const double> occupation) {
  double worst = 0.0;
  for (std::size_t it = 0; it < field.nt(); ++it) {
    const double lhs = field.integral(it);
    const double rhs = occupation[it];
    const double scale = std::max(std::abs(lhs), std::abs(rhs));
    if (scale > 0.0) worst = std::max(worst, std::abs(lhs - rhs) / scale);
  }
  return worst;
}

/// Integrated absolute difference of two fields on the same grid, relative to
/// the integrated magnitude of the first.
inline double relative_l1(const LocalTimeField& a, const LocalTimeField& b) {
  if (a.values.size() != b.values.size()) throw UsageError("relative_l1: grids differ");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    num += std::abs(a.values[i] - b.values[i]);
    den += std::abs(a.values[i]);
  }
  return den > 0.0 ? num / den : 0.0;
}

/// Lags for the moment regression. Time lags are measured from the anchor time
/// r at node b_anchor; space lags from the base nodes at time t_space.
struct HolderConfig {
  double b_anchor = 0.0;
  double r = 0.0;
  std::vector<double> time_lags;
  double t_space = 0.0;
  std::vector<double> space_bases;
  std::vector<double> space_lags;
  unsigned k = 1;
};

struct MomentCurve {
  std::vector<double> lags;
  std::vector<double> moments;
  double slope = 0.0;
  double slope_se = 0.0;
};

struct HolderResult {
  MomentCurve time;
  MomentCurve space;
};

namespace detail {

inline std::size_t nearest_index(std::span<const double> grid, double x, double tol, const char* what) {
  const auto it = std::lower_bound(grid.begin(), grid.end(), x - tol);
  if (it == grid.end() || std::abs(*it - x) > tol) {
    std::ostringstream msg;
    msg << what << " " << x << " is not a grid node";
    throw UsageError(msg.str());
  }
  return static_cast<std::size_t>(it - grid.begin());
}

inline void check_lag_range(std::span<const double> lags) {
  if (lags.size() < 3) throw UsageError("Holder regression needs at least three lags");
  const auto [lo, hi] = std::minmax_element(lags.begin(), lags.end());
  if (!(*lo > 0.0) || *hi < 10.0 * *lo * (1.0 - 1e-9)) {
    throw UsageError("insufficient lag range: Holder regression needs lags spanning a decade");
  }
}

/// samples[replicate][lag]; slope of log mean vs log lag, with jackknife SE
/// over replicates.
inline MomentCurve regress(std::span<const double> lags, const std::vector<std::vector<double>>& samples) {
  MomentCurve out;
  out.lags.assign(lags.begin(), lags.end());
  const std::size_t n = samples.size();
  const std::size_t nl = lags.size();
  std::vector<double> total(nl, 0.0);
  for (const auto& row : samples) {
    for (std::size_t j = 0; j < nl; ++j) total[j] += row[j];
  }
  std::vector<double> lx(nl), ly(nl);
  for (std::size_t j = 0; j < nl; ++j) lx[j] = std::log(lags[j]);
  const auto slope_of = [&](const std::vector<double>& sums, double count) {
    for (std::size_t j = 0; j < nl; ++j) {
      const double m = sums[j] / count;
      if (!(m > 0.0)) return std::numeric_limits<double>::quiet_NaN();
      ly[j] = std::log(m);
    }
    return stats::least_squares(lx, ly).slope;
  };
  out.moments.resize(nl);
  for (std::size_t j = 0; j < nl; ++j) out.moments[j] = total[j] / static_cast<double>(n);
  out.slope = slope_of(total, static_cast<double>(n));
  if (n > 1) {
    std::vector<double> loo(n);
    std::vector<double> sums(nl);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < nl; ++j) sums[j] = total[j] - samples[i][j];
      loo[i] = slope_of(sums, static_cast<double>(n - 1));
    }
    const double mean = std::accumulate(loo.begin(), loo.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : loo) ss += (v - mean) * (v - mean);
    out.slope_se = std::sqrt(static_cast<double>(n - 1) / static_cast<double>(n) * ss);
  }
  return out;
}

}  // namespace detail

/// Moment-scaling regression of log E|dz|^{2k} against log lag, in time and in
/// space, over replicate fields sharing one grid.
inline HolderResult holder_exponents(std::span<const LocalTimeField> fields, const HolderConfig& cfg) {
  if (fields.empty()) throw UsageError("holder_exponents needs replicate fields");
  detail::check_lag_range(cfg.time_lags);
  detail::check_lag_range(cfg.space_lags);
  const LocalTimeField& f0 = fields.front();
  const double ttol = 1e-9 * std::max(1.0, f0.t_grid.back());
  const double btol = 1e-6 * (f0.b_grid[1] - f0.b_grid[0]);
  const std::size_t ib = detail::nearest_index(f0.b_grid, cfg.b_anchor, btol, "anchor b");
  const std::size_t ir = detail::nearest_index(f0.t_grid, cfg.r, ttol, "anchor time");
  std::vector<std::size_t> it_lag;
  for (double lag : cfg.time_lags) it_lag.push_back(detail::nearest_index(f0.t_grid, cfg.r + lag, ttol, "time"));
  const std::size_t its = detail::nearest_index(f0.t_grid, cfg.t_space, ttol, "space time");
  std::vector<std::size_t> base;
  for (double b : cfg.space_bases) base.push_back(detail::nearest_index(f0.b_grid, b, btol, "base b"));
  std::vector<std::vector<std::size_t>> shifted(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    for (double lag : cfg.space_lags) {
      shifted[i].push_back(detail::nearest_index(f0.b_grid, cfg.space_bases[i] + lag, btol, "shifted b"));
    }
  }
  const double power = 2.0 * cfg.k;
  std::vector<std::vector<double>> ts(fields.size(), std::vector<double>(cfg.time_lags.size()));
  std::vector<std::vector<double>> ss(fields.size(), std::vector<double>(cfg.space_lags.size()));
  for (std::size_t n = 0; n < fields.size(); ++n) {
    const LocalTimeField& f = fields[n];
    if (f.nb() != f0.nb() || f.nt() != f0.nt()) throw UsageError("replicate fields must share one grid");
    for (std::size_t j = 0; j < it_lag.size(); ++j) ts[n][j] = std::pow(std::abs(f.z(ib, it_lag[j]) - f.z(ib, ir)), power);
    for (std::size_t j = 0; j < cfg.space_lags.size(); ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < base.size(); ++i) acc += std::pow(std::abs(f.z(shifted[i][j], its) - f.z(base[i], its)), power);
      ss[n][j] = acc / static_cast<double>(base.size());
    }
  }
  return {detail::regress(cfg.time_lags, ts), detail::regress(cfg.space_lags, ss)};
}

/// Pointwise mean of replicate fields.
inline LocalTimeField mean_field(std::span<const LocalTimeField> fields) {
  if (fields.empty()) throw UsageError("mean_field: no fields");
  LocalTimeField out = fields.front();
  std::fill(out.values.begin(), out.values.end(), 0.0);
  for (const LocalTimeField& f : fields) {
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += f.values[i];
  }
  for (double& v : out.values) v /= static_cast<double>(fields.size());
  return out;
}

/// <phi, density> with density c * z(k b, k^2 t) on the scaled variable b, i.e.
/// c * int z(b', T) phi(b' / k) db' / k, by trapezoid on the field's grid.
template <class Fn>
double scaled_pairing(const LocalTimeField& field, std::size_t it, double k, double c, Fn&& phi) {
  double s = 0.0;
  for (std::size_t i = 1; i < field.nb(); ++i) {
    const double db = field.b_grid[i] - field.b_grid[i - 1];
    s += 0.5 * db * (field.z(i - 1, it) * phi(field.b_grid[i - 1] / k) + field.z(i, it) * phi(field.b_grid[i] / k));
  }
  return c * s / k;
}

}  // namespace isdsm
