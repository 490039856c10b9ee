#pragma once

// Dependent spatial motion: every trajectory is driven by one shared
// space-time white noise through the kernel h, so the increments of two
// trajectories at x_i, x_j have covariance dt * rho(x_i - x_j).
//
// Two drivers realise the same covariance:
//  * GramDriver factors the Gram matrix dt * rho(x_i - x_j) (envelope Cholesky
//    over position-sorted trajectories, exact duplicates share one row);
//  * LatticeDriver discretises the white noise on a spatial lattice and sums
//    h(y_l - x) dW_l, so a trajectory's increment depends only on its own
//    position and the frozen noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <span>
#include <vector>

#include "isdsm/errors.hpp"
#include "isdsm/kernel.hpp"
#include "isdsm/rng.hpp"

namespace isdsm {

struct Trajectory {
  std::uint64_t id = 0;
  double birth_time = 0.0;
  double birth_site = 0.0;
  double position = 0.0;
};

struct FlowState {
  double time = 0.0;
  std::vector<Trajectory> trajectories;
};

/// Adds a trajectory started at site a at the state's current time.
inline FlowState spawn(FlowState state, double s, double a, std::uint64_t id) {
  if (s != state.time) {
    std::ostringstream msg;
    msg << "spawn at time " << s << " but flow state is at time " << state.time;
    throw UsageError(msg.str());
  }
  state.trajectories.push_back({id, s, a, a});
  return state;
}

inline FlowState spawn(FlowState state, double s, double a) {
  std::uint64_t next = 0;
  for (const Trajectory& t : state.trajectories) next = std::max(next, t.id + 1);
  return spawn(std::move(state), s, a, next);
}

/// Lower-triangular factor with a variable row envelope: row i stores columns
/// first[i]..i.
struct EnvelopeCholesky {
  std::vector<std::size_t> first;
  std::vector<std::vector<double>> rows;
  double jitter = 0.0;

  double at(std::size_t i, std::size_t j) const { return j < first[i] ? 0.0 : rows[i][j - first[i]]; }
};

/// Factorises dt * rho(x_i - x_j) + jitter * I for strictly increasing x.
/// Returns false if a pivot is not positive.
inline bool envelope_cholesky(std::span<const double> x, const CorrelationKernel& kernel, double dt, double jitter,
                              EnvelopeCholesky& out) {
  const std::size_t n = x.size();
  out.first.assign(n, 0);
  out.rows.assign(n, {});
  out.jitter = jitter;
  std::size_t lo = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (x[i] - x[lo] >= kernel.span()) ++lo;
    out.first[i] = lo;
    out.rows[i].assign(i - lo + 1, 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& row = out.rows[i];
    const std::size_t fi = out.first[i];
    for (std::size_t j = fi; j <= i; ++j) {
      double a = dt * kernel.rho(x[i] - x[j]);
      if (j == i) a = dt * kernel.rho0() + jitter;
      const std::size_t fj = out.first[j];
      const std::size_t k0 = std::max(fi, fj);
      const auto& rowj = out.rows[j];
      for (std::size_t k = k0; k < j; ++k) a -= row[k - fi] * rowj[k - fj];
      if (j < i) {
        row[j - fi] = a / rowj[j - fj];
      } else {
        if (!(a > 0.0)) return false;
        row[i - fi] = std::sqrt(a);
      }
    }
  }
  return true;
}

/// Dense Gram matrix dt * rho(x_i - x_j), row-major. Diagnostic use.
inline std::vector<double> gram_matrix(std::span<const double> x, const CorrelationKernel& kernel, double dt) {
  const std::size_t n = x.size();
  std::vector<double> g(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) g[i * n + j] = i == j ? dt * kernel.rho0() : dt * kernel.rho(x[i] - x[j]);
  }
  return g;
}

class GramDriver {
 public:
  explicit GramDriver(const CorrelationKernel& kernel, std::size_t max_trajectories = 4096)
      : kernel_(&kernel), max_(max_trajectories) {}

  /// Correlated increments for `positions`. `normal(r)` supplies the standard
  /// normal for the distinct site whose first trajectory is positions[r].
  template <class NormalSource>
  std::vector<double> increments(std::span<const double> positions, double dt, NormalSource&& normal) {
    const std::size_t n = positions.size();
    if (n > max_) {
      std::ostringstream msg;
      msg << "live trajectories (" << n << ") exceed max_atoms (" << max_ << ")";
      throw ConfigError(msg.str());
    }
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return positions[a] < positions[b]; });
    distinct_.clear();
    rep_.clear();
    group_.assign(n, 0);
    for (std::size_t r = 0; r < n; ++r) {
      const double x = positions[order_[r]];
      if (distinct_.empty() || distinct_.back() != x) {
        distinct_.push_back(x);
        rep_.push_back(order_[r]);
      }
      group_[order_[r]] = distinct_.size() - 1;
    }

    const double base = kernel_->rho0() * dt;
    const double jitters[] = {0.0, 1e-12 * base, 1e-10 * base, 1e-8 * base};
    bool ok = false;
    for (double jitter : jitters) {
      if (envelope_cholesky(distinct_, *kernel_, dt, jitter, factor_)) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      double min_gap = std::numeric_limits<double>::infinity();
      for (std::size_t i = 1; i < distinct_.size(); ++i) min_gap = std::min(min_gap, distinct_[i] - distinct_[i - 1]);
      std::ostringstream msg;
      msg << "Gram factorisation failed after jitter escalation (n = " << distinct_.size() << ", dt = " << dt
          << ", smallest gap = " << min_gap << ", rho0 = " << kernel_->rho0() << ")";
      throw NumericalError(msg.str());
    }

    const std::size_t m = distinct_.size();
    z_.resize(m);
    for (std::size_t i = 0; i < m; ++i) z_[i] = normal(rep_[i]);
    distinct_inc_.assign(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const auto& row = factor_.rows[i];
      const std::size_t fi = factor_.first[i];
      double s = 0.0;
      for (std::size_t k = fi; k <= i; ++k) s += row[k - fi] * z_[k];
      distinct_inc_[i] = s;
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = distinct_inc_[group_[i]];
    return out;
  }

  double last_jitter() const { return factor_.jitter; }

 private:
  const CorrelationKernel* kernel_;
  std::size_t max_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> group_;
  std::vector<std::size_t> rep_;
  std::vector<double> distinct_;
  std::vector<double> z_;
  std::vector<double> distinct_inc_;
  EnvelopeCholesky factor_;
};

/// White noise on cells y_l = l * cell; the increment of a trajectory at x over
/// a step of length dt is sqrt(dt * cell) * sum_l h(y_l - x) N_{step,l}.
class LatticeDriver {
 public:
  LatticeDriver(const CorrelationKernel& kernel, NoiseField field, double cell = 0.0)
      : kernel_(&kernel), field_(field) {
    const double width = kernel.h_support_hi() - kernel.h_support_lo();
    cell_ = cell > 0.0 ? cell : width / 36.0;
  }

  double cell() const { return cell_; }

  /// Increment over `fraction` of step `step` (fraction in (0, 1]); partial
  /// steps reuse the step's noise scaled by sqrt(fraction).
  double increment(double x, std::uint64_t step, double dt, double fraction = 1.0) {
    const auto l0 = static_cast<std::int64_t>(std::ceil((x + kernel_->h_support_lo()) / cell_));
    const auto l1 = static_cast<std::int64_t>(std::floor((x + kernel_->h_support_hi()) / cell_));
    if (step != cached_step_ || l0 < cached_lo_ || l1 > cached_hi_) refill(step, l0, l1);
    const RealFn& h = kernel_->h();
    double s = 0.0;
    for (std::int64_t l = l0; l <= l1; ++l) {
      s += h(static_cast<double>(l) * cell_ - x) * noise_[static_cast<std::size_t>(l - cached_lo_)];
    }
    return s * std::sqrt(dt * fraction * cell_);
  }

 private:
  void refill(std::uint64_t step, std::int64_t lo, std::int64_t hi) {
    if (step == cached_step_ && !noise_.empty()) {
      // Extend the cached row; existing cells keep their values.
      const std::int64_t new_lo = std::min(lo, cached_lo_);
      const std::int64_t new_hi = std::max(hi, cached_hi_);
      std::vector<double> row(static_cast<std::size_t>(new_hi - new_lo + 1));
      for (std::int64_t l = new_lo; l <= new_hi; ++l) {
        row[static_cast<std::size_t>(l - new_lo)] =
            (l >= cached_lo_ && l <= cached_hi_) ? noise_[static_cast<std::size_t>(l - cached_lo_)] : field_.normal(step, l);
      }
      noise_ = std::move(row);
      cached_lo_ = new_lo;
      cached_hi_ = new_hi;
      return;
    }
    cached_step_ = step;
    cached_lo_ = lo;
    cached_hi_ = hi;
    noise_.resize(static_cast<std::size_t>(hi - lo + 1));
    for (std::int64_t l = lo; l <= hi; ++l) noise_[static_cast<std::size_t>(l - lo)] = field_.normal(step, l);
  }

  const CorrelationKernel* kernel_;
  NoiseField field_;
  double cell_;
  std::uint64_t cached_step_ = ~std::uint64_t{0};
  std::int64_t cached_lo_ = 0;
  std::int64_t cached_hi_ = -1;
  std::vector<double> noise_;
};

/// One Euler-Maruyama step of the flow with jointly Gaussian increments of
/// covariance dt * rho(x_i - x_j), via the Gram factorisation.
template <class Rng>
FlowState flow_step(FlowState state, double dt, const CorrelationKernel& kernel, Rng& rng,
                    std::size_t max_trajectories = 4096) {
  if (!(dt > 0.0)) throw UsageError("flow_step: dt must be > 0");
  std::vector<double> x(state.trajectories.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = state.trajectories[i].position;
  GramDriver driver(kernel, max_trajectories);
  const auto inc = driver.increments(x, dt, [&](std::size_t) { return rng.normal(); });
  for (std::size_t i = 0; i < x.size(); ++i) state.trajectories[i].position += inc[i];
  state.time += dt;
  return state;
}

/// Number of pairs adjacent in the `before` order whose order is reversed in
/// `after`. Discrete-time crossings are monitored, never corrected.
inline std::size_t order_violations(std::span<const double> before, std::span<const double> after) {
  std::vector<std::size_t> idx(before.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return before[a] < before[b]; });
  std::size_t count = 0;
  for (std::size_t r = 1; r < idx.size(); ++r) {
    const std::size_t a = idx[r - 1];
    const std::size_t b = idx[r];
    if (before[a] < before[b] && after[a] > after[b]) ++count;
  }
  return count;
}

}  // namespace isdsm
