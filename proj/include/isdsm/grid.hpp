#pragma once

#include <cmath>
#include <cstddef>

#include "isdsm/errors.hpp"

namespace isdsm {

/// Uniform simulation grid t_i = i * dt, i = 0..steps.
struct TimeGrid {
  double dt = 0.01;
  std::size_t steps = 100;

  TimeGrid() = default;
  TimeGrid(double step, std::size_t count) : dt(step), steps(count) {
    if (!(dt > 0.0) || steps == 0) throw ConfigError("time grid needs dt > 0 and at least one step");
  }
  static TimeGrid covering(double horizon, double step) {
    const auto n = static_cast<std::size_t>(std::llround(horizon / step));
    return TimeGrid(horizon / static_cast<double>(n == 0 ? 1 : n), n == 0 ? 1 : n);
  }

  double time(std::size_t i) const { return static_cast<double>(i) * dt; }
  double horizon() const { return time(steps); }
  /// Smallest grid index whose time is >= t.
  std::size_t index_at_or_after(double t) const {
    if (t <= 0.0) return 0;
    auto i = static_cast<std::size_t>(std::ceil(t / dt));
    while (time(i) < t) ++i;
    while (i > 0 && time(i - 1) >= t) --i;
    return i;
  }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;
};

}  // namespace isdsm
