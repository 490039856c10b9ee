#pragma once

// Restricted coalescing Brownian flow {y_r(t) : t >= r}: each y_r is a Brownian
// motion with speed rho started at 0 at time r, and every difference y_s - y_r
// is a Brownian motion with speed 2 rho stopped at zero.
//
// Joint law used here (the marginal and pairwise laws do not pin down more):
// trajectories form coalescence classes, each class moves with its own
// independent driver, and two classes that meet merge and keep the driver of
// the older class.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "isdsm/errors.hpp"

namespace isdsm {

struct RcbmTrajectory {
  std::uint64_t id = 0;
  double start_time = 0.0;
  double value = 0.0;
};

struct RcbmState {
  double time = 0.0;
  std::vector<RcbmTrajectory> trajectories;
  /// Union-find parent over trajectory indices; the root is the oldest member.
  std::vector<std::size_t> parent;

  std::size_t root(std::size_t i) const {
    while (parent[i] != i) i = parent[i];
    return i;
  }
  bool coalesced(std::size_t i, std::size_t j) const { return root(i) == root(j); }

  /// Adds y_r with r = time, y_r(r) = 0.
  void spawn(std::uint64_t id) {
    trajectories.push_back({id, time, 0.0});
    parent.push_back(parent.size());
  }

  /// Adds a trajectory born at r <= time that has already moved to `value`.
  void spawn_late(std::uint64_t id, double r, double value) {
    if (r > time) throw UsageError("RcbmState::spawn_late: birth after current time");
    trajectories.push_back({id, r, value});
    parent.push_back(parent.size());
  }

  /// Drops trajectories flagged dead; surviving classes keep their roots.
  void retain(const std::vector<bool>& keep) {
    std::vector<std::size_t> remap(trajectories.size(), SIZE_MAX);
    std::vector<std::size_t> roots(trajectories.size());
    for (std::size_t i = 0; i < trajectories.size(); ++i) roots[i] = root(i);
    std::vector<RcbmTrajectory> kept;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
      if (keep[i]) {
        remap[i] = kept.size();
        kept.push_back(trajectories[i]);
      }
    }
    // Classes stay together; the new root is the first surviving member
    // (members share one value, so any member can carry the driver).
    std::vector<std::size_t> class_root(trajectories.size(), SIZE_MAX);
    std::vector<std::size_t> new_parent(kept.size());
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
      if (!keep[i]) continue;
      std::size_t& r = class_root[roots[i]];
      if (r == SIZE_MAX) r = remap[i];
      new_parent[remap[i]] = r;
    }
    trajectories = std::move(kept);
    parent = std::move(new_parent);
  }
};

/// Advances every class by an independent N(0, rho dt) increment and merges
/// classes that meet during the step: either their order flips or the
/// Brownian-bridge probability exp(-D0 D1 / (rho dt)) of the difference (speed
/// 2 rho) touching zero fires.
template <class Rng>
RcbmState rcbm_step(RcbmState state, double dt, double rho, Rng& rng) {
  if (!(dt > 0.0)) throw UsageError("rcbm_step: dt must be > 0");
  const std::size_t n = state.trajectories.size();
  std::vector<std::size_t> roots;
  std::vector<double> before, after;
  for (std::size_t i = 0; i < n; ++i) {
    if (state.root(i) == i) roots.push_back(i);
  }
  const double sd = std::sqrt(rho * dt);
  before.resize(roots.size());
  after.resize(roots.size());
  for (std::size_t c = 0; c < roots.size(); ++c) {
    before[c] = state.trajectories[roots[c]].value;
    after[c] = before[c] + sd * rng.normal();
  }

  std::vector<std::size_t> order(roots.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return before[a] < before[b]; });

  // Class-level union-find for this step's merges.
  std::vector<std::size_t> up(roots.size());
  std::iota(up.begin(), up.end(), std::size_t{0});
  const auto find = [&](std::size_t c) {
    while (up[c] != c) c = up[c] = up[up[c]];
    return c;
  };
  const auto older = [&](std::size_t a, std::size_t b) {
    const auto& ta = state.trajectories[roots[a]];
    const auto& tb = state.trajectories[roots[b]];
    if (ta.start_time != tb.start_time) return ta.start_time < tb.start_time;
    return roots[a] < roots[b];
  };
  for (std::size_t r = 1; r < order.size(); ++r) {
    const std::size_t lo = order[r - 1];
    const std::size_t hi = order[r];
    const double d0 = before[hi] - before[lo];
    const double d1 = after[hi] - after[lo];
    bool meet = d1 <= 0.0 || d0 <= 0.0;
    if (!meet) meet = rng.uniform() < std::exp(-d0 * d1 / (rho * dt));
    if (meet) {
      std::size_t a = find(lo);
      std::size_t b = find(hi);
      if (a == b) continue;
      if (older(b, a)) std::swap(a, b);
      up[b] = a;
    }
  }

  for (std::size_t c = 0; c < roots.size(); ++c) {
    const std::size_t keep = find(c);
    if (keep != c) state.parent[roots[c]] = roots[keep];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = state.root(i);
    const auto it = std::lower_bound(roots.begin(), roots.end(), r);
    state.trajectories[i].value = after[static_cast<std::size_t>(it - roots.begin())];
  }
  // Path compression keeps root() cheap; roots stay the oldest member.
  for (std::size_t i = 0; i < n; ++i) state.parent[i] = state.root(i);
  state.time += dt;
  return state;
}

}  // namespace isdsm
