#pragma once

// Pathwise construction of the immigration superprocess with dependent
// spatial motion:
//
//   Y_t = sum_i xi_i(t) delta_{x_{0,a_i}(t)}
//       + sum over accepted candidates (s, a, u, w) with s <= t of
//         w(t - s) delta_{x_{s,a}(t)},
//
// where a candidate is accepted iff u <= rate at (s, a). Candidates form a
// Poisson cloud of intensity ds m(da) du Q(dw) restricted to u <= q_max and to
// the truncation W_eps, so only finitely many are sampled.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "isdsm/branching.hpp"
#include "isdsm/errors.hpp"
#include "isdsm/flow.hpp"
#include "isdsm/grid.hpp"
#include "isdsm/kernel.hpp"
#include "isdsm/measures.hpp"
#include "isdsm/rates.hpp"
#include "isdsm/rcbm.hpp"
#include "isdsm/rng.hpp"

namespace isdsm {

struct Candidate {
  std::uint64_t index = 0;
  double time = 0.0;
  double site = 0.0;
  double mark = 0.0;
  Excursion excursion;
};

/// A branching cluster present at time 0: either a Feller path started from an
/// initial atom or an excursion of the entrance Poisson cloud.
struct InitialCluster {
  std::uint64_t index = 0;
  double site = 0.0;
  Excursion path;
};

/// Initial state: finite atoms (each continued as an independent Feller path)
/// plus an optional diffuse part sampled through the W_eps excursion cloud.
struct InitialCondition {
  AtomicMeasure atoms;
  std::optional<ReferenceMeasure> diffuse;

  double total_mass() const { return atoms.total_mass() + (diffuse ? diffuse->total_mass() : 0.0); }
  double pair(const std::function<double(double)>& phi) const {
    return isdsm::pair(atoms, phi) + (diffuse ? diffuse->integrate(phi) : 0.0);
  }
};

enum class Provenance : std::uint8_t { kCluster = 0, kCandidate = 1 };

constexpr std::uint64_t kCandidateIdBase = std::uint64_t{1} << 40;

inline std::uint64_t atom_id(Provenance p, std::uint64_t index) {
  return p == Provenance::kCluster ? index : kCandidateIdBase + index;
}
inline Provenance provenance_of(std::uint64_t id) {
  return id >= kCandidateIdBase ? Provenance::kCandidate : Provenance::kCluster;
}
inline std::uint64_t provenance_index(std::uint64_t id) {
  return id >= kCandidateIdBase ? id - kCandidateIdBase : id;
}
inline std::string provenance_label(std::uint64_t id) {
  return (provenance_of(id) == Provenance::kCluster ? "cluster:" : "candidate:") + std::to_string(provenance_index(id));
}

struct PathAtom {
  std::uint64_t id = 0;
  double position = 0.0;
  double mass = 0.0;

  friend bool operator==(const PathAtom&, const PathAtom&) = default;
};

struct Snapshot {
  double time = 0.0;
  std::vector<PathAtom> atoms;

  AtomicMeasure measure() const {
    std::vector<Atom> out;
    out.reserve(atoms.size());
    for (const PathAtom& a : atoms) out.push_back({a.position, a.mass});
    return AtomicMeasure(std::move(out));
  }
  double total_mass() const {
    double m = 0.0;
    for (const PathAtom& a : atoms) m += a.mass;
    return m;
  }
  template <class Fn>
  double pair(Fn&& phi) const {
    double total = 0.0;
    for (const PathAtom& a : atoms) total += a.mass * phi(a.position);
    return total;
  }

  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

/// Y on every grid time t_0..t_n.
struct SuperprocessPath {
  TimeGrid grid;
  std::vector<Snapshot> snapshots;

  const Snapshot& at(std::size_t k) const { return snapshots.at(k); }
  friend bool operator==(const SuperprocessPath&, const SuperprocessPath&) = default;
};

enum class FlowBackend { kGram, kLattice, kFrozen };

struct FlowConfig {
  const CorrelationKernel* kernel = nullptr;
  FlowBackend backend = FlowBackend::kGram;
  double lattice_cell = 0.0;
  std::size_t max_atoms = 4096;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

/// Observer invoked with every snapshot, in time order.
using SnapshotObserver = std::function<void(std::size_t step, const Snapshot&)>;

// ---------------------------------------------------------------------------
// Randomness sampling

template <class Rng>
std::vector<InitialCluster> sample_initial_clusters(const InitialCondition& mu0, double eps, double sigma,
                                                    const TimeGrid& grid, Rng& rng) {
  std::vector<InitialCluster> out;
  std::vector<double> times(grid.steps + 1);
  for (std::size_t i = 0; i <= grid.steps; ++i) times[i] = grid.time(i);
  for (const Atom& atom : mu0.atoms.atoms()) {
    InitialCluster c;
    c.index = out.size();
    c.site = atom.position;
    c.path.birth_time = 0.0;
    c.path.site = atom.position;
    c.path.times.push_back(0.0);
    c.path.values.push_back(atom.mass);
    double x = atom.mass;
    for (std::size_t i = 1; i <= grid.steps && x > 0.0; ++i) {
      x = feller_step(x, grid.dt, sigma, rng);
      c.path.times.push_back(times[i]);
      c.path.values.push_back(x);
    }
    out.push_back(std::move(c));
  }
  if (mu0.diffuse) {
    const double mean = mu0.diffuse->total_mass() * excursion_rate(eps, sigma);
    std::poisson_distribution<long long> count(mean);
    const long long n = mean > 0.0 ? count(rng) : 0;
    for (long long j = 0; j < n; ++j) {
      InitialCluster c;
      c.index = out.size();
      c.site = mu0.diffuse->sample(rng);
      const auto later = grid_times_after(grid, eps);
      c.path = excursion_sample(0.0, c.site, 0.0, eps, later, sigma, rng);
      out.push_back(std::move(c));
    }
  }
  return out;
}

/// A cluster that never branches: constant mass on the whole grid.
inline InitialCluster immortal_cluster(std::uint64_t index, double site, double mass, const TimeGrid& grid) {
  InitialCluster c;
  c.index = index;
  c.site = site;
  c.path.site = site;
  for (std::size_t i = 0; i <= grid.steps; ++i) {
    c.path.times.push_back(grid.time(i));
    c.path.values.push_back(mass);
  }
  return c;
}

struct CandidateConfig {
  double eps = 1e-3;
  double sigma = 1.0;
  double q_max = 0.0;
  double max_expected = 2e7;
};

/// Expected number of candidates, horizon * <1, m> * q_max * 2 / (sigma eps).
inline double expected_candidates(const ReferenceMeasure& m, const TimeGrid& grid, const CandidateConfig& cfg) {
  return grid.horizon() * m.total_mass() * cfg.q_max * excursion_rate(cfg.eps, cfg.sigma);
}

template <class Rng>
std::vector<Candidate> sample_candidates(const ReferenceMeasure& m, const TimeGrid& grid, const CandidateConfig& cfg,
                                         Rng& rng) {
  const double mean = expected_candidates(m, grid, cfg);
  if (mean > cfg.max_expected) {
    std::ostringstream msg;
    msg << "expected candidate count " << mean << " exceeds cap " << cfg.max_expected;
    throw ConfigError(msg.str());
  }
  if (!(mean > 0.0)) return {};
  std::poisson_distribution<long long> count(mean);
  const auto n = static_cast<std::size_t>(count(rng));
  std::vector<double> times(n);
  for (double& t : times) t = grid.horizon() * rng.uniform();
  std::sort(times.begin(), times.end());
  std::vector<Candidate> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    Candidate& c = out[j];
    c.index = j;
    c.time = times[j];
    c.site = m.sample(rng);
    c.mark = cfg.q_max * rng.uniform();
    const auto later = grid_times_after(grid, c.time + cfg.eps);
    c.excursion = excursion_sample(c.time, c.site, c.mark, cfg.eps, later, cfg.sigma, rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Path construction

namespace detail {

struct LiveAtom {
  std::uint64_t id = 0;
  double position = 0.0;
  const Excursion* path = nullptr;
  std::size_t cursor = 0;
};

/// Mass of a live atom at grid time t; sets `dead` once its path is absorbed.
inline double mass_at(LiveAtom& atom, double t, bool& dead) {
  const auto& times = atom.path->times;
  const auto& values = atom.path->values;
  dead = false;
  while (atom.cursor < times.size() && times[atom.cursor] < t) ++atom.cursor;
  if (atom.cursor == times.size()) {
    dead = true;  // absorbed earlier (paths end at their first zero) or horizon passed
    return 0.0;
  }
  if (times[atom.cursor] != t) return 0.0;  // not yet entered (age below eps)
  const double v = values[atom.cursor];
  if (v == 0.0) dead = true;
  return v;
}

class FlowAdvancer {
 public:
  explicit FlowAdvancer(const FlowConfig& cfg) : cfg_(cfg), field_(cfg.seed, cfg.stream) {
    if (cfg.backend != FlowBackend::kFrozen && cfg.kernel == nullptr) throw ConfigError("flow needs a kernel");
    if (cfg.backend == FlowBackend::kGram) gram_.emplace(*cfg.kernel, cfg.max_atoms);
    if (cfg.backend == FlowBackend::kLattice) lattice_.emplace(*cfg.kernel, field_, cfg.lattice_cell);
  }

  void advance(std::vector<LiveAtom>& atoms, std::uint64_t step, double dt) {
    if (atoms.empty() || cfg_.backend == FlowBackend::kFrozen) return;
    if (cfg_.backend == FlowBackend::kLattice) {
      if (atoms.size() > cfg_.max_atoms) throw ConfigError("live atoms exceed max_atoms");
      for (LiveAtom& a : atoms) a.position += lattice_->increment(a.position, step, dt);
      return;
    }
    positions_.resize(atoms.size());
    for (std::size_t i = 0; i < atoms.size(); ++i) positions_[i] = atoms[i].position;
    const auto inc = gram_->increments(positions_, dt, [&](std::size_t r) {
      return field_.normal(step, static_cast<std::int64_t>(atoms[r].id));
    });
    for (std::size_t i = 0; i < atoms.size(); ++i) atoms[i].position += inc[i];
  }

  /// Displacement of a trajectory born at x during the last `fraction` of step.
  double partial(double x, std::uint64_t id, std::uint64_t step, double dt, double fraction) {
    if (cfg_.backend == FlowBackend::kFrozen || fraction <= 0.0) return 0.0;
    if (cfg_.backend == FlowBackend::kLattice) return lattice_->increment(x, step, dt, fraction);
    // Gram route: the sub-step piece is drawn independently (keyed by id).
    return std::sqrt(cfg_.kernel->rho0() * dt * fraction) *
           field_.normal(step | (std::uint64_t{1} << 63), static_cast<std::int64_t>(id));
  }

 private:
  FlowConfig cfg_;
  NoiseField field_;
  std::optional<GramDriver> gram_;
  std::optional<LatticeDriver> lattice_;
  std::vector<double> positions_;
};

/// Decides whether candidate j (birth in (t_k, t_{k+1}]) is accepted, given
/// the snapshot at t_k.
using AcceptRule = std::function<bool(const Candidate& c, std::size_t k, const Snapshot& before)>;

inline void simulate(const AcceptRule& accept, std::span<const Candidate> candidates,
                     std::span<const InitialCluster> clusters, const FlowConfig& flow, const TimeGrid& grid,
                     const SnapshotObserver& observer) {
  FlowAdvancer advancer(flow);
  std::vector<LiveAtom> live;
  live.reserve(clusters.size() + 64);
  for (const InitialCluster& c : clusters) live.push_back({atom_id(Provenance::kCluster, c.index), c.site, &c.path, 0});

  Snapshot snap;
  const auto refresh = [&](std::size_t k) {
    const double t = grid.time(k);
    snap.time = t;
    snap.atoms.clear();
    std::size_t keep = 0;
    for (std::size_t i = 0; i < live.size(); ++i) {
      bool dead = false;
      const double m = mass_at(live[i], t, dead);
      if (dead) continue;
      if (m > 0.0) snap.atoms.push_back({live[i].id, live[i].position, m});
      live[keep++] = live[i];
    }
    live.resize(keep);
  };

  refresh(0);
  observer(0, snap);
  std::size_t next = 0;
  while (next < candidates.size() && candidates[next].time <= 0.0) ++next;
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const double t1 = grid.time(k + 1);
    advancer.advance(live, k, grid.dt);
    for (; next < candidates.size() && candidates[next].time <= t1; ++next) {
      const Candidate& c = candidates[next];
      if (!accept(c, k, snap)) continue;
      const std::uint64_t id = atom_id(Provenance::kCandidate, c.index);
      const double fraction = (t1 - c.time) / grid.dt;
      const double x = c.site + advancer.partial(c.site, id, k, grid.dt, fraction);
      live.push_back({id, x, &c.excursion, 0});
    }
    refresh(k + 1);
    observer(k + 1, snap);
  }
}

}  // namespace detail

/// Records every snapshot into a SuperprocessPath.
inline SnapshotObserver recorder(SuperprocessPath& path) {
  return [&path](std::size_t, const Snapshot& s) { path.snapshots.push_back(s); };
}

/// Fixed (predictable) rate: candidate (s, a, u) is accepted iff u <= eta(s, a).
inline void build_fixed_rate(const ImmigrationRate& eta, std::span<const Candidate> candidates,
                             std::span<const InitialCluster> clusters, const FlowConfig& flow, const TimeGrid& grid,
                             const SnapshotObserver& observer) {
  if (eta.is_interactive()) throw UsageError("build_fixed_rate needs a predictable rate");
  const detail::AcceptRule rule = [&eta](const Candidate& c, std::size_t, const Snapshot&) {
    return c.mark <= eta(c.time, c.site);
  };
  detail::simulate(rule, candidates, clusters, flow, grid, observer);
}

inline SuperprocessPath build_fixed_rate(const ImmigrationRate& eta, std::span<const Candidate> candidates,
                                         std::span<const InitialCluster> clusters, const FlowConfig& flow,
                                         const TimeGrid& grid) {
  SuperprocessPath path{grid, {}};
  build_fixed_rate(eta, candidates, clusters, flow, grid, recorder(path));
  return path;
}

/// Interactive rate evaluated on the state strictly before the candidate's
/// birth (the grid snapshot at t_k for s in (t_k, t_{k+1}]), in one causal
/// pass. This is the fixed point the Picard scheme converges to.
inline void build_sequential(const ImmigrationRate& q, std::span<const Candidate> candidates,
                             std::span<const InitialCluster> clusters, const FlowConfig& flow, const TimeGrid& grid,
                             const SnapshotObserver& observer) {
  std::size_t cached_step = SIZE_MAX;
  AtomicMeasure cached;
  const detail::AcceptRule rule = [&](const Candidate& c, std::size_t k, const Snapshot& before) {
    if (!q.is_interactive()) return c.mark <= q(c.time, c.site);
    if (k != cached_step) {
      cached = before.measure();
      cached_step = k;
    }
    return c.mark <= q(cached, c.time, c.site);
  };
  detail::simulate(rule, candidates, clusters, flow, grid, observer);
}

inline SuperprocessPath build_sequential(const ImmigrationRate& q, std::span<const Candidate> candidates,
                                         std::span<const InitialCluster> clusters, const FlowConfig& flow,
                                         const TimeGrid& grid) {
  SuperprocessPath path{grid, {}};
  build_sequential(q, candidates, clusters, flow, grid, recorder(path));
  return path;
}

struct PicardResult {
  SuperprocessPath path;
  /// sup_t ||Y^(n)_t - Y^(n-1)_t||_p for n = 1, 2, ...
  std::vector<double> trace;
  std::size_t iterations = 0;
};

struct PicardConfig {
  double p = 0.0;
  double tol = -1.0;  // negative: 1e-6 * (1 + initial mass)
  std::size_t max_iter = 50;
};

inline double sup_distance(const SuperprocessPath& a, const SuperprocessPath& b, double p) {
  double sup = 0.0;
  for (std::size_t k = 0; k < a.snapshots.size(); ++k) {
    sup = std::max(sup, distance_p(a.snapshots[k].measure(), b.snapshots[k].measure(), p));
  }
  return sup;
}

/// Picard scheme with frozen randomness: Y^(0) holds the initial clusters only,
/// Y^(n) accepts (s, a, u) iff u <= q(Y^(n-1)_{s-}, a). Stops once the sup
/// distance between successive iterates falls below tol.
inline PicardResult build_interactive(const ImmigrationRate& q, std::span<const Candidate> candidates,
                                      std::span<const InitialCluster> clusters, const FlowConfig& flow,
                                      const TimeGrid& grid, const PicardConfig& cfg = {}) {
  double initial_mass = 0.0;
  for (const InitialCluster& c : clusters) initial_mass += c.path.value_at(0.0);
  const double tol = cfg.tol >= 0.0 ? cfg.tol : 1e-6 * (1.0 + initial_mass);

  PicardResult result;
  SuperprocessPath previous{grid, {}};
  detail::simulate([](const Candidate&, std::size_t, const Snapshot&) { return false; }, candidates, clusters, flow,
                   grid, recorder(previous));

  std::vector<AtomicMeasure> before(grid.steps + 1);
  for (std::size_t n = 1; n <= cfg.max_iter; ++n) {
    for (std::size_t k = 0; k <= grid.steps; ++k) before[k] = previous.snapshots[k].measure();
    const detail::AcceptRule rule = [&](const Candidate& c, std::size_t k, const Snapshot&) {
      return c.mark <= q(before[k], c.time, c.site);
    };
    SuperprocessPath current{grid, {}};
    detail::simulate(rule, candidates, clusters, flow, grid, recorder(current));
    const double d = sup_distance(current, previous, cfg.p);
    result.trace.push_back(d);
    previous = std::move(current);
    if (d < tol) {
      result.path = std::move(previous);
      result.iterations = n;
      return result;
    }
  }
  std::ostringstream msg;
  msg << "Picard iteration did not reach tol " << tol << " within " << cfg.max_iter << " iterations";
  throw NonConvergenceError(msg.str(), result.trace);
}

/// Y^k_t(dx) = k^-2 Y_{k^2 t}(k dx): atoms (x / k, mass / k^2) at time t = t_src / k^2.
inline Snapshot scale_snapshot(const Snapshot& s, double k) {
  Snapshot out;
  out.time = s.time / (k * k);
  out.atoms.reserve(s.atoms.size());
  for (const PathAtom& a : s.atoms) out.atoms.push_back({a.id, a.position / k, a.mass / (k * k)});
  return out;
}

inline SuperprocessPath scale_path(const SuperprocessPath& path, double k) {
  if (!(k > 0.0)) throw UsageError("scale_path: k must be > 0");
  SuperprocessPath out;
  out.grid = TimeGrid(path.grid.dt / (k * k), path.grid.steps);
  out.snapshots.reserve(path.snapshots.size());
  for (const Snapshot& s : path.snapshots) out.snapshots.push_back(scale_snapshot(s, k));
  return out;
}

/// Y^k at scaled time t; t must be a grid time of the scaled path.
inline Snapshot scaled_at(const SuperprocessPath& path, double k, double t) {
  const double source_t = k * k * t;
  if (source_t > path.grid.horizon() * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "scaled time " << t << " needs source horizon " << source_t << " but path ends at " << path.grid.horizon();
    throw UsageError(msg.str());
  }
  const auto idx = static_cast<std::size_t>(std::llround(source_t / path.grid.dt));
  return scale_snapshot(path.snapshots.at(idx), k);
}

/// Limit process Y^inf_t = sum over candidates with u <= q(a) of
/// w(t - s) delta_{y_s(t)}, where {y_s} is an RCBM flow with speed rho started
/// at 0 at each birth time. Newborns between grid times get an independent
/// N(0, rho (t_{k+1} - s)) start.
template <class Rng>
void build_rcbm_limit(const std::function<double(double)>& q, std::span<const Candidate> candidates,
                      const TimeGrid& grid, double rho, Rng& rng, const SnapshotObserver& observer) {
  if (!(rho > 0.0)) throw ConfigError("RCBM speed must be > 0");
  RcbmState flow;
  std::vector<detail::LiveAtom> live;
  Snapshot snap;
  std::vector<bool> keep;
  const auto refresh = [&](std::size_t k) {
    const double t = grid.time(k);
    snap.time = t;
    snap.atoms.clear();
    keep.assign(live.size(), false);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < live.size(); ++i) {
      live[i].position = flow.trajectories[i].value;
      bool dead = false;
      const double m = detail::mass_at(live[i], t, dead);
      if (dead) continue;
      keep[i] = true;
      if (m > 0.0) snap.atoms.push_back({live[i].id, live[i].position, m});
      live[kept++] = live[i];
    }
    if (kept != keep.size()) flow.retain(keep);
    live.resize(kept);
  };
  refresh(0);
  observer(0, snap);
  std::size_t next = 0;
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const double t1 = grid.time(k + 1);
    if (!flow.trajectories.empty()) flow = rcbm_step(std::move(flow), grid.dt, rho, rng);
    flow.time = t1;
    for (; next < candidates.size() && candidates[next].time <= t1; ++next) {
      const Candidate& c = candidates[next];
      if (!(c.mark <= q(c.site))) continue;
      const std::uint64_t id = atom_id(Provenance::kCandidate, c.index);
      flow.spawn_late(id, c.time, std::sqrt(rho * (t1 - c.time)) * rng.normal());
      live.push_back({id, 0.0, &c.excursion, 0});
    }
    refresh(k + 1);
    observer(k + 1, snap);
  }
}

}  // namespace isdsm
