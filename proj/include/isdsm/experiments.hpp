#pragma once

// Experiment drivers behind the command-line runner. Each driver simulates a
// replicate ensemble, writes CSV artifacts, and returns verification reports.
// Replicate r of sample group g draws from stream ids (g * R + r) << 8 | purpose.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "isdsm/config.hpp"
#include "isdsm/io.hpp"
#include "isdsm/localtime.hpp"
#include "isdsm/parallel.hpp"
#include "isdsm/rcbm.hpp"
#include "isdsm/stats.hpp"
#include "isdsm/superprocess.hpp"
#include "isdsm/svg.hpp"
#include "isdsm/verify.hpp"

#ifndef ISDSM_VERSION
#define ISDSM_VERSION "0.1.0"
#endif

namespace isdsm {

struct RunRequest {
  std::string experiment;
  RunConfig config;
  std::uint64_t seed = 0;
  std::size_t replicates = 1;
  std::filesystem::path out;
  bool plots = false;
  unsigned threads = 0;  // 0: ISDSM_THREADS or hardware
};

struct ExperimentOutput {
  std::vector<VerificationReport> reports;
  std::vector<std::string> files;
  /// Sample indices used, per group label (stream ids derive from them).
  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> sample_ranges;
  nlohmann::json summary = nlohmann::json::object();
};

/// Everything a replicate needs that is shared read-only across threads.
struct Model {
  CorrelationKernel kernel;
  ReferenceMeasure m;
  ImmigrationRate rate;
  InitialCondition mu0;
  TimeGrid grid;
  double sigma = 1.0;
  double eps = 1e-3;
  double q_max = 0.0;
  FlowBackend backend = FlowBackend::kGram;
  double lattice_cell = 0.0;
  std::size_t max_atoms = 4096;
  double candidate_cap = 2e7;
  PicardConfig picard;
};

inline Model make_model(const RunConfig& c) {
  Model md{c.kernel.build(), c.m.build(), ImmigrationRate::from_spec(c.q, c.declared_q_max()), {}, {}};
  md.mu0.atoms = c.mu;
  md.grid = TimeGrid::covering(c.horizon, c.dt);
  md.sigma = c.sigma;
  md.eps = c.eps();
  md.q_max = c.declared_q_max();
  md.backend = c.backend();
  md.lattice_cell = c.lattice_cell;
  md.max_atoms = c.max_atoms;
  md.candidate_cap = c.candidate_cap;
  md.picard.p = c.p;
  md.picard.tol = c.picard_tol > 0.0 ? c.picard_tol : -1.0;
  md.picard.max_iter = c.picard_max_iter;
  return md;
}

struct ReplicateRandomness {
  std::vector<Candidate> candidates;
  std::vector<InitialCluster> clusters;
  FlowConfig flow;
};

inline ReplicateRandomness draw_randomness(const Model& md, std::uint64_t seed, std::uint64_t sample) {
  ReplicateRandomness r;
  RngStream cand_rng(seed, stream_id(sample, StreamPurpose::kCandidates));
  RngStream clus_rng(seed, stream_id(sample, StreamPurpose::kClusters));
  CandidateConfig cc{md.eps, md.sigma, md.q_max, md.candidate_cap};
  r.candidates = sample_candidates(md.m, md.grid, cc, cand_rng);
  r.clusters = sample_initial_clusters(md.mu0, md.eps, md.sigma, md.grid, clus_rng);
  r.flow.kernel = &md.kernel;
  r.flow.backend = md.backend;
  r.flow.lattice_cell = md.lattice_cell;
  r.flow.max_atoms = md.max_atoms;
  r.flow.seed = seed;
  r.flow.stream = stream_id(sample, StreamPurpose::kFlow);
  return r;
}

/// Builds one replicate and streams its snapshots to `observer`. For an
/// interactive rate the Picard fixed point is built first; its distance trace
/// is stored in `trace` when given.
inline void simulate_replicate(const Model& md, std::uint64_t seed, std::uint64_t sample,
                               const SnapshotObserver& observer, std::vector<double>* trace = nullptr) {
  const ReplicateRandomness r = draw_randomness(md, seed, sample);
  if (!md.rate.is_interactive()) {
    build_fixed_rate(md.rate, r.candidates, r.clusters, r.flow, md.grid, observer);
    return;
  }
  PicardResult res = build_interactive(md.rate, r.candidates, r.clusters, r.flow, md.grid, md.picard);
  if (trace) *trace = res.trace;
  for (std::size_t k = 0; k < res.path.snapshots.size(); ++k) observer(k, res.path.snapshots[k]);
}

namespace experiments_detail {

inline std::size_t stride_of(const RunConfig& c, const TimeGrid& grid) {
  return static_cast<std::size_t>(std::llround(c.output_dt() / grid.dt));
}

/// Indices of requested times on the grid; times off the grid are skipped.
inline std::vector<std::size_t> on_grid(const TimeGrid& grid, const std::vector<double>& times) {
  std::vector<std::size_t> out;
  for (double t : times) {
    const double r = t / grid.dt;
    const auto i = static_cast<std::size_t>(std::llround(r));
    if (std::abs(r - static_cast<double>(i)) < 1e-6 && i <= grid.steps) out.push_back(i);
  }
  return out;
}

inline std::string fmt(double x) { return format_number(x); }

}  // namespace experiments_detail

// ---------------------------------------------------------------------------
// simulate

inline ExperimentOutput run_simulate(const RunRequest& req) {
  using namespace experiments_detail;
  const RunConfig& c = req.config;
  const Model md = make_model(c);
  const std::size_t R = req.replicates;
  const std::size_t stride = stride_of(c, md.grid);
  const std::size_t n_out = md.grid.steps / stride + 1;

  struct Rep {
    std::vector<double> mass;
    std::vector<Snapshot> snaps;
    std::vector<double> trace;
  };
  std::vector<Rep> reps(R);
  parallel_for(
      R,
      [&](std::size_t r) {
        Rep& rep = reps[r];
        rep.mass.assign(n_out, 0.0);
        simulate_replicate(
            md, req.seed, r,
            [&](std::size_t k, const Snapshot& s) {
              if (k % stride) return;
              rep.mass[k / stride] = s.total_mass();
              if (c.write_paths) rep.snaps.push_back(s);
            },
            &rep.trace);
      },
      req.threads);

  ExperimentOutput out;
  out.sample_ranges["replicates"] = {0, R};
  if (c.write_paths) {
    CsvWriter paths(req.out / "paths.csv", {"replicate", "t", "atom_id", "position", "mass", "provenance"});
    for (std::size_t r = 0; r < R; ++r) {
      for (const Snapshot& s : reps[r].snaps) {
        for (const PathAtom& a : s.atoms) {
          paths.values(r, s.time, a.id, a.position, a.mass, provenance_label(a.id));
        }
      }
    }
    out.files.push_back("paths.csv");
  }

  const bool predictable = !md.rate.is_interactive();
  CsvWriter mass(req.out / "mass.csv", {"t", "mean_mass", "se", "target"});
  std::vector<double> col(R);
  for (std::size_t i = 0; i < n_out; ++i) {
    for (std::size_t r = 0; r < R; ++r) col[r] = reps[r].mass[i];
    const auto s = stats::summarize(col);
    const double t = md.grid.time(i * stride);
    const double target =
        predictable ? first_moment_target([](double) { return 1.0; }, md.mu0,
                                          [&](double s_, double a) { return md.rate(s_, a); }, md.m, md.kernel.rho0(), t)
                    : std::numeric_limits<double>::quiet_NaN();
    mass.values(t, s.mean, s.se(), target);
  }
  out.files.push_back("mass.csv");

  for (std::size_t k : on_grid(md.grid, c.verify.times)) {
    if (!predictable || k % stride) continue;
    for (std::size_t r = 0; r < R; ++r) col[r] = reps[r].mass[k / stride];
    const double t = md.grid.time(k);
    const double target = first_moment_target([](double) { return 1.0; }, md.mu0,
                                              [&](double s_, double a) { return md.rate(s_, a); }, md.m,
                                              md.kernel.rho0(), t);
    out.reports.push_back(first_moment_check(col, target, "mean total mass at t=" + fmt(t)));
  }

  if (!predictable) {
    std::size_t longest = 0, worst = 0;
    for (const Rep& r : reps) {
      longest = std::max(longest, r.trace.size());
      worst = std::max(worst, r.trace.size());
    }
    CsvWriter pic(req.out / "picard.csv", {"iteration", "mean_distance", "se"});
    std::vector<double> means;
    for (std::size_t n = 0; n < longest; ++n) {
      for (std::size_t r = 0; r < R; ++r) col[r] = n < reps[r].trace.size() ? reps[r].trace[n] : 0.0;
      const auto s = stats::summarize(col);
      means.push_back(s.mean);
      pic.values(n + 1, s.mean, s.se());
    }
    out.files.push_back("picard.csv");
    out.reports.push_back(flag("Picard mean distance decreasing", "Picard contraction", strictly_decreasing(means),
                               "iterations=" + std::to_string(worst), R));
  }
  return out;
}

// ---------------------------------------------------------------------------
// verify

inline ExperimentOutput run_verify(const RunRequest& req) {
  using namespace experiments_detail;
  const RunConfig& c = req.config;
  const Model md = make_model(c);
  const std::size_t R = req.replicates;
  const std::vector<TestFunction> tests{constant_one(), tempered_weight(c.verify.p), gaussian_bump()};
  const std::vector<std::size_t> times = on_grid(md.grid, c.verify.times);
  const bool predictable = !md.rate.is_interactive();
  const double p = c.verify.p;

  struct Rep {
    std::vector<std::vector<double>> m, qv_real, qv_pred, pair;  // [test][time]
    std::vector<double> weight_at, sup_sq;                       // [time]
  };
  std::vector<Rep> reps(R);
  parallel_for(
      R,
      [&](std::size_t r) {
        SuperprocessPath path{md.grid, {}};
        simulate_replicate(md, req.seed, r, recorder(path));
        Rep& rep = reps[r];
        for (const TestFunction& f : tests) {
          const ImmigrationDrift drift =
              predictable ? fixed_drift(md.rate, md.m, f.f) : interactive_drift(md.rate, md.m, f.f);
          const auto ms = martingale_residual(path, f, md.kernel, md.sigma, drift, !predictable);
          std::vector<double> m, qr, qp, pr;
          for (std::size_t k : times) {
            m.push_back(ms.m[k]);
            qr.push_back(ms.realized_qv[k]);
            qp.push_back(ms.predicted_qv[k]);
            pr.push_back(path.snapshots[k].pair(f.f));
          }
          rep.m.push_back(m);
          rep.qv_real.push_back(qr);
          rep.qv_pred.push_back(qp);
          rep.pair.push_back(pr);
        }
        double sup = 0.0;
        std::size_t next = 0;
        for (std::size_t k = 0; k < path.snapshots.size() && next < times.size(); ++k) {
          const double w = path.snapshots[k].pair([&](double x) { return phi_p(x, p); });
          sup = std::max(sup, w * w);
          if (k == times[next]) {
            rep.weight_at.push_back(w);
            rep.sup_sq.push_back(sup);
            ++next;
          }
        }
      },
      req.threads);

  ExperimentOutput out;
  out.sample_ranges["replicates"] = {0, R};
  CsvWriter csv(req.out / "verify.csv",
                {"test", "t", "mean_M", "se_M", "realized_qv", "predicted_qv", "mean_pair", "se_pair", "target_pair"});
  std::vector<double> col(R), col2(R);
  for (std::size_t fi = 0; fi < tests.size(); ++fi) {
    const TestFunction& f = tests[fi];
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      const double t = md.grid.time(times[ti]);
      for (std::size_t r = 0; r < R; ++r) col[r] = reps[r].m[fi][ti];
      const auto sm = stats::summarize(col);
      out.reports.push_back(mean_equals("martingale mean, " + f.name + ", t=" + fmt(t), "martingale problem", col, 0.0));
      for (std::size_t r = 0; r < R; ++r) {
        col[r] = reps[r].qv_real[fi][ti];
        col2[r] = reps[r].qv_pred[fi][ti];
      }
      const double real = stats::summarize(col).mean, pred = stats::summarize(col2).mean;
      out.reports.push_back(relative_match("quadratic variation, " + f.name + ", t=" + fmt(t),
                                           "martingale quadratic variation", real, pred, 0.10, R));
      for (std::size_t r = 0; r < R; ++r) col[r] = reps[r].pair[fi][ti];
      const auto sp = stats::summarize(col);
      double target = std::numeric_limits<double>::quiet_NaN();
      if (predictable) {
        target = first_moment_target(f.f, md.mu0, [&](double s, double a) { return md.rate(s, a); }, md.m,
                                     md.kernel.rho0(), t);
        out.reports.push_back(first_moment_check(col, target, "first moment, " + f.name + ", t=" + fmt(t)));
      }
      csv.values(f.name, t, sm.mean, sm.se(), real, pred, sp.mean, sp.se(), target);
    }
  }
  out.files.push_back("verify.csv");

  const double mu_pair = pair(md.mu0.atoms, [&](double x) { return phi_p(x, p); });
  const double m_pair = md.m.integrate([&](double x) { return phi_p(x, p); });
  std::optional<GronwallBound> bound;
  if (predictable) {
    bound = GronwallBound::fixed_rate(p, md.kernel.rho0(), md.sigma, mu_pair, [&](double s) {
      return md.m.integrate([&](double a) { return md.rate(s, a) * phi_p(a, p); });
    });
  } else if (md.q_max * m_pair > 0.0) {
    bound = GronwallBound::interactive(p, md.kernel.rho0(), md.sigma, mu_pair, md.q_max * m_pair);
  }
  CsvWriter gcsv(req.out / "gronwall.csv", {"t", "mean_pair", "first_bound", "mean_sup_sq", "second_bound"});
  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    const double t = md.grid.time(times[ti]);
    for (std::size_t r = 0; r < R; ++r) {
      col[r] = reps[r].weight_at[ti];
      col2[r] = reps[r].sup_sq[ti];
    }
    double b1 = 0.0, b2 = 0.0;
    if (bound) {
      b1 = bound->first_moment(t);
      b2 = bound->second_moment(t);
    }
    const std::string label = std::string(predictable ? "fixed rate" : "interactive") + ", t=" + fmt(t);
    auto reports = gronwall_check(col, col2, bound ? *bound : GronwallBound::fixed_rate(p, md.kernel.rho0(), md.sigma,
                                                                                       mu_pair, [](double) { return 0.0; }),
                                  t, label);
    for (auto& r : reports) out.reports.push_back(std::move(r));
    gcsv.values(t, stats::summarize(col).mean, b1, stats::summarize(col2).mean, b2);
  }
  out.files.push_back("gronwall.csv");
  return out;
}

// ---------------------------------------------------------------------------
// localtime

struct LocalTimeRun {
  std::vector<LocalTimeField> fields;       // bandwidth delta
  std::vector<LocalTimeField> alt_fields;  // bandwidth alt_delta
  std::vector<double> residuals;            // per replicate occupation residual
  HolderConfig holder;
  double delta = 0.0;
  double alt_delta = 0.0;  // delta / 2 when valid at this step, else 2 delta
};

/// Default regression lags: time lags log-spaced over [10, 100] delta^2 / rho0
/// from the anchor time, space lags over [4, 40] delta at the final time.
inline HolderConfig default_holder(const RunConfig& c, const TimeGrid& grid, double delta, double rho0, double db) {
  const LocalTimeSpec& s = c.localtime;
  HolderConfig h;
  h.b_anchor = s.anchor_b;
  h.r = s.anchor_t;
  h.t_space = s.space_t > 0.0 ? s.space_t : grid.horizon();
  h.space_bases = s.space_bases;
  const std::size_t n = std::max<std::size_t>(3, s.lag_points);
  const auto snap = [](double lag, double unit) { return std::max<double>(1, std::llround(lag / unit)) * unit; };
  if (!s.time_lags.empty()) {
    for (double lag : s.time_lags) h.time_lags.push_back(snap(lag, grid.dt));
  } else {
    const double base = delta * delta / rho0;
    for (std::size_t i = 0; i < n; ++i) {
      const double lag = 10.0 * base * std::pow(10.0, static_cast<double>(i) / static_cast<double>(n - 1));
      h.time_lags.push_back(snap(lag, grid.dt));
    }
  }
  if (!s.space_lags.empty()) {
    for (double lag : s.space_lags) h.space_lags.push_back(snap(lag, db));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double lag = 4.0 * delta * std::pow(10.0, static_cast<double>(i) / static_cast<double>(n - 1));
      h.space_lags.push_back(snap(lag, db));
    }
  }
  return h;
}

inline LocalTimeRun simulate_local_times(const RunConfig& c, const Model& md, std::uint64_t seed, std::size_t R,
                                         unsigned threads) {
  const double rho0 = md.kernel.rho0();
  LocalTimeRun run;
  run.delta = c.localtime.delta > 0.0 ? c.localtime.delta : default_bandwidth(rho0, md.grid.dt);
  const std::size_t per = c.localtime.per_bandwidth;
  // Shared grid with spacing delta / (2 per): delta covers 2 per nodes per side, delta / 2 covers per.
  const auto bgrid = bandwidth_grid(c.localtime.b_lo, c.localtime.b_hi, run.delta, 2 * per);
  const double db = bgrid[1] - bgrid[0];
  run.holder = default_holder(c, md.grid, run.delta, rho0, db);
  for (double& b : run.holder.space_bases) b = bgrid[detail::nearest_index(bgrid, b, 0.5 * db + 1e-12, "base b")];
  run.holder.b_anchor = bgrid[detail::nearest_index(bgrid, run.holder.b_anchor, 0.5 * db + 1e-12, "anchor b")];

  std::vector<double> times = c.localtime.t_grid;
  if (times.empty()) {
    const std::size_t stride = experiments_detail::stride_of(c, md.grid);
    for (std::size_t k = 0; k <= md.grid.steps; k += stride) times.push_back(md.grid.time(k));
  }
  times.push_back(run.holder.r);
  times.push_back(run.holder.t_space);
  for (double lag : run.holder.time_lags) times.push_back(run.holder.r + lag);
  std::vector<std::size_t> idx = grid_indices(md.grid, times);
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());

  run.fields.resize(R);
  run.alt_fields.resize(R);
  run.residuals.resize(R);
  const bool half_ok = run.delta / 2.0 >= min_bandwidth(rho0, md.grid.dt) * (1.0 - 1e-12);
  run.alt_delta = half_ok ? run.delta / 2.0 : 2.0 * run.delta;
  parallel_for(
      R,
      [&](std::size_t r) {
        LocalTimeAccumulator acc(bgrid, md.grid, idx, run.delta, rho0);
        LocalTimeAccumulator alt(bgrid, md.grid, idx, run.alt_delta, rho0);
        simulate_replicate(md, seed, r, [&](std::size_t k, const Snapshot& s) {
          acc.observe(k, s);
          alt.observe(k, s);
        });
        run.residuals[r] = occupation_residual(acc.field(), acc.occupation());
        run.fields[r] = acc.take();
        run.alt_fields[r] = alt.take();
      },
      threads);
  return run;
}

inline ExperimentOutput run_localtime(const RunRequest& req) {
  using namespace experiments_detail;
  const RunConfig& c = req.config;
  const Model md = make_model(c);
  const std::size_t R = req.replicates;
  LocalTimeRun run = simulate_local_times(c, md, req.seed, R, req.threads);

  ExperimentOutput out;
  out.sample_ranges["replicates"] = {0, R};
  const LocalTimeField mean = mean_field(run.fields);
  {
    CsvWriter f(req.out / "localtime_field.csv", {"b", "t", "z"});
    for (std::size_t it = 0; it < mean.nt(); ++it) {
      for (std::size_t ib = 0; ib < mean.nb(); ++ib) f.values(mean.b_grid[ib], mean.t_grid[it], mean.z(ib, it));
    }
    out.files.push_back("localtime_field.csv");
  }

  const double worst = *std::max_element(run.residuals.begin(), run.residuals.end());
  out.reports.push_back(value_in_range("occupation identity (max relative residual)", "occupation density", worst,
                                       0.0, 0.02, 0.0, R));
  bool monotone = true;
  for (const auto& f : run.fields) monotone = monotone && f.monotone();
  out.reports.push_back(flag("local time nondecreasing in t", "occupation density", monotone, {}, R));
  {
    const double l1 = relative_l1(mean, mean_field(run.alt_fields));
    out.reports.push_back(value_in_range("bandwidth robustness (delta vs " + fmt(run.alt_delta / run.delta) +
                                             " delta, relative L1)",
                                         "bandwidth refinement", l1, 0.0, 0.05, 0.0, R));
  }

  CsvWriter hc(req.out / "holder.csv", {"direction", "k", "lag", "moment"});
  nlohmann::json slopes = nlohmann::json::object();
  for (unsigned k : {1u, 2u}) {
    HolderConfig h = run.holder;
    h.k = k;
    const HolderResult res = holder_exponents(run.fields, h);
    for (std::size_t i = 0; i < res.time.lags.size(); ++i) hc.values("time", k, res.time.lags[i], res.time.moments[i]);
    for (std::size_t i = 0; i < res.space.lags.size(); ++i)
      hc.values("space", k, res.space.lags[i], res.space.moments[i]);
    slopes["k" + std::to_string(k)] = {{"time_slope", res.time.slope},
                                       {"time_slope_se", res.time.slope_se},
                                       {"space_slope", res.space.slope},
                                       {"space_slope_se", res.space.slope_se}};
    if (k == 1) {
      out.reports.push_back(value_in_range("time moment slope (k=1)", "time moment scaling", res.time.slope, 0.85, 1.15,
                                           res.time.slope_se, R));
      out.reports.push_back(value_in_range("space moment slope (k=1)", "space moment scaling", res.space.slope, 0.85,
                                           1.15, res.space.slope_se, R));
    }
    if (req.plots) {
      for (const char* dir : {"time", "space"}) {
        const std::string stem = std::string("holder_") + dir + "_k" + std::to_string(k);
        CsvWriter one(req.out / (stem + ".csv"), {"lag", "moment"});
        const MomentCurve& mc = std::string(dir) == "time" ? res.time : res.space;
        for (std::size_t i = 0; i < mc.lags.size(); ++i) one.values(mc.lags[i], mc.moments[i]);
        out.files.push_back(stem + ".csv");
      }
    }
  }
  out.files.push_back("holder.csv");
  out.summary["delta"] = run.delta;
  out.summary["alt_delta"] = run.alt_delta;
  out.summary["slopes"] = slopes;
  out.summary["max_occupation_residual"] = worst;
  out.summary["time_lags"] = run.holder.time_lags;
  out.summary["space_lags"] = run.holder.space_lags;
  return out;
}

// ---------------------------------------------------------------------------
// scaling-det

struct ScalingDetRow {
  double k = 0.0;
  stats::Summary pairing;  // <phi, k^-1 Y^k_t>
  std::vector<double> samples;
  stats::Summary lt;       // int k^-4 z(k b, k^2 t) phi(b) db
  double target = 0.0;
  double lt_target = 0.0;
  double variance_bound = 0.0;
};

inline std::vector<ScalingDetRow> simulate_scaling_det(const RunConfig& c, std::uint64_t seed, std::size_t R,
                                                       unsigned threads) {
  const CorrelationKernel kernel = c.kernel.build();
  const double rho0 = kernel.rho0();
  const ScalingSpec& sc = c.scaling;
  if (c.q.depends_on_state()) throw ConfigError("config key 'q': deterministic scaling needs a site-only rate");
  const double q_inf = c.q.far_field_limit();
  const double q_max = c.declared_q_max();
  const TestFunction phi = gaussian_bump(0.0, sc.phi_scale);
  const double int_phi = sc.phi_scale * std::sqrt(2.0 * M_PI);
  const double int_phi2 = sc.phi_scale * std::sqrt(M_PI);
  const double t = sc.t;
  const double half_width_scaled = sc.window_sd * (1.0 + std::sqrt(rho0 * t));
  if (half_width_scaled < 3.0 * sc.phi_scale + 3.0 * std::sqrt(rho0 * t)) {
    throw ConfigError("config key 'scaling.window_sd': window too small, boundary influx above tolerance");
  }

  std::vector<ScalingDetRow> rows;
  for (std::size_t ki = 0; ki < sc.k.size(); ++ki) {
    const double k = sc.k[ki];
    RunConfig rc = c;
    rc.m.type = "lebesgue";
    rc.m.half_width = k * half_width_scaled;
    rc.mu = AtomicMeasure{};
    rc.horizon = k * k * t;
    rc.dt = k * k * sc.base_dt;
    rc.excursion_eps = k * k * sc.base_eps;
    Model md = make_model(rc);
    md.picard.tol = -1.0;

    const double delta = default_bandwidth(rho0, md.grid.dt);
    const double margin = rc.m.half_width + 8.0 * std::sqrt(rho0 * md.grid.horizon()) + 2.0 * delta;
    const auto bgrid = bandwidth_grid(-margin, margin, delta, 4);
    const std::vector<std::size_t> last{md.grid.steps};

    ScalingDetRow row;
    row.k = k;
    row.target = q_inf * t * int_phi;
    row.lt_target = q_inf * t * t / 2.0 * int_phi;
    row.variance_bound = c.sigma * q_max * t * t / 2.0 * int_phi2 / k;
    std::vector<double> pairing(R), lt(R);
    parallel_for(
        R,
        [&](std::size_t r) {
          const std::uint64_t sample = ki * R + r;
          std::optional<LocalTimeAccumulator> acc;
          if (sc.local_time) acc.emplace(bgrid, md.grid, last, delta, rho0);
          Snapshot final;
          simulate_replicate(md, seed, sample, [&](std::size_t step, const Snapshot& s) {
            if (acc) acc->observe(step, s);
            if (step == md.grid.steps) final = s;
          });
          const Snapshot scaled = scale_snapshot(final, k);
          pairing[r] = scaled.pair(phi.f) / k;
          if (acc) lt[r] = scaled_pairing(acc->field(), 0, k, std::pow(k, -4.0), phi.f);
        },
        threads);
    row.samples = pairing;
    row.pairing = stats::summarize(pairing);
    row.lt = stats::summarize(lt);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline ExperimentOutput run_scaling_det(const RunRequest& req) {
  using namespace experiments_detail;
  const RunConfig& c = req.config;
  const std::size_t R = req.replicates;
  const auto rows = simulate_scaling_det(c, req.seed, R, req.threads);
  ExperimentOutput out;
  out.sample_ranges["k groups"] = {0, rows.size() * R};
  CsvWriter csv(req.out / "scaling_det.csv", {"k", "t", "mean", "se", "variance", "variance_bound", "target", "bias",
                                              "lt_mean", "lt_se", "lt_target", "lt_bias"});
  std::vector<double> bias, lt_bias;
  for (const auto& row : rows) {
    bias.push_back(std::abs(row.pairing.mean - row.target));
    lt_bias.push_back(std::abs(row.lt.mean - row.lt_target));
    csv.values(row.k, c.scaling.t, row.pairing.mean, row.pairing.se(), row.pairing.variance(), row.variance_bound,
               row.target, bias.back(), row.lt.mean, row.lt.se(), row.lt_target, lt_bias.back());
    out.reports.push_back(variance_below("deterministic limit variance bound, k=" + fmt(row.k),
                                         "deterministic scaling limit", row.samples, row.variance_bound));
  }
  out.files.push_back("scaling_det.csv");
  std::string detail;
  for (double b : bias) detail += fmt(b) + " ";
  out.reports.push_back(flag("deterministic limit bias decreasing in k", "deterministic scaling limit",
                             strictly_decreasing(bias), detail, R));
  if (c.scaling.local_time) {
    detail.clear();
    for (double b : lt_bias) detail += fmt(b) + " ";
    out.reports.push_back(flag("local time limit bias decreasing in k", "local time scaling limit",
                               strictly_decreasing(lt_bias), detail, R));
  }
  return out;
}

// ---------------------------------------------------------------------------
// scaling-rcbm

struct ScalingRcbmSamples {
  double k = 0.0;
  std::vector<double> x_mass;    // <1, X^k_t>
  std::vector<double> y_mass;    // <1, Y^k_t>
  std::vector<double> y_phi;     // <phi, Y^k_t>
  std::vector<double> y_lt;      // int k^-3 z(k b, k^2 t) phi(b) db
};

struct ScalingRcbmRun {
  std::vector<ScalingRcbmSamples> scaled;
  ScalingRcbmSamples limit;  // k = inf
  double mass_target = 0.0;
};

inline ScalingRcbmRun simulate_scaling_rcbm(const RunConfig& c, std::uint64_t seed, std::size_t R, unsigned threads) {
  const CorrelationKernel kernel = c.kernel.build();
  const double rho0 = kernel.rho0();
  const ScalingSpec& sc = c.scaling;
  const double t = sc.t;
  const RateSpec q = c.q;
  if (!(q.infimum() > 0.0)) throw ConfigError("config key 'q': the random scaling limit needs q bounded below by a positive constant");
  if (!c.m.build().is_atomic() && c.m.type == "lebesgue") throw ConfigError("config key 'm': needs a finite measure");
  const std::function<double(double)> q_lim = [q](double a) { return q.large_mass_limit(a); };
  const TestFunction phi = gaussian_bump(0.0, sc.phi_scale);
  const bool with_lt = sc.local_time;

  ScalingRcbmRun run;
  const ReferenceMeasure m = c.m.build();
  run.mass_target = m.integrate(q_lim) * t;
  const std::size_t groups = sc.k.size();
  for (std::size_t ki = 0; ki < groups; ++ki) {
    const double k = sc.k[ki];
    RunConfig rc = c;
    rc.mu = AtomicMeasure{};
    rc.horizon = k * k * t;
    rc.dt = k * k * sc.base_dt;
    rc.excursion_eps = k * k * sc.base_eps;
    const Model md = make_model(rc);
    const ImmigrationRate fixed = ImmigrationRate::predictable(
        [q](double, double a) { return q.large_mass_limit(a); }, md.q_max);
    const double delta = default_bandwidth(rho0, md.grid.dt);
    const double reach = 8.0 * std::sqrt(rho0 * md.grid.horizon()) + 2.0 * delta;
    std::vector<double> sites;
    if (const auto* a = m.atoms()) {
      for (const Atom& x : a->atoms()) sites.push_back(x.position);
    }
    const double lo = sites.empty() ? -reach : *std::min_element(sites.begin(), sites.end()) - reach;
    const double hi = sites.empty() ? reach : *std::max_element(sites.begin(), sites.end()) + reach;
    const auto bgrid = bandwidth_grid(lo, hi, delta, 4);
    const std::vector<std::size_t> last{md.grid.steps};

    ScalingRcbmSamples s;
    s.k = k;
    s.x_mass.resize(R);
    s.y_mass.resize(R);
    s.y_phi.resize(R);
    s.y_lt.resize(R);
    parallel_for(
        R,
        [&](std::size_t r) {
          const std::uint64_t sample = ki * R + r;
          const ReplicateRandomness rnd = draw_randomness(md, seed, sample);
          SuperprocessPath ypath{md.grid, {}};
          if (md.rate.is_interactive()) {
            ypath = build_interactive(md.rate, rnd.candidates, rnd.clusters, rnd.flow, md.grid, md.picard).path;
          } else {
            ypath = build_fixed_rate(md.rate, rnd.candidates, rnd.clusters, rnd.flow, md.grid);
          }
          Snapshot xfinal;
          build_fixed_rate(fixed, rnd.candidates, rnd.clusters, rnd.flow, md.grid,
                           [&](std::size_t step, const Snapshot& snap) {
                             if (step == md.grid.steps) xfinal = snap;
                           });
          const Snapshot y = scale_snapshot(ypath.snapshots.back(), k);
          s.x_mass[r] = scale_snapshot(xfinal, k).total_mass();
          s.y_mass[r] = y.total_mass();
          s.y_phi[r] = y.pair(phi.f);
          if (with_lt) {
            const LocalTimeField f = local_time_field(ypath, bgrid, std::vector<double>{md.grid.horizon()}, delta, rho0);
            s.y_lt[r] = scaled_pairing(f, 0, k, std::pow(k, -3.0), phi.f);
          }
        },
        threads);
    run.scaled.push_back(std::move(s));
  }

  // Limit process in scaled units, on its own sample group.
  RunConfig rc = c;
  rc.mu = AtomicMeasure{};
  rc.horizon = t;
  rc.dt = sc.base_dt;
  rc.excursion_eps = sc.base_eps;
  const Model md = make_model(rc);
  const double delta = default_bandwidth(rho0, md.grid.dt);
  const double reach = 8.0 * std::sqrt(rho0 * t) + 2.0 * delta;
  const auto bgrid = bandwidth_grid(-reach, reach, delta, 4);
  run.limit.k = std::numeric_limits<double>::infinity();
  run.limit.x_mass.resize(R);
  run.limit.y_mass.resize(R);
  run.limit.y_phi.resize(R);
  run.limit.y_lt.resize(R);
  parallel_for(
      R,
      [&](std::size_t r) {
        const std::uint64_t sample = groups * R + r;
        RngStream cand_rng(seed, stream_id(sample, StreamPurpose::kCandidates));
        RngStream flow_rng(seed, stream_id(sample, StreamPurpose::kRcbm));
        CandidateConfig cc{md.eps, md.sigma, md.q_max, md.candidate_cap};
        const auto cands = sample_candidates(md.m, md.grid, cc, cand_rng);
        SuperprocessPath path{md.grid, {}};
        build_rcbm_limit(q_lim, cands, md.grid, rho0, flow_rng, recorder(path));
        const Snapshot& y = path.snapshots.back();
        run.limit.x_mass[r] = y.total_mass();
        run.limit.y_mass[r] = y.total_mass();
        run.limit.y_phi[r] = y.pair(phi.f);
        if (with_lt) {
          const LocalTimeField f = local_time_field(path, bgrid, std::vector<double>{t}, delta, rho0);
          run.limit.y_lt[r] = scaled_pairing(f, 0, 1.0, 1.0, phi.f);
        }
      },
      threads);
  return run;
}

inline ExperimentOutput run_scaling_rcbm(const RunRequest& req) {
  using namespace experiments_detail;
  const RunConfig& c = req.config;
  const std::size_t R = req.replicates;
  const auto run = simulate_scaling_rcbm(c, req.seed, R, req.threads);
  ExperimentOutput out;
  out.sample_ranges["k groups and limit"] = {0, (run.scaled.size() + 1) * R};

  CsvWriter csv(req.out / "scaling_rcbm.csv", {"k", "mean_x_mass", "mean_y_mass", "mean_y_phi", "mean_y_lt",
                                               "ks_phi_vs_limit", "ks_lt_vs_limit"});
  std::vector<double> ks_phi, ks_lt;
  for (const auto& s : run.scaled) {
    ks_phi.push_back(stats::ks_two_sample(s.y_phi, run.limit.y_phi).statistic);
    ks_lt.push_back(c.scaling.local_time ? stats::ks_two_sample(s.y_lt, run.limit.y_lt).statistic : 0.0);
    csv.values(s.k, stats::summarize(s.x_mass).mean, stats::summarize(s.y_mass).mean, stats::summarize(s.y_phi).mean,
               stats::summarize(s.y_lt).mean, ks_phi.back(), ks_lt.back());
  }
  csv.values("inf", stats::summarize(run.limit.x_mass).mean, stats::summarize(run.limit.y_mass).mean,
             stats::summarize(run.limit.y_phi).mean, stats::summarize(run.limit.y_lt).mean, 0.0, 0.0);
  out.files.push_back("scaling_rcbm.csv");
  {
    CsvWriter samples(req.out / "scaling_rcbm_samples.csv", {"k", "replicate", "x_mass", "y_mass", "y_phi", "y_lt"});
    for (const auto& s : run.scaled) {
      for (std::size_t r = 0; r < R; ++r) samples.values(s.k, r, s.x_mass[r], s.y_mass[r], s.y_phi[r], s.y_lt[r]);
    }
    for (std::size_t r = 0; r < R; ++r) {
      samples.values("inf", r, run.limit.x_mass[r], run.limit.y_mass[r], run.limit.y_phi[r], run.limit.y_lt[r]);
    }
    out.files.push_back("scaling_rcbm_samples.csv");
  }

  if (run.scaled.size() >= 2) {
    out.reports.push_back(ks_same_law("total mass of X^k: k=" + fmt(run.scaled.front().k) + " vs k=" +
                                          fmt(run.scaled.back().k),
                                      "k-independent total mass", run.scaled.front().x_mass, run.scaled.back().x_mass));
  }
  out.reports.push_back(mean_equals("limit mean total mass", "branching-immigration total mass", run.limit.y_mass,
                                    run.mass_target));
  std::string detail;
  for (double d : ks_phi) detail += fmt(d) + " ";
  out.reports.push_back(flag("KS distance <phi,Y^k> vs limit decreasing in k", "random scaling limit",
                             strictly_decreasing(ks_phi), detail, R));
  if (c.scaling.local_time) {
    detail.clear();
    for (double d : ks_lt) detail += fmt(d) + " ";
    out.reports.push_back(flag("KS distance local time pairing vs limit decreasing in k", "local time random limit",
                               strictly_decreasing(ks_lt), detail, R));
  }
  return out;
}

// ---------------------------------------------------------------------------
// rcbm-flow

/// P(two RCBM trajectories born at r < s have met by t): the difference starts
/// at s from N(0, rho (s - r)) and moves with speed 2 rho, so given D_s = d the
/// hitting probability is 2 Phi(-|d| / sqrt(2 rho (t - s))).
inline double rcbm_meet_probability(double rho, double r, double s, double t) {
  const double sd0 = std::sqrt(rho * (s - r));
  const double sd1 = std::sqrt(2.0 * rho * (t - s));
  const auto integrand = [&](double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI) * 2.0 * stats::normal_cdf(-std::abs(z) * sd0 / sd1);
  };
  return detail::integrate(integrand, -12.0, 0.0, 1e-12) + detail::integrate(integrand, 0.0, 12.0, 1e-12);
}

inline ExperimentOutput run_rcbm_flow(const RunRequest& req) {
  using namespace experiments_detail;
  const RunConfig& c = req.config;
  const CorrelationKernel kernel = c.kernel.build();
  const double rho = kernel.rho0();
  const std::size_t R = req.replicates;
  const TimeGrid grid = TimeGrid::covering(c.horizon, c.dt);
  const std::vector<double> births{0.0, 0.25 * c.horizon, 0.5 * c.horizon};

  struct Rep {
    std::vector<double> final_values;
    std::vector<char> met;  // pairs (0,1), (0,2), (1,2)
    bool monotone = true;
  };
  std::vector<Rep> reps(R);
  parallel_for(
      R,
      [&](std::size_t r) {
        RngStream rng(req.seed, stream_id(r, StreamPurpose::kRcbm));
        RcbmState st;
        std::size_t next = 0;
        std::vector<char> prev(3, 0);
        Rep& rep = reps[r];
        for (std::size_t k = 0; k <= grid.steps; ++k) {
          const double t = grid.time(k);
          while (next < births.size() && births[next] <= t + 1e-12) st.spawn(next++);
          const std::size_t n = st.trajectories.size();
          std::vector<char> now(3, 0);
          std::size_t p = 0;
          for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = i + 1; j < 3; ++j, ++p) now[p] = (j < n && st.coalesced(i, j)) ? 1 : 0;
          }
          for (std::size_t q = 0; q < 3; ++q) rep.monotone = rep.monotone && (now[q] >= prev[q]);
          prev = now;
          if (k < grid.steps) st = rcbm_step(std::move(st), grid.dt, rho, rng);
        }
        for (const auto& tr : st.trajectories) rep.final_values.push_back(tr.value);
        rep.met = prev;
      },
      req.threads);

  ExperimentOutput out;
  out.sample_ranges["replicates"] = {0, R};
  CsvWriter csv(req.out / "rcbm_flow.csv", {"quantity", "empirical", "se", "target"});
  std::vector<double> col(R);
  for (std::size_t i = 0; i < births.size(); ++i) {
    for (std::size_t r = 0; r < R; ++r) col[r] = reps[r].final_values[i] * reps[r].final_values[i];
    const double target = rho * (grid.horizon() - births[i]);
    const auto s = stats::summarize(col);
    csv.values("var_y_r" + std::to_string(i), s.mean, s.se(), target);
    out.reports.push_back(mean_equals("RCBM variance, birth " + fmt(births[i]), "RCBM marginal speed", col, target));
  }
  std::size_t p = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = i + 1; j < 3; ++j, ++p) {
      for (std::size_t r = 0; r < R; ++r) col[r] = reps[r].met[p];
      const double target = rcbm_meet_probability(rho, births[i], births[j], grid.horizon());
      const auto s = stats::summarize(col);
      csv.values("meet_" + std::to_string(i) + std::to_string(j), s.mean, s.se(), target);
      out.reports.push_back(mean_equals("RCBM coalescence probability, births " + fmt(births[i]) + "," +
                                            fmt(births[j]),
                                        "RCBM stopped difference", col, target));
    }
  }
  bool monotone = true;
  for (const auto& r : reps) monotone = monotone && r.monotone;
  out.reports.push_back(flag("RCBM coalescence monotone", "RCBM stopped difference", monotone, {}, R));
  out.files.push_back("rcbm_flow.csv");
  return out;
}

// ---------------------------------------------------------------------------
// runner

inline ExperimentOutput dispatch(const RunRequest& req) {
  if (req.experiment == "simulate") return run_simulate(req);
  if (req.experiment == "verify") return run_verify(req);
  if (req.experiment == "localtime") return run_localtime(req);
  if (req.experiment == "scaling-det") return run_scaling_det(req);
  if (req.experiment == "scaling-rcbm") return run_scaling_rcbm(req);
  if (req.experiment == "rcbm-flow") return run_rcbm_flow(req);
  throw ConfigError("unknown experiment '" + req.experiment +
                    "' (expected simulate, localtime, scaling-det, scaling-rcbm, verify or rcbm-flow)");
}

inline void emit_plots(const std::string& experiment, const std::filesystem::path& dir, ExperimentOutput& out) {
  const auto add = [&](const std::string& name) { out.files.push_back(name); };
  if (experiment == "localtime") {
    svg::heatmap(dir / "localtime_field.csv", dir / "localtime_heatmap.svg", "mean local time z(b,t)");
    add("localtime_heatmap.svg");
    for (const char* d : {"time", "space"}) {
      for (int k : {1, 2}) {
        const std::string stem = std::string("holder_") + d + "_k" + std::to_string(k);
        svg::moment_plot(dir / (stem + ".csv"), dir / (stem + ".svg"),
                         std::string(d) + " increments, moment order " + std::to_string(2 * k), k);
        add(stem + ".svg");
      }
    }
  } else if (experiment == "scaling-det") {
    svg::bias_plot(dir / "scaling_det.csv", dir / "scaling_det_bias.svg", "bias of the deterministic limit vs k");
    svg::bias_plot(dir / "scaling_det.csv", dir / "scaling_det_lt_bias.svg", "bias of the local time limit vs k",
                   "lt_bias");
    add("scaling_det_bias.svg");
    add("scaling_det_lt_bias.svg");
  } else if (experiment == "scaling-rcbm") {
    svg::bias_plot(dir / "scaling_rcbm.csv", dir / "scaling_rcbm_ks.svg", "KS distance to the limit vs k",
                   "ks_phi_vs_limit");
    add("scaling_rcbm_ks.svg");
  }
}

struct RunOutcome {
  std::vector<VerificationReport> reports;
  nlohmann::json manifest;
  bool all_pass = true;
};

/// Runs an experiment, writing artifacts, report.jsonl and manifest.json to
/// req.out.
inline RunOutcome run(const RunRequest& req) {
  if (req.replicates == 0) throw ConfigError("replicates must be >= 1");
  std::filesystem::create_directories(req.out);
  const auto start = std::chrono::steady_clock::now();
  ExperimentOutput out = dispatch(req);
  if (req.plots) emit_plots(req.experiment, req.out, out);
  write_reports(req.out / "report.jsonl", out.reports);
  out.files.push_back("report.jsonl");
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const nlohmann::json cfg = req.config.to_json();
  nlohmann::json streams = nlohmann::json::object();
  for (const auto& [label, range] : out.sample_ranges) {
    nlohmann::json ids = nlohmann::json::array();
    for (std::uint64_t s = range.first; s < range.second; ++s) {
      nlohmann::json per = nlohmann::json::object();
      per["sample"] = s;
      for (auto [name, purpose] : {std::pair{"candidates", StreamPurpose::kCandidates},
                                   std::pair{"clusters", StreamPurpose::kClusters}, std::pair{"flow", StreamPurpose::kFlow},
                                   std::pair{"rcbm", StreamPurpose::kRcbm}}) {
        per[name] = stream_id(s, purpose);
      }
      ids.push_back(per);
    }
    streams[label] = ids;
  }
  RunOutcome res;
  res.manifest = {{"experiment", req.experiment},
                  {"config", cfg},
                  {"config_hash", hex64(fnv1a(cfg.dump()))},
                  {"seed", req.seed},
                  {"replicates", req.replicates},
                  {"stream_rule", "stream_id = (sample << 8) | purpose; Philox4x32-10 keyed by seed"},
                  {"streams", streams},
                  {"code_version", ISDSM_VERSION},
                  {"wall_time_seconds", wall},
                  {"files", out.files},
                  {"summary", out.summary}};
  {
    std::ofstream m(req.out / "manifest.json");
    if (!m) throw ConfigError("cannot write manifest.json");
    m << res.manifest.dump(2) << '\n';
  }
  res.reports = std::move(out.reports);
  for (const auto& r : res.reports) res.all_pass = res.all_pass && r.verdict();
  return res;
}

}  // namespace isdsm
