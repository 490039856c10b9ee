#include <gtest/gtest.h>

#include <cmath>

#include "isdsm/localtime.hpp"
#include "isdsm/stats.hpp"
#include "isdsm/superprocess.hpp"

using namespace isdsm;

// For a Brownian motion of speed rho0 from 0, E l(0, t) = int_0^t p_s(0) ds
// = sqrt(2 t / (pi rho0)).
TEST(BrownianLocalTime, MeanAtOrigin) {
  const double rho0 = 1.0, dt = 1e-4, delta = 0.04;
  const std::size_t steps = 10000;
  std::vector<double> times(steps + 1), path(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) times[i] = i * dt;
  RngStream rng(31, 1);
  stats::Summary half, one;
  for (int r = 0; r < 1500; ++r) {
    path[0] = 0.0;
    for (std::size_t i = 1; i <= steps; ++i) path[i] = path[i - 1] + std::sqrt(rho0 * dt) * rng.normal();
    const auto l = brownian_local_time(times, path, 0.0, delta, rho0);
    half.add(l[steps / 2]);
    one.add(l[steps]);
  }
  const auto expect = [&](double t) { return std::sqrt(2 * t / (M_PI * rho0)); };
  EXPECT_NEAR(half.mean, expect(0.5), 4 * half.se() + 0.02 * expect(0.5));
  EXPECT_NEAR(one.mean, expect(1.0), 4 * one.se() + 0.02 * expect(1.0));
}

TEST(BrownianLocalTime, RejectsSmallBandwidth) {
  const std::vector<double> times{0.0, 0.01}, path{0.0, 0.0};
  EXPECT_THROW(brownian_local_time(times, path, 0.0, 0.1, 1.0), ConfigError);
  EXPECT_NO_THROW(brownian_local_time(times, path, 0.0, 0.2, 1.0));
}

// A single immortal atom of unit mass that never moves: z(0, t) = t / (2 delta).
TEST(LocalTimeField, FrozenAtom) {
  const TimeGrid grid = TimeGrid::covering(1.0, 0.01);
  const double delta = 0.25;
  const std::vector<InitialCluster> clusters{immortal_cluster(0, 0.0, 1.0, grid)};
  FlowConfig flow;
  flow.backend = FlowBackend::kFrozen;
  const auto path = build_fixed_rate(ImmigrationRate::constant(0.0), {}, clusters, flow, grid);
  const std::vector<double> t_grid{0.0, 0.25, 0.5, 1.0};
  const auto field = local_time_field(path, bandwidth_grid(-1.0, 1.0, delta), t_grid, delta, 1.0);
  std::size_t origin = 0;
  while (field.b_grid[origin] < 0.0) ++origin;
  for (std::size_t it = 0; it < t_grid.size(); ++it) {
    EXPECT_NEAR(field.z(origin, it), t_grid[it] / (2 * delta), 1e-12);
    EXPECT_NEAR(field.z(0, it), 0.0, 1e-15);
    EXPECT_NEAR(field.integral(it), t_grid[it], 1e-12);
  }
  EXPECT_TRUE(field.monotone());
}

// The b-integral of z equals the time integral of the total mass.
TEST(LocalTimeField, OccupationIdentity) {
  const CorrelationKernel kernel = gaussian_kernel(1.0, 0.5);
  const TimeGrid grid = TimeGrid::covering(1.0, 0.001);
  const ReferenceMeasure m{AtomicMeasure({{0.0, 1.0}})};
  RngStream rc(32, 1), rk(32, 2);
  const auto cands = sample_candidates(m, grid, {0.01, 1.0, 1.0, 2e7}, rc);
  const auto clus = sample_initial_clusters(InitialCondition{AtomicMeasure({{0.0, 1.0}}), std::nullopt}, 0.01, 1.0,
                                            grid, rk);
  FlowConfig flow;
  flow.kernel = &kernel;
  flow.seed = 32;
  flow.stream = 3;
  const auto path = build_fixed_rate(ImmigrationRate::constant(1.0), cands, clus, flow, grid);
  const double delta = 4 * std::sqrt(kernel.rho0() * grid.dt);
  const std::vector<double> t_grid{0.1, 0.5, 1.0};
  const auto field = local_time_field(path, bandwidth_grid(-8.0, 8.0, delta), t_grid, delta, kernel.rho0());
  for (std::size_t it = 0; it < t_grid.size(); ++it) {
    const auto n = static_cast<std::size_t>(std::llround(t_grid[it] / grid.dt));
    double occ = 0.0;
    for (std::size_t k = 1; k <= n; ++k) occ += 0.5 * (path.at(k - 1).total_mass() + path.at(k).total_mass()) * grid.dt;
    ASSERT_GT(occ, 0.0);
    EXPECT_NEAR(field.integral(it), occ, 1e-9 * occ);
  }
  EXPECT_TRUE(field.monotone());
}

namespace {

LocalTimeField synthetic(double noise, RngStream& rng) {
  LocalTimeField f;
  for (int i = 0; i <= 200; ++i) f.b_grid.push_back(0.01 * i);
  for (int i = 0; i <= 200; ++i) f.t_grid.push_back(0.01 * i);
  f.delta = 0.01;
  f.values.resize(f.nb() * f.nt());
  const double shift = noise * rng.normal();
  for (std::size_t it = 0; it < f.nt(); ++it) {
    for (std::size_t ib = 0; ib < f.nb(); ++ib) f.z(ib, it) = 3 * f.t_grid[it] + 2 * f.b_grid[ib] + shift;
  }
  return f;
}

HolderConfig lags() {
  HolderConfig c;
  c.b_anchor = 0.5;
  c.r = 0.2;
  c.time_lags = {0.01, 0.03, 0.1, 0.3};
  c.t_space = 1.0;
  c.space_bases = {0.1, 0.5};
  c.space_lags = {0.02, 0.05, 0.2, 0.5};
  return c;
}

}  // namespace

// Fields linear in t and b have moment slopes exactly 2k.
TEST(Holder, LinearFieldCalibration) {
  RngStream rng(33, 1);
  std::vector<LocalTimeField> fields;
  for (int i = 0; i < 5; ++i) fields.push_back(synthetic(1.0, rng));
  for (unsigned k : {1u, 2u}) {
    HolderConfig c = lags();
    c.k = k;
    const auto h = holder_exponents(fields, c);
    EXPECT_NEAR(h.time.slope, 2.0 * k, 1e-9);
    EXPECT_NEAR(h.space.slope, 2.0 * k, 1e-9);
    EXPECT_NEAR(h.time.slope_se, 0.0, 1e-9);
    EXPECT_NEAR(h.time.moments[0], std::pow(0.03, 2.0 * k), 1e-9);
  }
}

TEST(Holder, RejectsNarrowLagRange) {
  RngStream rng(34, 1);
  std::vector<LocalTimeField> fields{synthetic(0.0, rng)};
  HolderConfig c = lags();
  c.time_lags = {0.05, 0.1, 0.2};
  EXPECT_THROW(holder_exponents(fields, c), UsageError);
  c = lags();
  c.space_lags = {0.1, 0.2};
  EXPECT_THROW(holder_exponents(fields, c), UsageError);
  c = lags();
  c.space_bases = {0.105};
  EXPECT_THROW(holder_exponents(fields, c), UsageError);
}

TEST(LocalTimeField, RelativeL1AndBandwidthChecks) {
  RngStream rng(35, 1);
  const auto a = synthetic(0.0, rng);
  auto b = a;
  for (double& v : b.values) v *= 1.1;
  EXPECT_NEAR(relative_l1(a, b), 0.1, 1e-12);
  EXPECT_EQ(relative_l1(a, a), 0.0);
  EXPECT_THROW(check_bandwidth(0.0, 1.0, 0.01), ConfigError);
  EXPECT_THROW(check_bandwidth(0.1, 1.0, 0.01), ConfigError);
  EXPECT_NO_THROW(check_bandwidth(min_bandwidth(1.0, 0.01), 1.0, 0.01));
  EXPECT_THROW(LocalTimeAccumulator({0.0, 0.1, 0.3}, TimeGrid(0.01, 10), {0}, 0.4, 1.0), UsageError);
}
