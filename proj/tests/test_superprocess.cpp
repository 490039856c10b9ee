#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "isdsm/stats.hpp"
#include "isdsm/superprocess.hpp"

using namespace isdsm;

namespace {

struct Scene {
  CorrelationKernel kernel = gaussian_kernel(1.0, 0.5);
  ReferenceMeasure m{AtomicMeasure({{-0.5, 1.0}, {0.5, 1.0}})};
  TimeGrid grid = TimeGrid::covering(1.0, 0.02);
  CandidateConfig cand{0.01, 1.0, 2.0, 2e7};

  FlowConfig flow(std::uint64_t seed) const {
    FlowConfig f;
    f.kernel = &kernel;
    f.seed = seed;
    f.stream = stream_id(0, StreamPurpose::kFlow);
    return f;
  }
  std::vector<Candidate> candidates(std::uint64_t seed, std::uint64_t rep = 0) const {
    RngStream rng(seed, stream_id(rep, StreamPurpose::kCandidates));
    return sample_candidates(m, grid, cand, rng);
  }
  std::vector<InitialCluster> clusters(std::uint64_t seed) const {
    InitialCondition mu0{AtomicMeasure({{0.0, 1.0}}), std::nullopt};
    RngStream rng(seed, stream_id(0, StreamPurpose::kClusters));
    return sample_initial_clusters(mu0, cand.eps, cand.sigma, grid, rng);
  }
};

}  // namespace

TEST(Candidates, CountAndMarks) {
  const Scene s;
  const double expected = expected_candidates(s.m, s.grid, s.cand);
  EXPECT_NEAR(expected, 1.0 * 2.0 * 2.0 * 2.0 / 0.01, 1e-9);
  stats::Summary count, mark;
  for (std::uint64_t r = 0; r < 400; ++r) {
    const auto c = s.candidates(11, r);
    count.add(static_cast<double>(c.size()));
    for (const Candidate& x : c) {
      ASSERT_GE(x.mark, 0.0);
      ASSERT_LE(x.mark, s.cand.q_max);
      ASSERT_TRUE(x.site == -0.5 || x.site == 0.5);
      mark.add(x.mark);
    }
  }
  EXPECT_NEAR(count.mean, expected, 4 * count.se());
  EXPECT_NEAR(count.variance(), expected, 0.2 * expected);
  EXPECT_NEAR(mark.mean, 1.0, 4 * mark.se());
}

TEST(Candidates, CapIsEnforced) {
  Scene s;
  s.cand.max_expected = 10;
  RngStream rng(1, 1);
  EXPECT_THROW(sample_candidates(s.m, s.grid, s.cand, rng), ConfigError);
}

TEST(Superprocess, SameSeedSamePath) {
  const Scene s;
  const auto q = ImmigrationRate::constant(1.0);
  const auto a = build_fixed_rate(q, s.candidates(3), s.clusters(3), s.flow(3), s.grid);
  const auto b = build_fixed_rate(q, s.candidates(3), s.clusters(3), s.flow(3), s.grid);
  EXPECT_EQ(a, b);
  const auto c = build_fixed_rate(q, s.candidates(4), s.clusters(4), s.flow(4), s.grid);
  EXPECT_NE(a, c);
}

TEST(Superprocess, PicardOnConstantRateMatchesFixedBuild) {
  const Scene s;
  const auto fixed = ImmigrationRate::constant(1.0);
  const auto as_interactive =
      ImmigrationRate::interactive([](const AtomicMeasure&, double) { return 1.0; }, 2.0);
  const auto cands = s.candidates(5);
  const auto clus = s.clusters(5);
  const auto a = build_fixed_rate(fixed, cands, clus, s.flow(5), s.grid);
  const auto r = build_interactive(as_interactive, cands, clus, s.flow(5), s.grid);
  EXPECT_EQ(r.path, a);
  EXPECT_LE(r.iterations, 2u);
}

TEST(Superprocess, PicardConvergesToCausalBuild) {
  const Scene s;
  const auto q = ImmigrationRate::from_spec(RateSpec::mass_sigmoid(0.5, 1.5, 1.0, 1.0), 2.0);
  ASSERT_TRUE(q.is_interactive());
  for (std::uint64_t seed : {6u, 7u, 8u}) {
    const auto cands = s.candidates(seed);
    const auto clus = s.clusters(seed);
    const auto r = build_interactive(q, cands, clus, s.flow(seed), s.grid);
    const auto seq = build_sequential(q, cands, clus, s.flow(seed), s.grid);
    EXPECT_LE(r.iterations, 10u);
    EXPECT_LT(sup_distance(r.path, seq, 0.0), 1e-6);
  }
}

TEST(Superprocess, PicardNonConvergenceCarriesTrace) {
  const Scene s;
  const auto q = ImmigrationRate::from_spec(RateSpec::mass_sigmoid(0.0, 2.0, 1.0, 0.05), 2.0);
  PicardConfig cfg;
  cfg.max_iter = 1;
  try {
    build_interactive(q, s.candidates(9), s.clusters(9), s.flow(9), s.grid, cfg);
    FAIL() << "expected non-convergence";
  } catch (const NonConvergenceError& e) {
    EXPECT_EQ(e.trace().size(), 1u);
  }
}

// E<1, Y_t> = <1, mu0> + q t <1, m> for a constant rate.
TEST(Superprocess, FirstMoment) {
  const Scene s;
  const auto q = ImmigrationRate::constant(1.0);
  stats::Summary at_half, at_one;
  for (std::uint64_t r = 0; r < 1500; ++r) {
    RngStream rc(12, stream_id(r, StreamPurpose::kCandidates));
    RngStream rk(12, stream_id(r, StreamPurpose::kClusters));
    const auto cands = sample_candidates(s.m, s.grid, s.cand, rc);
    const auto clus = sample_initial_clusters(InitialCondition{AtomicMeasure({{0.0, 1.0}}), std::nullopt},
                                              s.cand.eps, s.cand.sigma, s.grid, rk);
    FlowConfig f = s.flow(12);
    f.backend = FlowBackend::kFrozen;
    const auto path = build_fixed_rate(q, cands, clus, f, s.grid);
    at_half.add(path.at(25).total_mass());
    at_one.add(path.at(50).total_mass());
  }
  EXPECT_NEAR(at_half.mean, 1.0 + 0.5 * 2.0, 4 * at_half.se());
  EXPECT_NEAR(at_one.mean, 1.0 + 1.0 * 2.0, 4 * at_one.se());
}

TEST(Scaling, MapsPositionsMassAndTime) {
  const Scene s;
  const auto path = build_fixed_rate(ImmigrationRate::constant(1.0), s.candidates(13), s.clusters(13), s.flow(13), s.grid);
  const auto scaled = scale_path(path, 2.0);
  EXPECT_DOUBLE_EQ(scaled.grid.dt, s.grid.dt / 4);
  const auto& src = path.at(40);
  const auto& dst = scaled.at(40);
  ASSERT_EQ(src.atoms.size(), dst.atoms.size());
  for (std::size_t i = 0; i < src.atoms.size(); ++i) {
    EXPECT_DOUBLE_EQ(dst.atoms[i].position, src.atoms[i].position / 2);
    EXPECT_DOUBLE_EQ(dst.atoms[i].mass, src.atoms[i].mass / 4);
  }
  EXPECT_EQ(scaled_at(path, 2.0, 0.2), dst);
  EXPECT_THROW(scale_path(path, 0.0), UsageError);
  EXPECT_THROW(scaled_at(path, 2.0, 0.3), UsageError);
}

// With one noise field, raising the rate only adds atoms: Y^{eta1} <= Y^{eta2}.
TEST(Superprocess, ThinningMonotoneUnderSharedNoise) {
  const Scene s;
  FlowConfig f = s.flow(14);
  f.backend = FlowBackend::kLattice;
  const auto cands = s.candidates(14);
  const auto clus = s.clusters(14);
  const auto low = build_fixed_rate(ImmigrationRate::predictable([](double, double) { return 0.5; }, 2.0), cands, clus,
                                    f, s.grid);
  const auto high = build_fixed_rate(ImmigrationRate::predictable([](double, double) { return 1.5; }, 2.0), cands,
                                     clus, f, s.grid);
  std::size_t extra = 0;
  for (std::size_t k = 0; k < low.snapshots.size(); ++k) {
    const auto& a = low.at(k).atoms;
    const auto& b = high.at(k).atoms;
    for (const PathAtom& x : a) {
      const auto it = std::find_if(b.begin(), b.end(), [&](const PathAtom& y) { return y.id == x.id; });
      ASSERT_NE(it, b.end());
      EXPECT_EQ(*it, x);
    }
    extra += b.size() - a.size();
  }
  EXPECT_GT(extra, 0u);
}

// Interactive rate q = 0.5 + 1 / (1 + e^{-(M - 1)}) with M = <1, Y>: the total
// mass solves dM = q(M) <1, m> dt + sqrt(sigma M) dB, simulated directly with
// per-step immigration on a step 100 times finer, without Picard.
TEST(Superprocess, InteractiveMeanMassMatchesFineStepOracle) {
  const auto q_of = [](double m) { return 0.5 + 1.0 / (1.0 + std::exp(-(m - 1.0))); };
  const ReferenceMeasure m{AtomicMeasure({{0.0, 1.0}})};
  const TimeGrid grid = TimeGrid::covering(1.0, 0.01);
  const auto q = ImmigrationRate::from_spec(RateSpec::mass_sigmoid(0.5, 1.5, 1.0, 1.0), 1.5);
  const InitialCondition mu0{AtomicMeasure({{0.0, 0.5}}), std::nullopt};
  stats::Summary built;
  for (std::uint64_t r = 0; r < 3000; ++r) {
    RngStream rc(15, stream_id(r, StreamPurpose::kCandidates));
    RngStream rk(15, stream_id(r, StreamPurpose::kClusters));
    const auto cands = sample_candidates(m, grid, {1e-3, 1.0, 1.5, 2e7}, rc);
    const auto clus = sample_initial_clusters(mu0, 1e-3, 1.0, grid, rk);
    FlowConfig f;
    f.backend = FlowBackend::kFrozen;
    built.add(build_interactive(q, cands, clus, f, grid).path.snapshots.back().total_mass());
  }
  stats::Summary oracle;
  RngStream rng(16, 1);
  const double h = grid.dt / 100;
  for (int r = 0; r < 10000; ++r) {
    double x = 0.5;
    for (int i = 0; i < 10000; ++i) {
      x += q_of(x) * h + std::sqrt(std::max(x, 0.0) * h) * rng.normal();
      x = std::max(x, 0.0);
    }
    oracle.add(x);
  }
  EXPECT_NEAR(built.mean, oracle.mean, 3 * std::hypot(built.se(), oracle.se()));
}
