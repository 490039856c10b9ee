#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "isdsm/flow.hpp"
#include "isdsm/rcbm.hpp"
#include "isdsm/stats.hpp"

using namespace isdsm;

namespace {

const CorrelationKernel& kernel() {
  static const CorrelationKernel k = gaussian_kernel(1.0, 0.5);
  return k;
}

struct Moments {
  stats::Summary var0, var1, cov;
};

template <class Draw>
Moments increment_moments(Draw&& draw, int n) {
  Moments m;
  for (int i = 0; i < n; ++i) {
    const auto [a, b] = draw(i);
    m.var0.add(a * a);
    m.var1.add(b * b);
    m.cov.add(a * b);
  }
  return m;
}

}  // namespace

TEST(Flow, GramIncrementCovariance) {
  const double dt = 0.01;
  RngStream rng(21, 3);
  for (double d : {0.0, 0.5, 1.0, 20.0}) {
    const auto m = increment_moments(
        [&](int) {
          FlowState s;
          s = spawn(s, 0.0, 0.0);
          s = spawn(s, 0.0, d);
          const auto next = flow_step(s, dt, kernel(), rng);
          return std::pair{next.trajectories[0].position, next.trajectories[1].position - d};
        },
        40000);
    EXPECT_NEAR(m.var0.mean, kernel().rho0() * dt, 4 * m.var0.se());
    EXPECT_NEAR(m.var1.mean, kernel().rho0() * dt, 4 * m.var1.se());
    EXPECT_NEAR(m.cov.mean, kernel().rho(d) * dt, 4 * m.cov.se() + 1e-12) << d;
  }
}

TEST(Flow, LatticeIncrementCovariance) {
  const double dt = 0.01;
  for (double d : {0.0, 0.5, 1.0}) {
    const auto m = increment_moments(
        [&](int i) {
          LatticeDriver drv(kernel(), NoiseField(22, 3));
          return std::pair{drv.increment(0.3, static_cast<std::uint64_t>(i), dt),
                           drv.increment(0.3 + d, static_cast<std::uint64_t>(i), dt)};
        },
        40000);
    // The lattice sum approximates rho by a Riemann sum; allow 1% on top of MC error.
    EXPECT_NEAR(m.var0.mean, kernel().rho0() * dt, 4 * m.var0.se() + 0.01 * kernel().rho0() * dt);
    EXPECT_NEAR(m.cov.mean, kernel().rho(d) * dt, 4 * m.cov.se() + 0.01 * kernel().rho0() * dt) << d;
  }
}

// The Gram matrix of distinct sites is positive semidefinite; check with an
// independent eigen-solver.
TEST(Flow, GramMatrixPositiveSemidefinite) {
  std::vector<double> x;
  for (int i = 0; i < 40; ++i) x.push_back(-2.0 + 0.1 * i + 1e-3 * (i % 3));
  const auto g = gram_matrix(x, kernel(), 1.0);
  Eigen::MatrixXd m(x.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < x.size(); ++j) m(i, j) = g[i * x.size() + j];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  EXPECT_GT(es.eigenvalues().minCoeff(), -1e-9);
}

TEST(Flow, CoincidentTrajectoriesMoveTogether) {
  RngStream rng(23, 3);
  FlowState s;
  s = spawn(s, 0.0, 1.0);
  s = spawn(s, 0.0, 1.0);
  for (int i = 0; i < 50; ++i) s = flow_step(s, 0.01, kernel(), rng);
  EXPECT_EQ(s.trajectories[0].position, s.trajectories[1].position);
}

TEST(Flow, MaxAtomsCap) {
  RngStream rng(24, 3);
  FlowState s;
  for (int i = 0; i < 5; ++i) s = spawn(s, 0.0, i * 1.0);
  EXPECT_THROW(flow_step(s, 0.01, kernel(), rng, 4), ConfigError);
}

TEST(Flow, OrderViolations) {
  const std::vector<double> before{0.0, 1.0, 2.0}, after{0.5, 0.4, 3.0};
  EXPECT_EQ(order_violations(before, after), 1u);
  EXPECT_EQ(order_violations(before, before), 0u);
}

// A row of closely spaced trajectories under a narrow kernel: the fraction of
// adjacent pairs whose order flips in one step falls at least linearly in dt
// (the continuum flow never crosses).
TEST(Flow, CrossingFrequencyDecreasesWithStep) {
  const CorrelationKernel narrow = gaussian_kernel(1.0, 0.02);
  std::vector<double> freq;
  for (double dt : {1e-2, 1e-3, 1e-4}) {
    RngStream rng(25, 3);
    std::size_t flips = 0, pairs = 0;
    for (int r = 0; r < 50; ++r) {
      FlowState s;
      for (int i = 0; i < 20; ++i) s = spawn(s, 0.0, 0.01 * i);
      for (int step = 0; step < 20; ++step) {
        std::vector<double> before;
        for (const auto& t : s.trajectories) before.push_back(t.position);
        s = flow_step(s, dt, narrow, rng);
        std::vector<double> after;
        for (const auto& t : s.trajectories) after.push_back(t.position);
        flips += order_violations(before, after);
        pairs += before.size() - 1;
      }
    }
    freq.push_back(static_cast<double>(flips) / static_cast<double>(pairs));
  }
  EXPECT_GT(freq[0], 0.0);
  EXPECT_LE(freq[1], freq[0] / 10);
  EXPECT_LE(freq[2], freq[1] / 10);
}

TEST(Rcbm, MarginalVarianceAndMeeting) {
  const double rho = kernel().rho0(), dt = 1e-3;
  RngStream rng(26, 4);
  stats::Summary v0, v1, met;
  for (int r = 0; r < 3000; ++r) {
    RcbmState st;
    st.spawn(0);
    for (int i = 0; i < 500; ++i) st = rcbm_step(std::move(st), dt, rho, rng);
    st.spawn(1);
    for (int i = 0; i < 500; ++i) st = rcbm_step(std::move(st), dt, rho, rng);
    v0.add(st.trajectories[0].value * st.trajectories[0].value);
    v1.add(st.trajectories[1].value * st.trajectories[1].value);
    met.add(st.coalesced(0, 1) ? 1.0 : 0.0);
  }
  EXPECT_NEAR(v0.mean, rho * 1.0, 4 * v0.se());
  EXPECT_NEAR(v1.mean, rho * 0.5, 4 * v1.se());
  // Oracle: D_{1/2} ~ N(0, rho/2), then speed 2 rho over 1/2 time units.
  const double s0 = std::sqrt(rho * 0.5), s1 = std::sqrt(2 * rho * 0.5);
  double p = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = -8.0 + 16.0 * (i + 0.5) / n;
    p += std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI) * 2 * stats::normal_cdf(-std::abs(z) * s0 / s1) * 16.0 / n;
  }
  EXPECT_NEAR(met.mean, p, 4 * met.se());
}

TEST(Rcbm, RetainKeepsClasses) {
  RcbmState st;
  st.spawn(0);
  st.spawn(1);
  st.spawn(2);
  st.parent = {0, 0, 2};
  st.retain({false, true, true});
  ASSERT_EQ(st.trajectories.size(), 2u);
  EXPECT_EQ(st.trajectories[0].id, 1u);
  EXPECT_FALSE(st.coalesced(0, 1));
}
