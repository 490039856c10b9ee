#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "isdsm/measures.hpp"

using namespace isdsm;

TEST(TemperedWeight, ValuesAndDerivatives) {
  EXPECT_DOUBLE_EQ(phi_p(0.0, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(phi_p(1.0, 2.0), 0.5);
  EXPECT_DOUBLE_EQ(phi_p(3.0, 0.0), 1.0);
  const double h = 1e-5;
  for (double x : {-2.0, -0.3, 0.0, 0.7, 4.0}) {
    for (double p : {0.5, 1.0, 2.0, 3.5}) {
      const double d1 = (phi_p(x + h, p) - phi_p(x - h, p)) / (2 * h);
      const double d2 = (phi_p(x + h, p) - 2 * phi_p(x, p) + phi_p(x - h, p)) / (h * h);
      EXPECT_NEAR(phi_p_d1(x, p), d1, 1e-8);
      EXPECT_NEAR(phi_p_d2(x, p), d2, 1e-4);
    }
  }
}

// c_p dominates (|phi'| + |phi''|) / phi and is close to the sup found by a
// dense scan of the derivative functions.
TEST(TemperedWeight, DominatingConstant) {
  EXPECT_EQ(TemperWeight(0.0).c_p(), 0.0);
  for (double p : {0.5, 1.0, 2.0, 4.0}) {
    const TemperWeight w(p);
    double sup = 0.0;
    for (double x = -50.0; x <= 50.0; x += 1e-4) {
      const double ratio = (std::abs(phi_p_d1(x, p)) + std::abs(phi_p_d2(x, p))) / phi_p(x, p);
      ASSERT_LE(ratio, w.c_p() * (1 + 1e-9)) << "p=" << p << " x=" << x;
      sup = std::max(sup, ratio);
    }
    EXPECT_NEAR(w.c_p(), sup, 1e-6 * sup) << p;
  }
  EXPECT_THROW(TemperWeight(-1.0), ConfigError);
}

TEST(AtomicMeasure, MergesOnlyIdenticalPositions) {
  AtomicMeasure mu({{1.0, 0.5}, {0.0, 1.0}, {1.0, 0.25}, {std::nextafter(1.0, 2.0), 1.0}, {3.0, 0.0}});
  ASSERT_EQ(mu.size(), 3u);
  EXPECT_DOUBLE_EQ(mu.atoms()[0].position, 0.0);
  EXPECT_DOUBLE_EQ(mu.mass_at(1.0), 0.75);
  EXPECT_DOUBLE_EQ(mu.total_mass(), 2.75);
  EXPECT_THROW(AtomicMeasure({{0.0, -1.0}}), ConfigError);
  EXPECT_THROW(AtomicMeasure({{NAN, 1.0}}), ConfigError);
}

TEST(AtomicMeasure, PairingAndDistance) {
  AtomicMeasure mu({{0.0, 1.0}, {1.0, 2.0}});
  AtomicMeasure nu({{1.0, 1.5}, {2.0, 1.0}});
  EXPECT_DOUBLE_EQ(pair(mu, [](double x) { return x + 1.0; }), 1.0 + 4.0);
  const double p = 2.0;
  const double expected = 1.0 * phi_p(0.0, p) + 0.5 * phi_p(1.0, p) + 1.0 * phi_p(2.0, p);
  EXPECT_DOUBLE_EQ(distance_p(mu, nu, p), expected);
  EXPECT_DOUBLE_EQ(distance_p(mu, mu, p), 0.0);
  EXPECT_DOUBLE_EQ(distance_p(mu, nu, p), distance_p(nu, mu, p));
  EXPECT_THROW(pair(mu, [](double x) { return x == 0.0 ? INFINITY : 1.0; }), EvaluationError);
}
