#include <gtest/gtest.h>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "isdsm/kernel.hpp"

using namespace isdsm;

// Gaussian h(y) = A exp(-y^2 / 2w^2) gives rho(x) = A^2 w sqrt(pi) exp(-x^2 / 4w^2).
TEST(Kernel, GaussianClosedForm) {
  const double A = 1.3, w = 0.4;
  const auto k = gaussian_kernel(A, w);
  for (double x : {0.0, 0.1, 0.37, 1.0, 2.2}) {
    const double exact = A * A * w * std::sqrt(M_PI) * std::exp(-x * x / (4 * w * w));
    EXPECT_NEAR(k.rho(x), exact, 1e-9) << x;
    EXPECT_NEAR(k.rho(-x), k.rho(x), 1e-12);
  }
  EXPECT_NEAR(k.rho0(), A * A * w * std::sqrt(M_PI), 1e-10);
  EXPECT_NEAR(k.rho_sup(), k.rho0(), 1e-10);
  EXPECT_EQ(k.rho(k.span() + 1.0), 0.0);
}

TEST(Kernel, TableMatchesIndependentQuadrature) {
  const auto path = std::filesystem::temp_directory_path() / "isdsm_kernel_table.csv";
  {
    std::ofstream out(path);
    out << "y,h\n";
    for (int i = -200; i <= 200; ++i) {
      const double y = i * 0.01;
      out << y << ',' << std::max(0.0, 1.0 - y * y / 4.0) << '\n';
    }
  }
  const auto k = table_kernel(path.string());
  boost::math::quadrature::tanh_sinh<double> ts;
  const auto h = [](double y) { return std::max(0.0, 1.0 - y * y / 4.0); };
  for (double x : {0.0, 0.5, 1.5, 3.0}) {
    const double oracle = ts.integrate([&](double y) { return h(y) * h(y - x); }, -2.0 + x, 2.0);
    EXPECT_NEAR(k.rho(x), oracle, 2e-4) << x;
  }
  std::filesystem::remove(path);
}

TEST(Kernel, RejectsBadInput) {
  EXPECT_THROW(gaussian_kernel(0.0, 1.0), ConfigError);
  EXPECT_THROW(table_kernel("/nonexistent/kernel.csv"), ConfigError);
}

// P_t of a Gaussian bump exp(-x^2/2) is (1 + v)^(-1/2) exp(-x^2 / 2(1 + v)), v = rho0 t.
TEST(Kernel, HeatSemigroupGaussian) {
  const RealFn phi = [](double x) { return std::exp(-0.5 * x * x); };
  const double rho0 = 0.8, t = 1.7, v = rho0 * t;
  for (double x : {0.0, 0.5, -2.0}) {
    const double exact = std::exp(-x * x / (2 * (1 + v))) / std::sqrt(1 + v);
    EXPECT_NEAR(heat_semigroup(phi, t, rho0, x), exact, 1e-10);
  }
  EXPECT_DOUBLE_EQ(heat_semigroup(phi, 0.0, rho0, 0.3), phi(0.3));
}
