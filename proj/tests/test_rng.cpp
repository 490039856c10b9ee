#include <gtest/gtest.h>

#include <set>

#include "isdsm/rng.hpp"
#include "isdsm/stats.hpp"

using namespace isdsm;

// Known-answer vectors for Philox4x32-10 from the Random123 distribution.
TEST(Philox, KnownAnswers) {
  using C = Philox4x32::Counter;
  using K = Philox4x32::Key;
  EXPECT_EQ(Philox4x32::block(C{0, 0, 0, 0}, K{0, 0}), (C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(Philox4x32::block(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, K{0xffffffff, 0xffffffff}),
            (C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(Philox4x32::block(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, K{0xa4093822, 0x299f31d0}),
            (C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(RngStream, Deterministic) {
  RngStream a(11, 3), b(11, 3);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
}

TEST(RngStream, StreamsAndSeedsDiffer) {
  RngStream a(11, 3), b(11, 4), c(12, 3);
  int same_b = 0, same_c = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a();
    same_b += x == b();
    same_c += x == c();
  }
  EXPECT_EQ(same_b, 0);
  EXPECT_EQ(same_c, 0);
}

TEST(RngStream, StreamIdsUniquePerReplicateAndPurpose) {
  std::set<std::uint64_t> ids;
  for (std::uint64_t r = 0; r < 500; ++r) {
    for (auto p : {StreamPurpose::kCandidates, StreamPurpose::kClusters, StreamPurpose::kFlow, StreamPurpose::kRcbm,
                   StreamPurpose::kOracle, StreamPurpose::kAux}) {
      ASSERT_TRUE(ids.insert(stream_id(r, p)).second);
    }
  }
}

TEST(RngStream, UniformAndNormalMoments) {
  RngStream rng(5, 1);
  const int n = 200000;
  std::vector<double> u(n), z(n);
  for (int i = 0; i < n; ++i) {
    u[i] = rng.uniform();
    ASSERT_GT(u[i], 0.0);
    ASSERT_LE(u[i], 1.0);
  }
  for (int i = 0; i < n; ++i) z[i] = rng.normal();
  const auto su = stats::summarize(u), sz = stats::summarize(z);
  EXPECT_NEAR(su.mean, 0.5, 4 * su.se());
  EXPECT_NEAR(sz.mean, 0.0, 4 * sz.se());
  EXPECT_NEAR(sz.variance(), 1.0, 4 * stats::variance_se(z));
  EXPECT_GT(stats::ks_one_sample(z, stats::normal_cdf).p_value, 1e-3);
}

TEST(NoiseField, AddressableAndStable) {
  NoiseField f(9, 2), g(9, 2);
  EXPECT_EQ(f.normal(17, -4), g.normal(17, -4));
  EXPECT_NE(f.normal(17, -4), f.normal(17, -3));
  EXPECT_NE(f.normal(17, -4), f.normal(18, -4));
}
