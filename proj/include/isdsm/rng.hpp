#pragma once

// Counter-based random streams (Philox4x32-10).
//
// Every random quantity in a run is addressed by (master seed, stream id,
// counter), so a replicate's draws never depend on scheduling or on how many
// other replicates exist.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace isdsm {

namespace detail {

inline void mulhilo32(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter ctr, Key key) {
    constexpr std::uint32_t kM0 = 0xD2511F53u;
    constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u;
    constexpr std::uint32_t kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      std::uint32_t hi0, lo0, hi1, lo1;
      detail::mulhilo32(kM0, ctr[0], hi0, lo0);
      detail::mulhilo32(kM1, ctr[2], hi1, lo1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }
};

inline double uniform_from_bits(std::uint64_t bits) {
  // (0, 1]: never returns 0, so log() is safe.
  return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

/// Logical purposes a replicate draws randomness for. Each purpose maps to
/// a distinct stream id so no two modules ever share a stream.
enum class StreamPurpose : std::uint32_t {
  kCandidates = 1,
  kClusters = 2,
  kFlow = 3,
  kRcbm = 4,
  kOracle = 5,
  kAux = 6,
};

inline std::uint64_t stream_id(std::uint64_t replicate, StreamPurpose purpose) {
  return (replicate << 8) | static_cast<std::uint64_t>(purpose);
}

/// A sequential stream satisfying UniformRandomBitGenerator. Block i of
/// stream s under seed k is Philox(ctr = {i_lo, i_hi, s_lo, s_hi}, key = k).
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream) : stream_(stream) {
    key_ = {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (buffered_ == 0) {
      const Philox4x32::Counter ctr = {static_cast<std::uint32_t>(counter_),
                                       static_cast<std::uint32_t>(counter_ >> 32),
                                       static_cast<std::uint32_t>(stream_),
                                       static_cast<std::uint32_t>(stream_ >> 32)};
      const auto out = Philox4x32::block(ctr, key_);
      ++counter_;
      buffer_[0] = (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
      buffer_[1] = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
      buffered_ = 2;
    }
    return buffer_[2 - buffered_--];
  }

  double uniform() { return uniform_from_bits((*this)()); }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double exponential(double mean) { return -mean * std::log(uniform()); }

  std::uint64_t stream() const { return stream_; }
  std::uint64_t blocks_used() const { return counter_; }

 private:
  Philox4x32::Key key_{0, 0};
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int buffered_ = 0;
};

/// Random-access Gaussian field indexed by (step, cell): the discretised
/// space-time white noise that drives the lattice flow. The same (step, cell)
/// always yields the same value, which is what freezes the flow noise across
/// Picard iterates.
class NoiseField {
 public:
  NoiseField() = default;
  NoiseField(std::uint64_t seed, std::uint64_t stream) {
    const std::uint64_t mixed = detail::splitmix64(seed ^ detail::splitmix64(stream));
    key_ = {static_cast<std::uint32_t>(mixed), static_cast<std::uint32_t>(mixed >> 32)};
  }

  double normal(std::uint64_t step, std::int64_t cell) const {
    const auto c = static_cast<std::uint64_t>(cell);
    const auto out = Philox4x32::block({static_cast<std::uint32_t>(step),
                                        static_cast<std::uint32_t>(step >> 32),
                                        static_cast<std::uint32_t>(c),
                                        static_cast<std::uint32_t>(c >> 32)},
                                       key_);
    const double u1 = uniform_from_bits((static_cast<std::uint64_t>(out[1]) << 32) | out[0]);
    const double u2 = uniform_from_bits((static_cast<std::uint64_t>(out[3]) << 32) | out[2]);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  Philox4x32::Key key_{0, 0};
};

}  // namespace isdsm
