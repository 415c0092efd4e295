#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace bbmx {

/// Identifies one independent random stream: a run seed, a replica index and
/// a substream tag within the replica.
struct StreamKey {
  std::uint64_t seed = 0;
  std::uint32_t replica = 0;
  std::uint32_t substream = 0;
};

/// Substream tags. The low 24 bits carry an index (e.g. a timestamp number).
enum class Substream : std::uint32_t {
  main = 0x0u,
  timestamps = 0x1u,
  backbone = 0x2u,
  decoration = 0x3u,
  tips = 0x4u,
  pool_pick = 0x5u,
  martingale = 0x6u,
  reference = 0x7u,
};

constexpr std::uint32_t substream_id(Substream kind, std::uint32_t index = 0) {
  return (static_cast<std::uint32_t>(kind) << 24) | (index & 0xFFFFFFu);
}

constexpr StreamKey child_key(StreamKey key, Substream kind,
                              std::uint32_t index = 0) {
  key.substream = substream_id(kind, index);
  return key;
}

/// Counter-based Philox4x32-10 generator. The 64-bit key is the run seed and
/// the 128-bit counter is (block, substream, replica), so every StreamKey
/// addresses a disjoint sequence without any coordination between workers.
class PhiloxStream {
public:
  using result_type = std::uint64_t;

  explicit PhiloxStream(StreamKey key) noexcept
      : key_{static_cast<std::uint32_t>(key.seed),
             static_cast<std::uint32_t>(key.seed >> 32)},
        substream_(key.substream), replica_(key.replica) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    if (lane_ == 2) {
      refill();
    }
    return buffer_[lane_++];
  }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  double exponential() noexcept { return -std::log(uniform()); }

  /// Standard normal via the Marsaglia polar method; the second variate of
  /// each pair is cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  std::uint64_t blocks_used() const noexcept { return block_; }

  /// A fresh stream under a key derived from this one and `tag`, leaving this
  /// stream untouched. Equal tags give equal streams.
  PhiloxStream derive(std::uint64_t tag) const noexcept {
    PhiloxStream s(*this);
    const std::uint64_t k =
        ((std::uint64_t{key_[1]} << 32) | key_[0]) ^ splitmix64(tag);
    s.key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
    s.block_ = 0;
    s.lane_ = 2;
    s.has_spare_ = false;
    return s;
  }

  static constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  void refill() noexcept {
    std::array<std::uint32_t, 4> c{static_cast<std::uint32_t>(block_),
                                   static_cast<std::uint32_t>(block_ >> 32),
                                   substream_, replica_};
    std::uint32_t k0 = key_[0], k1 = key_[1];
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kM0} * c[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * c[2];
      c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k0,
           static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k1,
           static_cast<std::uint32_t>(p0)};
      k0 += kW0;
      k1 += kW1;
    }
    buffer_[0] = (std::uint64_t{c[0]} << 32) | c[1];
    buffer_[1] = (std::uint64_t{c[2]} << 32) | c[3];
    ++block_;
    lane_ = 0;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint32_t substream_;
  std::uint32_t replica_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int lane_ = 2;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace bbmx
