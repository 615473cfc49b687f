#pragma once

// Counter-based random numbers (Philox4x32-10). A stream is identified by a
// 64-bit seed and a 64-bit stream id, usually derived from a text label, and
// block i of a stream is a pure function of (seed, stream, i).

#include <array>
#include <cstdint>
#include <string_view>

namespace tofsense {

using Block = std::array<std::uint32_t, 4>;

/// Ten Philox rounds on one 128-bit counter with a 64-bit key.
Block philox4x32(Block counter, std::array<std::uint32_t, 2> key);

/// 64-bit FNV-1a hash, used to turn labels into stream ids.
std::uint64_t stream_id(std::string_view label);

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}
  CounterRng(std::uint64_t seed, std::string_view label) : CounterRng(seed, stream_id(label)) {}

  Block block(std::uint64_t index) const;
  /// Two uniforms in the open interval (0, 1) with 53 random bits each.
  std::array<double, 2> uniforms(std::uint64_t index) const;
  /// Two independent standard normals (Box-Muller on uniforms(index)).
  std::array<double, 2> normals(std::uint64_t index) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
};

/// Sequential draws walking a CounterRng stream block by block.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::string_view label) : rng_(seed, label) {}
  RandomStream(std::uint64_t seed, std::uint64_t stream) : rng_(seed, stream) {}

  double uniform();
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t next_bits();

  CounterRng rng_;
  std::uint64_t index_ = 0;
  Block buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tofsense
