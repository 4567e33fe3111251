#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace memeclf {

/// SplitMix64 output finalizer (Steele, Lea & Flood 2014).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

/// 64-bit FNV-1a, used to turn record ids into stream ids.
constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Counter-based deterministic random stream.
///
/// Algorithm: the pair (seed, stream_id) is hashed into a 64-bit key
/// `key = mix64(seed ^ mix64(stream_id + 0x9e3779b97f4a7c15))`, and the i-th
/// draw (i = 1, 2, ...) is `mix64(key + i * 0x9e3779b97f4a7c15)`, i.e. a
/// SplitMix64 sequence started at `key`. Only integer arithmetic is involved,
/// so the raw sequence is identical on every platform. Real-valued draws use
/// the top 53 bits; normal draws use Box-Muller on those uniforms.
///
/// `derive(k)` returns the child stream `(mix64(seed ^ mix64(k ^ C)), k)`,
/// which depends only on the parent seed and `k`.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed),
        stream_id_(stream_id),
        key_(mix64(seed ^ mix64(stream_id + kGolden))) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  std::uint64_t draws() const noexcept { return counter_; }

  RngStream derive(std::uint64_t k) const {
    return RngStream(mix64(seed_ ^ mix64(k ^ 0xd1b54a32d192ed03ULL)), k);
  }
  RngStream derive(std::string_view name) const { return derive(fnv1a64(name)); }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * kGolden);
  }

  /// Uniform in [0, 1).
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Multiply-high reduction; n must be positive.
  std::uint64_t uniform_index(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  double normal() noexcept;

  /// Normal(0, stddev) resampled until it lies within +-2 stddev.
  double truncated_normal(double stddev) noexcept;

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace memeclf
