#pragma once

// Counter-based random streams.
//
// Every stream is keyed by (seed, tag, shape...) and produces its k-th word as
// a pure function of (key, k). Clients that share the seed can therefore
// regenerate identical draws (e.g. the RFF projection) without exchanging
// them, and random access into a stream needs no state.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string_view>
#include <vector>

namespace fedrf::rng {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr std::uint64_t combine(std::uint64_t key, std::uint64_t word) noexcept {
  return mix64(key ^ (word + kGolden + (key << 6) + (key >> 2)));
}

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::string_view tag,
             std::initializer_list<std::uint64_t> shape = {}) noexcept
      : key_(combine(mix64(seed), hash_tag(tag))) {
    for (std::uint64_t s : shape) key_ = combine(key_, s);
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t position() const noexcept { return counter_; }

  /// Child stream; independent of the parent's position.
  CounterRng split(std::string_view tag,
                   std::initializer_list<std::uint64_t> shape = {}) const noexcept {
    CounterRng child(0, tag, shape);
    child.key_ = combine(key_, child.key_);
    return child;
  }

  std::uint64_t word_at(std::uint64_t k) const noexcept { return mix64(key_ + (k + 1) * kGolden); }

  /// Uniform on (0, 1], never exactly zero so log() is safe.
  double uniform_at(std::uint64_t k) const noexcept {
    return static_cast<double>((word_at(k) >> 11) + 1) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller on words (2k, 2k+1), cosine branch.
  double normal_at(std::uint64_t k) const noexcept {
    const double u1 = uniform_at(2 * k);
    const double u2 = uniform_at(2 * k + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t next_u64() noexcept { return word_at(counter_++); }
  double uniform() noexcept { return uniform_at(counter_++); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * (uniform() - 0x1.0p-53); }

  double normal() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, bound). Rejection sampling, so unbiased.
  std::uint64_t below(std::uint64_t bound) noexcept {
    if (bound <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    for (;;) {
      const std::uint64_t w = next_u64();
      if (w < limit) return w % bound;
    }
  }

  bool bernoulli(double p) noexcept { return p >= 1.0 || (p > 0.0 && uniform() <= p); }

  template <class T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  /// `count` distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    if (count > n) count = n;
    for (std::size_t i = 0; i < count; ++i) {
      std::swap(pool[i], pool[i + below(n - i)]);
    }
    pool.resize(count);
    return pool;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace fedrf::rng
