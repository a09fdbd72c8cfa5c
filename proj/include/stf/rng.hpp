#pragma once

#include <cstdint>
#include <string_view>

namespace stf {

/// 64-bit FNV-1a; stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent key from a parent key and a label.
constexpr std::uint64_t derive_key(std::uint64_t key, std::uint64_t label) noexcept {
  return mix64(key ^ mix64(label + 0x632be59bd9b4e019ULL));
}

/// Counter-based generator: draw n of stream s under key k is a pure
/// function of (k, s, n), so streams never depend on consumption order
/// elsewhere.
class CounterRng {
 public:
  CounterRng(std::uint64_t key, std::uint64_t stream) noexcept
      : base_(derive_key(key, stream)) {}

  std::uint64_t next_u64() noexcept { return mix64(base_ ^ mix64(counter_++)); }

  /// Uniform in [0, 1).
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept { return n == 0 ? 0 : next_u64() % n; }
  /// Standard normal via Box-Muller (one value per call).
  double normal() noexcept;
  /// Standard normal truncated to [-limit, limit] by resampling.
  double truncated_normal(double limit) noexcept;

 private:
  std::uint64_t base_;
  std::uint64_t counter_ = 0;
};

}  // namespace stf
