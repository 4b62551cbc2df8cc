#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace chroma {

// SplitMix64 mixing step. Used to derive independent child seeds from a base
// seed plus context tags, so every random stream in the project is a pure
// function of (seed, tags...).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(splitmix64(seed) ^ splitmix64(tag));
}

template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, Tags... rest) {
  return derive_seed(derive_seed(seed, tag), rest...);
}

// Stream tags. Keeping them in one place avoids accidental collisions.
namespace stream {
inline constexpr std::uint64_t kParamInit = 1;
inline constexpr std::uint64_t kBatchOrder = 2;
inline constexpr std::uint64_t kNoise = 3;
inline constexpr std::uint64_t kSplit = 4;
inline constexpr std::uint64_t kInference = 5;
}  // namespace stream

// Deterministic uniform generator on top of std::mt19937_64. The engine
// itself is fully specified by the standard; std::uniform_*_distribution is
// not, so the value mappings live here.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double next_unit() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  // Uniform integer in [0, n) without modulo bias.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

 private:
  std::mt19937_64 engine_;
};

// Fisher-Yates keyed by an explicit stream; std::shuffle's draw pattern is
// implementation-defined, this one is reproducible everywhere.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, RandomStream& rs) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rs.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace chroma
