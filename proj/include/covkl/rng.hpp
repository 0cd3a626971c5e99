#pragma once

#include <cstdint>
#include <random>

namespace covkl {

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Seedable random stream identified by (master_seed, stream_index).
/// Streams with the same identity replay the same sequence; distinct indices
/// are decorrelated through a seed_seq over the mixed identity words.
class RngStream {
 public:
  using Engine = std::mt19937_64;

  RngStream(std::uint64_t master_seed, std::uint64_t stream_index)
      : master_seed_(master_seed), stream_index_(stream_index), engine_(make_engine(master_seed, stream_index)) {}

  std::uint64_t master_seed() const { return master_seed_; }
  std::uint64_t stream_index() const { return stream_index_; }

  /// Child stream j of this stream. Depends only on the identity of the parent,
  /// never on how many draws the parent has produced.
  RngStream substream(std::uint64_t j) const {
    return RngStream(detail::splitmix64(master_seed_ ^ detail::splitmix64(stream_index_ + 0x632be59bd9b4e019ULL)), j);
  }

  Engine& engine() { return engine_; }

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  /// Chi-square with `dof` degrees of freedom as Gamma(dof/2, 2); dof need not be integral.
  double chi_square(double dof) { return std::gamma_distribution<double>(0.5 * dof, 2.0)(engine_); }
  std::uint64_t index_below(std::uint64_t bound) {
    return std::uniform_int_distribution<std::uint64_t>(0, bound - 1)(engine_);
  }

 private:
  static Engine make_engine(std::uint64_t seed, std::uint64_t index) {
    const std::uint64_t a = detail::splitmix64(seed);
    const std::uint64_t b = detail::splitmix64(index ^ 0xd1b54a32d192ed03ULL);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return Engine(seq);
  }

  std::uint64_t master_seed_;
  std::uint64_t stream_index_;
  Engine engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace covkl
