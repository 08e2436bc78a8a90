#pragma once

#include <cstdint>
#include <utility>

namespace stnet {

// Counter-based random stream: draw k of stream (seed, id) is a pure function
// of (seed, id, k), so results never depend on which thread or in which order
// streams are consumed. `split` derives an independent child stream.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  static std::uint64_t value_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t position() const { return counter_; }

  RngStream split(std::uint64_t child) const;

  std::uint64_t next_u64() { return value_at(seed_, stream_, counter_++); }
  // [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Inclusive range, unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Standard normal via Box-Muller; consumes two draws.
  double normal();

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::int64_t>(last - first);
    for (std::int64_t i = n - 1; i > 0; --i) {
      auto j = uniform_int(0, i);
      using std::swap;
      swap(first[i], first[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace stnet
