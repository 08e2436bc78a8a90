#include "stnet/rng.hpp"

#include <cmath>
#include <numbers>

#include "stnet/error.hpp"

namespace stnet {

namespace {

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t RngStream::value_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t key = mix64(seed + 0x9e3779b97f4a7c15ULL);
  key = mix64(key ^ (stream * 0xd1b54a32d192ed03ULL + 0x632be59bd9b4e019ULL));
  return mix64(key + index * 0x9e3779b97f4a7c15ULL);
}

RngStream RngStream::split(std::uint64_t child) const {
  return RngStream(seed_, mix64(stream_ ^ mix64(child + 0x2545f4914f6cdd1dULL)));
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::int64_t RngStream::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ValidationError("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(next_u64());
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % span);
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return lo + static_cast<std::int64_t>(v % span);
}

double RngStream::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace stnet
