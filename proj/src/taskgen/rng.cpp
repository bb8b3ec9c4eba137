#include "icl/taskgen/rng.hpp"

#include <cmath>
#include <numbers>

namespace icl::tasks {

namespace {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

Stream::result_type Stream::operator()() {
  ++counter_;
  return splitmix64(key_ + counter_ * kGolden);
}

double Stream::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

// Box-Muller; the second variate of each pair is kept for the next call.
double Stream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t Stream::below(std::uint64_t n) {
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = max() - max() % n;
  std::uint64_t x = (*this)();
  while (x >= limit) x = (*this)();
  return x % n;
}

std::uint64_t Rng::stream_key(Purpose purpose, std::uint64_t index) const {
  std::uint64_t h = splitmix64(master_seed_ ^ 0x6a09e667f3bcc908ULL);
  h = splitmix64(h ^ static_cast<std::uint64_t>(domain_));
  h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  return splitmix64(h ^ (index * kGolden));
}

Stream Rng::stream(Purpose purpose, std::uint64_t index) const { return Stream(stream_key(purpose, index)); }

}  // namespace icl::tasks
