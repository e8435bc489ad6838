#include "bms/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace bms {

Rng::Rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32)};
  engine_.seed(seq);
}

double Rng::uniform() {
  const std::uint32_t a = engine_() >> 5;
  const std::uint32_t b = engine_() >> 6;
  return (a * 67108864.0 + b) * (1.0 / 9007199254740992.0);
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void Rng::fill_normal(std::span<double> out) {
  std::size_t i = 0;
  for (; i + 2 <= out.size(); i += 2) {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    out[i] = r * std::cos(theta);
    out[i + 1] = r * std::sin(theta);
  }
  if (i < out.size()) out[i] = normal();
}

Tensor Rng::normal(Shape shape) {
  Tensor t(std::move(shape));
  fill_normal(t.data());
  return t;
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: empty range");
  return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined key
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<std::uint32_t> Rng::state() const {
  std::ostringstream os;
  os << engine_;
  std::istringstream is(os.str());
  std::vector<std::uint32_t> words;
  std::uint64_t w = 0;
  while (is >> w) words.push_back(static_cast<std::uint32_t>(w));
  return words;
}

void Rng::set_state(std::span<const std::uint32_t> words) {
  std::ostringstream os;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) os << ' ';
    os << words[i];
  }
  std::istringstream is(os.str());
  std::mt19937 restored;
  is >> restored;
  if (is.fail()) throw std::invalid_argument("Rng::set_state: malformed engine state");
  engine_ = restored;
}

}  // namespace bms
