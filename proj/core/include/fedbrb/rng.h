#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace fedbrb {

// All sampling goes through these helpers rather than the <random>
// distributions, whose output sequences differ between standard libraries.
using Rng = std::mt19937_64;

// Derives an independent, reproducible stream from a run seed and a tuple of
// stream coordinates (client id, round, purpose tag, ...).
Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> coords);

// Uniform double in [0, 1) with 53 random bits.
double uniform01(Rng& rng);

// Uniform integer in [0, bound). bound must be positive.
std::uint64_t uniform_below(Rng& rng, std::uint64_t bound);

double uniform(Rng& rng, double lo, double hi);

// Standard normal via Box-Muller.
double standard_normal(Rng& rng);

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  shuffle(std::span<T>(items), rng);
}

// Index drawn proportionally to the non-negative weights (at least one > 0).
std::size_t sample_weighted(std::span<const double> weights, Rng& rng);

}  // namespace fedbrb
