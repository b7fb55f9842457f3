#pragma once

// Portable sampling on top of std::mt19937_64. The standard distributions are
// implementation-defined, so everything that must replay bit-for-bit from a
// seed goes through these helpers instead.

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace sgl {

using Rng = std::mt19937_64;

// splitmix64 finalizer; mixes a base seed with a stream tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

double uniform01(Rng& rng);
// Uniform integer in [0, n).
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);
double standard_normal(Rng& rng);

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

std::string save_rng(const Rng& rng);
Rng load_rng(const std::string& text);

}  // namespace sgl
