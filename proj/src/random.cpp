#include "sgl/random.hpp"

#include <cmath>
#include <locale>
#include <numbers>
#include <sstream>

#include "sgl/error.hpp"

namespace sgl {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

double standard_normal(Rng& rng) {
  // Box-Muller; the second variate is discarded so the stream position only
  // depends on the number of draws.
  double u1;
  do {
    u1 = uniform01(rng);
  } while (u1 <= 0.0);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string save_rng(const Rng& rng) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << rng;
  return os.str();
}

Rng load_rng(const std::string& text) {
  std::istringstream is(text);
  is.imbue(std::locale::classic());
  Rng rng;
  is >> rng;
  if (!is) throw CheckpointError("malformed generator state");
  return rng;
}

}  // namespace sgl
