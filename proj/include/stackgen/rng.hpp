#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "stackgen/error.hpp"

namespace stackgen {

// Deterministic random stream. Normal variates use Box-Muller on raw engine
// output (no cached spare), so the full sampler state is the engine state and
// can be serialized for checkpoint/resume.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes exactly two engine draws.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Unbiased integer in [0, n) by rejection; independent of
  // std::uniform_int_distribution so sequences are engine-defined only.
  std::uint64_t bounded(std::uint64_t n) {
    if (n == 0) throw ContractError("Rng::bounded requires n > 0");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  template <typename T>
  void fill_normal(std::vector<T>& v, double mean, double stddev) {
    for (auto& x : v) x = static_cast<T>(mean + stddev * normal());
  }

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent child stream; advances this stream by one draw.
  Rng fork() { return Rng(eng_() ^ 0x9e3779b97f4a7c15ull); }

  std::string state_string() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  static Rng from_state(const std::string& state) {
    Rng r(0);
    std::istringstream is(state);
    is >> r.eng_;
    if (is.fail()) throw FormatError("invalid RNG state string");
    return r;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace stackgen
