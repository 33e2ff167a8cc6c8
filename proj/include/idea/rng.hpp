#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace idea {

// Derives an independent stream seed from a base seed. splitmix64 of the
// pair, so stream 0 is not the identity.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

// mt19937_64 with hand-rolled uniform/normal conversions. The engine output
// sequence is fixed by the standard; doing the conversions ourselves keeps
// draws bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform on (0, 1), never exactly 0 or 1 (safe under log).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller with one cached draw.
  double normal();

  // Uniform integer in [0, n).
  int uniform_int(int n);

  std::vector<double> normal_vec(int n);

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace idea
