#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace cdraw {

// mt19937 bit stream with explicit value mappings, so generated numbers do
// not depend on stdlib distribution internals.
class Rng {
 public:
  explicit Rng(uint32_t seed = 0) : gen_(seed) {}

  uint32_t u32() { return gen_(); }

  // [0,1)
  float uniform() { return (float)(u32() >> 8) * 0x1.0p-24f; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // [0,n), n < 2^31
  int64_t uniform_int(int64_t n) {
    return (int64_t)(((uint64_t)u32() * (uint64_t)n) >> 32);
  }

  std::string state_str() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void set_state_str(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
  }

 private:
  std::mt19937 gen_;
};

// Stable seed mixing for independent substreams.
inline uint32_t mix_seed(uint32_t seed, uint32_t k) {
  uint64_t z = (uint64_t)seed * 0x9e3779b97f4a7c15ull + k + 1;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return (uint32_t)(z ^ (z >> 31));
}

}  // namespace cdraw
