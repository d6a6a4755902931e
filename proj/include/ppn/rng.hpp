#pragma once

#include <cstdint>

namespace ppn {

// PCG32 (XSH-RR). Kept local so random streams are identical on every
// platform and standard library; std::uniform_* distributions are not.
class Pcg32 {
 public:
  explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0) {
    state_ = 0u;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted =
        static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  // Uniform in [0, 1), 24 bits of mantissa.
  float next_float() {
    return static_cast<float>(next_u32() >> 8) * 0x1.0p-24f;
  }

  float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

  // Uniform integer in [0, n). Modulo bias is irrelevant at our sizes.
  int next_below(int n) {
    return static_cast<int>(next_u32() % static_cast<std::uint32_t>(n));
  }

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
};

// FNV-1a, used to derive independent PCG streams from parameter names.
inline std::uint64_t fnv1a(const char* s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (; *s; ++s) {
    h ^= static_cast<unsigned char>(*s);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace ppn
