#pragma once

#include <array>
#include <cstdint>

namespace shapflow {

// Philox-4x32-10 counter-based generator. A stream is identified by a
// (seed, stream) pair; successive blocks are produced by bumping a local
// 64-bit counter. Streams are independent, so any worker can regenerate
// any stream without coordination. Output depends only on (seed, stream,
// counter), never on call interleaving.
class Philox {
 public:
  Philox(std::uint64_t seed, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)},
        stream_{static_cast<std::uint32_t>(stream),
                static_cast<std::uint32_t>(stream >> 32)} {}

  std::uint64_t next_u64() {
    if (have_ == 0) refill();
    --have_;
    std::uint64_t lo = block_[2 * have_];
    std::uint64_t hi = block_[2 * have_ + 1];
    return (hi << 32) | lo;
  }

  // Uniform in [0, bound). bound must be nonzero. Modulo bias is below
  // 2^-40 for the bounds used here (fewer than 2^24 alternatives).
  std::uint64_t next_index(std::uint64_t bound) { return next_u64() % bound; }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

 private:
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  static constexpr std::uint32_t kMult0 = 0xD2511F53u;
  static constexpr std::uint32_t kMult1 = 0xCD9E8D57u;

  static std::uint32_t mul_hi(std::uint32_t a, std::uint32_t b) {
    return static_cast<std::uint32_t>(
        (static_cast<std::uint64_t>(a) * b) >> 32);
  }

  void refill() {
    std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(counter_),
                                     static_cast<std::uint32_t>(counter_ >> 32),
                                     stream_[0], stream_[1]};
    std::array<std::uint32_t, 2> key = key_;
    for (int round = 0; round < 10; ++round) {
      std::uint32_t lo0 = kMult0 * ctr[0];
      std::uint32_t hi0 = mul_hi(kMult0, ctr[0]);
      std::uint32_t lo1 = kMult1 * ctr[2];
      std::uint32_t hi1 = mul_hi(kMult1, ctr[2]);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    block_ = ctr;
    ++counter_;
    have_ = 2;
  }

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 2> stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int have_ = 0;
};

}  // namespace shapflow
