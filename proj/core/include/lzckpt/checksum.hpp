#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace lzckpt {

// 64-bit FNV-1a. Each absorbed byte applies a bijection to the running state,
// so any single-byte change in the input provably changes the digest; that
// property is what the corruption-detection tests lean on.
class Fnv64 {
public:
  static constexpr uint64_t kOffset = 0xcbf29ce484222325ull;
  static constexpr uint64_t kPrime = 0x100000001b3ull;

  void update(const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = state_;
    for (size_t i = 0; i < len; ++i) {
      h = (h ^ p[i]) * kPrime;
    }
    state_ = h;
  }

  void update(std::span<const std::byte> data) { update(data.data(), data.size()); }

  uint64_t digest() const { return state_; }
  void reset() { state_ = kOffset; }

private:
  uint64_t state_ = kOffset;
};

inline uint64_t fnv64(const void* data, size_t len) {
  Fnv64 h;
  h.update(data, len);
  return h.digest();
}

inline uint64_t fnv64(std::span<const std::byte> data) {
  return fnv64(data.data(), data.size());
}

}  // namespace lzckpt
