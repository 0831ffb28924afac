#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace flr {

// Incremental 64-bit FNV-1a.
class Fnv1a {
 public:
  void feed(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void feed(std::string_view s) { feed(s.data(), s.size()); }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view s) {
  Fnv1a h;
  h.feed(s);
  return h.digest();
}

}  // namespace flr
