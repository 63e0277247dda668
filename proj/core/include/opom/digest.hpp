#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

namespace opom {

/// FNV-1a over raw bytes. Used for config/input digests and tie-breaking, not security.
class Digest {
 public:
  Digest& update(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) state_ = (state_ ^ p[i]) * 0x100000001b3ULL;
    return *this;
  }
  Digest& update(std::string_view s) {
    update(s.data(), s.size());
    // Length separator so ("ab","c") and ("a","bc") differ.
    const std::uint64_t n = s.size();
    return update(&n, sizeof n);
  }
  template <class T>
    requires std::is_trivially_copyable_v<T>
  Digest& update(std::span<const T> values) {
    return update(values.data(), values.size_bytes());
  }
  template <class T>
    requires std::is_arithmetic_v<T>
  Digest& update_value(T v) {
    return update(&v, sizeof v);
  }

  std::uint64_t value() const { return state_; }
  std::string hex() const {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[15 - i] = kHex[(state_ >> (4 * i)) & 0xf];
    return out;
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string digest_hex(std::string_view bytes) {
  Digest d;
  d.update(bytes.data(), bytes.size());
  return d.hex();
}

}  // namespace opom
