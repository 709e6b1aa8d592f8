#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

#include "spst/extractor.hpp"
#include "spst/tensor.hpp"

namespace spst {

// 64-bit FNV-1a. Used for cache keys and config fingerprints, not security.
class Fnv1a {
 public:
  Fnv1a& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& str(std::string_view s) {
    const std::uint64_t n = s.size();
    bytes(&n, sizeof n);
    return bytes(s.data(), s.size());
  }
  Fnv1a& u64(std::uint64_t v) { return bytes(&v, sizeof v); }
  Fnv1a& f64(double v) { return bytes(&v, sizeof v); }
  template <typename T>
  Fnv1a& values(std::span<const T> v) {
    u64(v.size());
    return bytes(v.data(), v.size_bytes());
  }

  std::uint64_t value() const { return h_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

template <typename T>
std::string tensor_hash(const Tensor<T>& t) {
  Fnv1a h;
  for (int d : t.shape()) h.u64(static_cast<std::uint64_t>(d));
  return h.values(t.values()).hex();
}

inline std::string extractor_hash(const ExtractorSpec& spec) {
  Fnv1a h;
  for (const auto& l : spec.layers) {
    h.str(l.name).u64(static_cast<std::uint64_t>(l.kind));
    h.u64(static_cast<std::uint64_t>(l.in_ch)).u64(static_cast<std::uint64_t>(l.out_ch));
    h.u64(static_cast<std::uint64_t>(l.k)).u64(static_cast<std::uint64_t>(l.stride));
    h.u64(static_cast<std::uint64_t>(l.pad)).u64(static_cast<std::uint64_t>(l.pool));
    h.values(l.weight.values()).values(l.bias.values());
  }
  for (const auto& t : spec.style_taps) h.str(t.name);
  h.str(spec.content_tap.name);
  const auto& p = spec.preprocess;
  h.f64(p.range).u64(p.bgr ? 1 : 0);
  for (int c = 0; c < 3; ++c) h.f64(p.mean[static_cast<std::size_t>(c)]).f64(p.std[static_cast<std::size_t>(c)]);
  return h.hex();
}

}  // namespace spst
