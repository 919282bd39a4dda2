#pragma once

#include <algorithm>
#include <array>
#include <cerrno>
#include <compare>
#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include <unistd.h>

#include "bomtrace/error.hpp"

namespace bomtrace {

namespace detail {

inline constexpr char kHexDigits[] = "0123456789abcdef";

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(kHexDigits[b >> 4]);
    out.push_back(kHexDigits[b & 0xf]);
  }
  return out;
}

// Lowercase only; uppercase digits are rejected.
inline int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

inline std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }
inline std::uint32_t rotl(std::uint32_t x, int n) { return (x << n) | (x >> (32 - n)); }

}  // namespace detail

/// A SHA-256 digest. The algorithm tag is fixed; the type exists so a
/// digest is never confused with arbitrary 32-byte data or free-form hex.
class Digest {
 public:
  static constexpr std::size_t kSize = 32;
  static constexpr std::string_view kAlgorithm = "SHA-256";

  Digest() = default;
  explicit Digest(const std::array<std::uint8_t, kSize>& bytes) : bytes_(bytes) {}

  /// Parses exactly 64 lowercase hex characters.
  static std::optional<Digest> from_hex(std::string_view hex) {
    if (hex.size() != kSize * 2) return std::nullopt;
    std::array<std::uint8_t, kSize> bytes{};
    for (std::size_t i = 0; i < kSize; ++i) {
      int hi = detail::hex_value(hex[2 * i]);
      int lo = detail::hex_value(hex[2 * i + 1]);
      if (hi < 0 || lo < 0) return std::nullopt;
      bytes[i] = static_cast<std::uint8_t>((hi << 4) | lo);
    }
    return Digest(bytes);
  }

  static bool is_valid_hex(std::string_view hex) { return from_hex(hex).has_value(); }

  std::string hex() const { return detail::to_hex(bytes_); }
  const std::array<std::uint8_t, kSize>& bytes() const noexcept { return bytes_; }

  friend auto operator<=>(const Digest&, const Digest&) = default;

 private:
  std::array<std::uint8_t, kSize> bytes_{};
};

/// Incremental SHA-256 (FIPS 180-4).
class Sha256 {
 public:
  Sha256() { reset(); }

  void reset() {
    state_ = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
              0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    buffered_ = 0;
    length_ = 0;
  }

  Sha256& update(std::span<const std::uint8_t> data) {
    length_ += data.size();
    std::size_t i = 0;
    if (buffered_) {
      std::size_t take = std::min(data.size(), block_.size() - buffered_);
      std::memcpy(block_.data() + buffered_, data.data(), take);
      buffered_ += take;
      i = take;
      if (buffered_ < block_.size()) return *this;
      compress(block_.data());
      buffered_ = 0;
    }
    for (; i + 64 <= data.size(); i += 64) compress(data.data() + i);
    if (i < data.size()) {
      buffered_ = data.size() - i;
      std::memcpy(block_.data(), data.data() + i, buffered_);
    }
    return *this;
  }

  Sha256& update(std::string_view s) {
    return update(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }

  Sha256& update(std::uint8_t byte) { return update(std::span(&byte, 1)); }

  Digest finish() {
    const std::uint64_t bit_length = length_ * 8;
    std::uint8_t pad[72] = {0x80};
    std::size_t pad_len = (buffered_ < 56) ? 56 - buffered_ : 120 - buffered_;
    for (int i = 0; i < 8; ++i)
      pad[pad_len + i] = static_cast<std::uint8_t>(bit_length >> (56 - 8 * i));
    update(std::span<const std::uint8_t>(pad, pad_len + 8));

    std::array<std::uint8_t, Digest::kSize> out{};
    for (int i = 0; i < 8; ++i) {
      out[4 * i] = static_cast<std::uint8_t>(state_[i] >> 24);
      out[4 * i + 1] = static_cast<std::uint8_t>(state_[i] >> 16);
      out[4 * i + 2] = static_cast<std::uint8_t>(state_[i] >> 8);
      out[4 * i + 3] = static_cast<std::uint8_t>(state_[i]);
    }
    reset();
    return Digest(out);
  }

 private:
  void compress(const std::uint8_t* p) {
    static constexpr std::uint32_t k[64] = {
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
        0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
        0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
        0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
        0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
        0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
        0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
        0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
        0xc67178f2};
    using detail::rotr;

    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t{p[4 * i]} << 24) | (std::uint32_t{p[4 * i + 1]} << 16) |
             (std::uint32_t{p[4 * i + 2]} << 8) | std::uint32_t{p[4 * i + 3]};
    for (int i = 16; i < 64; ++i) {
      std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }

    auto [a, b, c, d, e, f, g, h] = state_;
    for (int i = 0; i < 64; ++i) {
      std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      std::uint32_t ch = (e & f) ^ (~e & g);
      std::uint32_t t1 = h + s1 + ch + k[i] + w[i];
      std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      std::uint32_t t2 = s0 + maj;
      h = g;
      g = f;
      f = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    state_[0] += a;
    state_[1] += b;
    state_[2] += c;
    state_[3] += d;
    state_[4] += e;
    state_[5] += f;
    state_[6] += g;
    state_[7] += h;
  }

  std::array<std::uint32_t, 8> state_{};
  std::array<std::uint8_t, 64> block_{};
  std::size_t buffered_ = 0;
  std::uint64_t length_ = 0;
};

inline Digest sha256(std::span<const std::uint8_t> data) { return Sha256().update(data).finish(); }
inline Digest sha256(std::string_view data) { return Sha256().update(data).finish(); }

inline constexpr std::size_t kHashChunkSize = 64 * 1024;

/// Streams `in` to its end in fixed-size chunks. Reads through the stream
/// buffer so a failing device still reports how much was consumed.
inline Digest hash_stream(std::istream& in) {
  Sha256 hasher;
  std::array<char, kHashChunkSize> chunk;
  std::uint64_t total = 0;
  std::streambuf* sb = in.rdbuf();
  if (!sb || !in.good()) throw HashReadError("stream not readable", 0);
  try {
    for (;;) {
      std::streamsize avail = sb->in_avail();
      if (avail == 0) {
        if (std::streambuf::traits_type::eq_int_type(sb->sgetc(), std::streambuf::traits_type::eof())) break;
        avail = sb->in_avail();
      }
      if (avail < 0) break;
      auto want = std::min<std::streamsize>(std::max<std::streamsize>(avail, 1), chunk.size());
      auto got = sb->sgetn(chunk.data(), want);
      if (got <= 0) break;
      hasher.update(std::string_view(chunk.data(), static_cast<std::size_t>(got)));
      total += static_cast<std::uint64_t>(got);
    }
  } catch (const std::exception& e) {
    in.setstate(std::ios::badbit);
    throw HashReadError(std::string("stream read failed: ") + e.what(), total);
  }
  in.setstate(std::ios::eofbit);
  return hasher.finish();
}

/// Streams an open file descriptor from its current offset to EOF.
inline Digest hash_fd(int fd) {
  Sha256 hasher;
  std::array<std::uint8_t, kHashChunkSize> chunk;
  std::uint64_t total = 0;
  for (;;) {
    ssize_t got = ::read(fd, chunk.data(), chunk.size());
    if (got < 0) {
      if (errno == EINTR) continue;
      throw HashReadError(std::strerror(errno), total);
    }
    if (got == 0) break;
    hasher.update(std::span<const std::uint8_t>(chunk.data(), static_cast<std::size_t>(got)));
    total += static_cast<std::uint64_t>(got);
  }
  return hasher.finish();
}

/// SHA-1, used only to derive name-based (v5) UUIDs.
class Sha1 {
 public:
  static std::array<std::uint8_t, 20> digest(std::string_view prefix, std::string_view data) {
    std::string msg;
    msg.reserve(prefix.size() + data.size() + 72);
    msg.append(prefix).append(data);
    const std::uint64_t bit_length = std::uint64_t{msg.size()} * 8;
    msg.push_back(static_cast<char>(0x80));
    while (msg.size() % 64 != 56) msg.push_back('\0');
    for (int i = 7; i >= 0; --i) msg.push_back(static_cast<char>(bit_length >> (8 * i)));

    std::uint32_t h[5] = {0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476, 0xC3D2E1F0};
    for (std::size_t off = 0; off < msg.size(); off += 64) {
      const auto* p = reinterpret_cast<const std::uint8_t*>(msg.data() + off);
      std::uint32_t w[80];
      for (int i = 0; i < 16; ++i)
        w[i] = (std::uint32_t{p[4 * i]} << 24) | (std::uint32_t{p[4 * i + 1]} << 16) |
               (std::uint32_t{p[4 * i + 2]} << 8) | std::uint32_t{p[4 * i + 3]};
      for (int i = 16; i < 80; ++i) w[i] = detail::rotl(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
      std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
      for (int i = 0; i < 80; ++i) {
        std::uint32_t f, k;
        if (i < 20) {
          f = (b & c) | (~b & d);
          k = 0x5A827999;
        } else if (i < 40) {
          f = b ^ c ^ d;
          k = 0x6ED9EBA1;
        } else if (i < 60) {
          f = (b & c) | (b & d) | (c & d);
          k = 0x8F1BBCDC;
        } else {
          f = b ^ c ^ d;
          k = 0xCA62C1D6;
        }
        std::uint32_t t = detail::rotl(a, 5) + f + e + k + w[i];
        e = d;
        d = c;
        c = detail::rotl(b, 30);
        b = a;
        a = t;
      }
      h[0] += a;
      h[1] += b;
      h[2] += c;
      h[3] += d;
      h[4] += e;
    }
    std::array<std::uint8_t, 20> out{};
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 4; ++j) out[4 * i + j] = static_cast<std::uint8_t>(h[i] >> (24 - 8 * j));
    return out;
  }
};

/// Name-based UUID (version 5) in the RFC 4122 URL namespace, as a URN.
inline std::string uuid_v5_url_urn(std::string_view name) {
  static constexpr std::uint8_t kUrlNamespace[16] = {0x6b, 0xa7, 0xb8, 0x11, 0x9d, 0xad,
                                                     0x11, 0xd1, 0x80, 0xb4, 0x00, 0xc0,
                                                     0x4f, 0xd4, 0x30, 0xc8};
  auto h = Sha1::digest(std::string_view(reinterpret_cast<const char*>(kUrlNamespace), 16), name);
  h[6] = static_cast<std::uint8_t>((h[6] & 0x0f) | 0x50);
  h[8] = static_cast<std::uint8_t>((h[8] & 0x3f) | 0x80);
  std::string hex = detail::to_hex(std::span<const std::uint8_t>(h.data(), 16));
  return "urn:uuid:" + hex.substr(0, 8) + "-" + hex.substr(8, 4) + "-" + hex.substr(12, 4) + "-" +
         hex.substr(16, 4) + "-" + hex.substr(20, 12);
}

}  // namespace bomtrace
