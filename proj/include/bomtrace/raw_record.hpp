#pragma once

// Binary record layout shared with the in-kernel probes (layout version 1).
// All integers little-endian.
//
//   off  size  field
//     0     1  layout version (1)
//     1     1  kind tag: 1 open, 2 fork, 3 exec, 4 exit, 5 drop
//     2     2  flags: bit 0 = payload truncated
//     4     4  total record size in bytes
//     8     8  ts (ns since trace start)
//    16     4  pid (tgid)
//    20     4  ppid
//    24    16  comm, NUL padded
//    40        payload
//              open: u32 open(2) flags, u32 path length, path bytes (<= 4096)
//              exec: u32 argc, u32 envc, u32 blob length, blob (<= 32 KiB) of
//                    NUL-terminated argv strings followed by env strings
//              drop: u64 lost record count
//              fork, exit: empty

#include <fcntl.h>

#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bomtrace/error.hpp"
#include "bomtrace/events.hpp"

namespace bomtrace {

inline constexpr std::uint8_t kRawLayoutVersion = 1;
inline constexpr std::size_t kRawHeaderSize = 40;
inline constexpr std::size_t kRawCommSize = 16;
inline constexpr std::size_t kRawMaxPath = 4096;
inline constexpr std::size_t kRawMaxArgEnv = 32 * 1024;
inline constexpr std::size_t kRawMaxRecordSize = kRawHeaderSize + 12 + kRawMaxArgEnv;
inline constexpr std::uint16_t kRawFlagTruncated = 1;

enum class RawKind : std::uint8_t { open = 1, fork = 2, exec = 3, exit = 4, drop = 5 };

struct RawKernelRecord {
  RawKind kind = RawKind::open;
  bool truncated = false;
  std::uint64_t ts = 0;
  std::uint32_t pid = 0;
  std::uint32_t ppid = 0;
  std::string comm;
  std::uint32_t open_flags = 0;
  std::string path;
  std::vector<std::string> argv;
  std::vector<std::string> env;
  std::uint64_t drop_count = 0;

  friend bool operator==(const RawKernelRecord&, const RawKernelRecord&) = default;
};

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t off) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(T{in[off + i]} << (8 * i));
  return v;
}

// Lexical normalization: collapses "//", drops ".", resolves "..".
inline std::optional<std::string> normalize_absolute(std::string_view path) {
  if (path.empty() || path.front() != '/') return std::nullopt;
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (pos < path.size()) {
    std::size_t end = path.find('/', pos);
    if (end == std::string_view::npos) end = path.size();
    std::string_view seg = path.substr(pos, end - pos);
    if (seg == "..") {
      if (!parts.empty()) parts.pop_back();
    } else if (!seg.empty() && seg != ".") {
      parts.push_back(seg);
    }
    pos = end + 1;
  }
  std::string out;
  for (auto p : parts) out.append("/").append(p);
  return out.empty() ? std::string("/") : out;
}

}  // namespace detail

/// Encodes a record, enforcing the size caps. Oversized path or argv/env is
/// cut and the truncation flag set.
inline std::vector<std::uint8_t> encode_raw_record(const RawKernelRecord& r) {
  std::vector<std::uint8_t> out;
  out.reserve(kRawHeaderSize + 64);
  bool truncated = r.truncated;
  out.push_back(kRawLayoutVersion);
  out.push_back(static_cast<std::uint8_t>(r.kind));
  detail::put_le<std::uint16_t>(out, 0);
  detail::put_le<std::uint32_t>(out, 0);
  detail::put_le<std::uint64_t>(out, r.ts);
  detail::put_le<std::uint32_t>(out, r.pid);
  detail::put_le<std::uint32_t>(out, r.ppid);
  for (std::size_t i = 0; i < kRawCommSize; ++i)
    out.push_back(i < r.comm.size() && i + 1 < kRawCommSize ? static_cast<std::uint8_t>(r.comm[i]) : 0);
  if (r.comm.size() >= kRawCommSize) truncated = true;

  switch (r.kind) {
    case RawKind::open: {
      std::string_view path = r.path;
      if (path.size() > kRawMaxPath) {
        path = path.substr(0, kRawMaxPath);
        truncated = true;
      }
      detail::put_le<std::uint32_t>(out, r.open_flags);
      detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(path.size()));
      out.insert(out.end(), path.begin(), path.end());
      break;
    }
    case RawKind::exec: {
      std::string blob;
      std::uint32_t argc = 0, envc = 0;
      auto append = [&](const std::vector<std::string>& list, std::uint32_t& count) {
        for (const auto& s : list) {
          if (blob.size() + s.size() + 1 > kRawMaxArgEnv) {
            truncated = true;
            return;
          }
          blob.append(s).push_back('\0');
          ++count;
        }
      };
      append(r.argv, argc);
      if (argc == r.argv.size()) append(r.env, envc);
      else truncated = truncated || !r.env.empty();
      detail::put_le<std::uint32_t>(out, argc);
      detail::put_le<std::uint32_t>(out, envc);
      detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(blob.size()));
      out.insert(out.end(), blob.begin(), blob.end());
      break;
    }
    case RawKind::drop:
      detail::put_le<std::uint64_t>(out, r.drop_count);
      break;
    case RawKind::fork:
    case RawKind::exit:
      break;
  }
  std::uint16_t flags = truncated ? kRawFlagTruncated : 0;
  out[2] = static_cast<std::uint8_t>(flags);
  out[3] = static_cast<std::uint8_t>(flags >> 8);
  auto size = static_cast<std::uint32_t>(out.size());
  for (int i = 0; i < 4; ++i) out[4 + i] = static_cast<std::uint8_t>(size >> (8 * i));
  return out;
}

/// Decodes one record. Throws ParseError on any structural violation.
inline RawKernelRecord decode_raw_record(std::span<const std::uint8_t> in) {
  if (in.size() < kRawHeaderSize) throw ParseError("raw record shorter than header");
  if (in[0] != kRawLayoutVersion) throw ParseError("unsupported raw record layout " + std::to_string(in[0]));
  const auto size = detail::get_le<std::uint32_t>(in, 4);
  if (size > in.size() || size < kRawHeaderSize || size > kRawMaxRecordSize)
    throw ParseError("raw record size field inconsistent");
  in = in.first(size);

  RawKernelRecord r;
  const std::uint8_t tag = in[1];
  if (tag < 1 || tag > 5) throw ParseError("unknown raw record kind " + std::to_string(tag));
  r.kind = static_cast<RawKind>(tag);
  r.truncated = (detail::get_le<std::uint16_t>(in, 2) & kRawFlagTruncated) != 0;
  r.ts = detail::get_le<std::uint64_t>(in, 8);
  r.pid = detail::get_le<std::uint32_t>(in, 16);
  r.ppid = detail::get_le<std::uint32_t>(in, 20);
  const char* comm = reinterpret_cast<const char*>(in.data() + 24);
  r.comm.assign(comm, strnlen(comm, kRawCommSize));

  std::size_t off = kRawHeaderSize;
  auto need = [&](std::size_t n) {
    if (off + n > in.size()) throw ParseError("raw record payload truncated");
  };
  switch (r.kind) {
    case RawKind::open: {
      need(8);
      r.open_flags = detail::get_le<std::uint32_t>(in, off);
      const auto len = detail::get_le<std::uint32_t>(in, off + 4);
      off += 8;
      if (len > kRawMaxPath) throw ParseError("raw path exceeds cap");
      need(len);
      r.path.assign(reinterpret_cast<const char*>(in.data() + off), len);
      break;
    }
    case RawKind::exec: {
      need(12);
      const auto argc = detail::get_le<std::uint32_t>(in, off);
      const auto envc = detail::get_le<std::uint32_t>(in, off + 4);
      const auto len = detail::get_le<std::uint32_t>(in, off + 8);
      off += 12;
      if (len > kRawMaxArgEnv) throw ParseError("raw argv/env exceeds cap");
      need(len);
      std::string_view blob(reinterpret_cast<const char*>(in.data() + off), len);
      std::size_t pos = 0;
      for (std::uint32_t i = 0; i < argc + envc; ++i) {
        std::size_t nul = blob.find('\0', pos);
        if (nul == std::string_view::npos) throw ParseError("raw argv/env string count mismatch");
        (i < argc ? r.argv : r.env).emplace_back(blob.substr(pos, nul - pos));
        pos = nul + 1;
      }
      break;
    }
    case RawKind::drop:
      need(8);
      r.drop_count = detail::get_le<std::uint64_t>(in, off);
      break;
    case RawKind::fork:
    case RawKind::exit:
      break;
  }
  return r;
}

/// read-only -> r; write-only, create, or truncate -> w; read-write -> rw.
inline AccessMode mode_from_open_flags(std::uint32_t flags) {
  switch (flags & O_ACCMODE) {
    case O_WRONLY: return AccessMode::w;
    case O_RDWR: return AccessMode::rw;
    default: return (flags & (O_CREAT | O_TRUNC)) ? AccessMode::w : AccessMode::r;
  }
}

/// Maps a decoded record onto the event model. Returns nullopt for opens
/// whose path is not absolute (nothing canonical to record).
inline std::optional<BuildEvent> to_build_event(const RawKernelRecord& r) {
  BuildEvent e;
  e.ts = r.ts;
  e.pid = r.pid;
  e.comm = r.comm;
  switch (r.kind) {
    case RawKind::open: {
      auto path = detail::normalize_absolute(r.path);
      if (!path) return std::nullopt;
      e.kind = EventKind::open;
      e.path = std::move(*path);
      e.mode = mode_from_open_flags(r.open_flags);
      if (r.ppid) e.ppid = r.ppid;
      break;
    }
    case RawKind::fork:
      e.kind = EventKind::fork;
      e.ppid = r.ppid;
      break;
    case RawKind::exec:
      e.kind = EventKind::exec;
      e.ppid = r.ppid;
      e.argv = r.argv;
      e.env = r.env;
      break;
    case RawKind::exit:
      e.kind = EventKind::exit;
      if (r.ppid) e.ppid = r.ppid;
      break;
    case RawKind::drop:
      e.kind = EventKind::drop;
      e.pid = 0;
      e.comm.clear();
      e.dropped = r.drop_count;
      break;
  }
  return e;
}

}  // namespace bomtrace
