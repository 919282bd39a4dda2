#pragma once

#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bomtrace/error.hpp"
#include "bomtrace/hashing.hpp"

namespace bomtrace {

namespace purl_detail {

inline bool unreserved(unsigned char c) {
  return std::isalnum(c) || c == '-' || c == '.' || c == '_' || c == '~';
}

inline std::string encode(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (unreserved(c)) {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0xf]);
    }
  }
  return out;
}

inline int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

inline std::string decode(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '%') {
      out.push_back(s[i]);
      continue;
    }
    if (i + 2 >= s.size()) throw Error("purl: truncated percent escape");
    int hi = hex_digit(s[i + 1]), lo = hex_digit(s[i + 2]);
    if (hi < 0 || lo < 0) throw Error("purl: invalid percent escape");
    out.push_back(static_cast<char>((hi << 4) | lo));
    i += 2;
  }
  return out;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    std::size_t end = s.find(sep, pos);
    out.push_back(s.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return out;
}

}  // namespace purl_detail

/// Package URL: pkg:type/namespace/name@version?qualifiers#subpath
struct PackageUrl {
  std::string type;
  std::vector<std::string> namespace_segments;
  std::string name;
  std::optional<std::string> version;
  std::map<std::string, std::string> qualifiers;
  std::optional<std::string> subpath;

  friend bool operator==(const PackageUrl&, const PackageUrl&) = default;

  std::string to_string() const {
    using purl_detail::encode;
    std::string out = "pkg:" + type + "/";
    for (const auto& seg : namespace_segments) out += encode(seg) + "/";
    out += encode(name);
    if (version) out += "@" + encode(*version);
    if (!qualifiers.empty()) {
      char sep = '?';
      for (const auto& [k, v] : qualifiers) {
        out += sep + k + "=" + encode(v);
        sep = '&';
      }
    }
    if (subpath) {
      out += "#";
      bool first = true;
      for (auto seg : purl_detail::split(*subpath, '/')) {
        if (!first) out += "/";
        out += encode(seg);
        first = false;
      }
    }
    return out;
  }

  static PackageUrl parse(std::string_view text) {
    using namespace purl_detail;
    PackageUrl p;
    std::string_view rest = text;
    if (auto hash = rest.rfind('#'); hash != std::string_view::npos) {
      std::string sub;
      for (auto seg : split(rest.substr(hash + 1), '/')) {
        if (seg.empty() || seg == "." || seg == "..") continue;
        if (!sub.empty()) sub += "/";
        sub += decode(seg);
      }
      if (!sub.empty()) p.subpath = sub;
      rest = rest.substr(0, hash);
    }
    if (auto q = rest.rfind('?'); q != std::string_view::npos) {
      for (auto kv : split(rest.substr(q + 1), '&')) {
        auto eq = kv.find('=');
        if (eq == std::string_view::npos || eq == 0) throw Error("purl: malformed qualifier");
        std::string key;
        for (char c : kv.substr(0, eq)) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        std::string value = decode(kv.substr(eq + 1));
        if (!value.empty()) p.qualifiers[key] = value;
      }
      rest = rest.substr(0, q);
    }
    if (rest.substr(0, 4) != "pkg:") throw Error("purl: scheme must be pkg");
    rest = rest.substr(4);
    while (!rest.empty() && rest.front() == '/') rest.remove_prefix(1);
    while (!rest.empty() && rest.back() == '/') rest.remove_suffix(1);

    auto slash = rest.find('/');
    if (slash == std::string_view::npos || slash == 0) throw Error("purl: missing type");
    for (char c : rest.substr(0, slash)) {
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '+' && c != '-')
        throw Error("purl: invalid type character");
      p.type.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (std::isdigit(static_cast<unsigned char>(p.type.front()))) throw Error("purl: type starts with digit");
    rest = rest.substr(slash + 1);

    if (auto at = rest.rfind('@'); at != std::string_view::npos) {
      p.version = decode(rest.substr(at + 1));
      rest = rest.substr(0, at);
    }
    auto last = rest.rfind('/');
    std::string_view name = last == std::string_view::npos ? rest : rest.substr(last + 1);
    if (name.empty()) throw Error("purl: missing name");
    p.name = decode(name);
    if (last != std::string_view::npos) {
      for (auto seg : split(rest.substr(0, last), '/'))
        if (!seg.empty()) p.namespace_segments.push_back(decode(seg));
    }
    return p;
  }
};

/// pkg:generic/<basename>?checksum=sha256:<hex>, or nullopt when the
/// observation is unhashable or its path has no basename.
inline std::optional<PackageUrl> purl_for(const FileObservation& obs) {
  if (!obs.digest) return std::nullopt;
  auto slash = obs.path.rfind('/');
  std::string base = slash == std::string::npos ? obs.path : obs.path.substr(slash + 1);
  if (base.empty()) return std::nullopt;
  PackageUrl p;
  p.type = "generic";
  p.name = std::move(base);
  p.qualifiers["checksum"] = "sha256:" + obs.digest->hex();
  return p;
}

}  // namespace bomtrace
