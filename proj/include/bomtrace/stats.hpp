#pragma once

#include <cctype>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "bomtrace/events.hpp"

namespace bomtrace {

inline constexpr std::string_view kNoExtension = "(none)";

/// Extension used for per-type counts. Versioned shared objects
/// ("libc.so.6") count as ".so"; dotfiles and extensionless names count
/// as "(none)".
inline std::string extension_of(std::string_view path) {
  auto slash = path.rfind('/');
  std::string_view base = slash == std::string_view::npos ? path : path.substr(slash + 1);

  for (auto pos = base.find(".so"); pos != std::string_view::npos; pos = base.find(".so", pos + 1)) {
    if (pos == 0) continue;
    std::string_view tail = base.substr(pos + 3);
    bool versioned = true;
    while (!tail.empty() && versioned) {
      if (tail.front() != '.' || tail.size() < 2 || !std::isdigit(static_cast<unsigned char>(tail[1]))) {
        versioned = false;
        break;
      }
      tail.remove_prefix(1);
      while (!tail.empty() && std::isdigit(static_cast<unsigned char>(tail.front()))) tail.remove_prefix(1);
    }
    if (versioned) return ".so";
  }
  auto dot = base.rfind('.');
  if (dot == std::string_view::npos || dot == 0 || dot + 1 == base.size()) return std::string(kNoExtension);
  return std::string(base.substr(dot));
}

struct LogStats {
  std::uint64_t total_events = 0;
  std::uint64_t open_events = 0;
  std::uint64_t distinct_files = 0;
  std::uint64_t dropped = 0;
  std::map<std::string, std::uint64_t> by_extension;  // distinct files per extension

  friend bool operator==(const LogStats&, const LogStats&) = default;
};

inline LogStats compute_log_stats(EventSource& source) {
  LogStats s;
  std::set<std::string> files;
  while (auto e = source.next()) {
    ++s.total_events;
    if (e->kind == EventKind::open) {
      ++s.open_events;
      if (files.insert(*e->path).second) ++s.by_extension[extension_of(*e->path)];
    }
    if (e->dropped) s.dropped += *e->dropped;
  }
  s.distinct_files = files.size();
  return s;
}

inline std::string render_text(const LogStats& s) {
  std::ostringstream os;
  os << "total events: " << s.total_events << "\n";
  os << "file access events: " << s.open_events << "\n";
  os << "distinct files: " << s.distinct_files << "\n";
  os << "files by extension:\n";
  for (const auto& [ext, n] : s.by_extension) os << "  " << ext << ": " << n << "\n";
  os << "dropped: " << s.dropped << "\n";
  return os.str();
}

inline std::string render_json(const LogStats& s) {
  nlohmann::ordered_json j;
  j["total_events"] = s.total_events;
  j["file_access_events"] = s.open_events;
  j["distinct_files"] = s.distinct_files;
  j["by_extension"] = nlohmann::ordered_json::object();
  for (const auto& [ext, n] : s.by_extension) j["by_extension"][ext] = n;
  j["dropped"] = s.dropped;
  return j.dump(2) + "\n";
}

}  // namespace bomtrace
