#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bomtrace/events.hpp"
#include "bomtrace/hashing.hpp"

namespace bomtrace {

struct ProcessRecord {
  std::uint32_t pid = 0;
  std::uint32_t ppid = 0;
  std::string comm;
  std::vector<std::string> argv;
  std::vector<std::string> env;
  std::uint64_t start_ts = 0;
  std::optional<std::uint64_t> exit_ts;
  bool truncated = false;
  bool orphan = false;
  bool execed = false;

  friend bool operator==(const ProcessRecord&, const ProcessRecord&) = default;
};

struct RedactionPolicy {
  bool enabled = true;
  std::vector<std::string> patterns;  // case-insensitive substrings of KEY
  std::string token = "[REDACTED]";

  static std::vector<std::string> default_patterns() {
    return {"token", "secret", "password", "key", "credential"};
  }
  static RedactionPolicy defaults() { return {true, default_patterns(), "[REDACTED]"}; }
  static RedactionPolicy disabled() { return {false, {}, "[REDACTED]"}; }
};

namespace detail {

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_run = false;
  for (char c : s) {
    if (is_space(c)) {
      if (!in_run) out.push_back(' ');
      in_run = true;
    } else {
      out.push_back(c);
      in_run = false;
    }
  }
  return out;
}

template <typename Range>
std::string join(const Range& items, std::string_view sep) {
  std::string out;
  bool first = true;
  for (const auto& s : items) {
    if (!first) out.append(sep);
    out.append(s);
    first = false;
  }
  return out;
}

}  // namespace detail

/// Replaces the value of every KEY=VALUE entry whose key contains one of the
/// policy's patterns. Entries without '=' pass through; order and length
/// are preserved.
inline std::vector<std::string> redact(const std::vector<std::string>& env,
                                       const RedactionPolicy& policy) {
  if (!policy.enabled) return env;
  std::vector<std::string> lowered;
  lowered.reserve(policy.patterns.size());
  for (const auto& p : policy.patterns) lowered.push_back(detail::ascii_lower(p));

  std::vector<std::string> out;
  out.reserve(env.size());
  for (const auto& entry : env) {
    auto eq = entry.find('=');
    if (eq == std::string::npos) {
      out.push_back(entry);
      continue;
    }
    const std::string key = detail::ascii_lower(std::string_view(entry).substr(0, eq));
    bool hit = std::any_of(lowered.begin(), lowered.end(),
                           [&](const std::string& p) { return key.find(p) != std::string::npos; });
    out.push_back(hit ? entry.substr(0, eq + 1) + policy.token : entry);
  }
  return out;
}

/// Reconstructs the traced process subtree. Records are keyed by
/// (pid, start_ts) so recycled pids produce distinct records. Events must
/// arrive in ts order.
class ProcessTree {
 public:
  explicit ProcessTree(RedactionPolicy policy = RedactionPolicy::defaults(), bool verbatim_env = false)
      : policy_(std::move(policy)), verbatim_env_(verbatim_env) {}

  void ingest(const BuildEvent& e) {
    switch (e.kind) {
      case EventKind::fork: {
        const std::uint32_t parent = e.ppid.value_or(0);
        auto p = live_.find(parent);
        ProcessRecord rec;
        rec.pid = e.pid;
        rec.ppid = parent;
        rec.comm = p != live_.end() ? records_[p->second].comm : e.comm;
        rec.start_ts = e.ts;
        rec.orphan = p == live_.end() && !records_.empty();
        add(std::move(rec));
        break;
      }
      case EventKind::exec: {
        auto it = live_.find(e.pid);
        if (it == live_.end()) {
          ProcessRecord rec;
          rec.pid = e.pid;
          rec.ppid = e.ppid.value_or(0);
          rec.start_ts = e.ts;
          rec.orphan = !records_.empty();
          it = add(std::move(rec));
        }
        ProcessRecord& rec = records_[it->second];
        rec.comm = e.comm;
        rec.argv = e.argv.value_or(std::vector<std::string>{});
        rec.env = normalize_env(e.env.value_or(std::vector<std::string>{}));
        rec.execed = true;
        break;
      }
      case EventKind::exit: {
        auto it = live_.find(e.pid);
        if (it == live_.end()) {
          ProcessRecord rec;
          rec.pid = e.pid;
          rec.ppid = e.ppid.value_or(0);
          rec.comm = e.comm;
          rec.start_ts = e.ts;
          rec.orphan = !records_.empty();
          it = add(std::move(rec));
        }
        records_[it->second].exit_ts = e.ts;
        live_.erase(it);
        break;
      }
      case EventKind::open:
      case EventKind::drop:
        break;
    }
  }

  /// Flags the current record of `pid` as carrying truncated argv/env.
  void mark_truncated(std::uint32_t pid) {
    if (auto it = live_.find(pid); it != live_.end()) records_[it->second].truncated = true;
  }

  const std::vector<ProcessRecord>& records() const { return records_; }

  /// The record `pid` referred to at time `ts`.
  const ProcessRecord* find(std::uint32_t pid, std::uint64_t ts) const {
    auto it = by_pid_.find(pid);
    if (it == by_pid_.end()) return nullptr;
    const ProcessRecord* best = nullptr;
    for (std::size_t idx : it->second)
      if (records_[idx].start_ts <= ts) best = &records_[idx];
    return best;
  }

  std::size_t orphan_count() const {
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(), [](const auto& r) { return r.orphan; }));
  }

  /// Observations whose first accessor has no record, or only an orphan one.
  std::size_t orphan_attributed(const std::vector<FileObservation>& observations) const {
    std::size_t n = 0;
    for (const auto& o : observations) {
      const ProcessRecord* r = find(o.first_pid, o.first_ts);
      if (!r || r->orphan) ++n;
    }
    return n;
  }

  /// One (name, value) pair per exec'd record, ordered by (start_ts, pid).
  std::vector<std::pair<std::string, std::string>> command_properties() const {
    std::vector<const ProcessRecord*> execed;
    for (const auto& r : records_)
      if (r.execed) execed.push_back(&r);
    std::stable_sort(execed.begin(), execed.end(), [](const auto* a, const auto* b) {
      return std::pair(a->start_ts, a->pid) < std::pair(b->start_ts, b->pid);
    });
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(execed.size());
    for (const auto* r : execed) out.emplace_back(command_property_name(r->pid), command_value(*r));
    return out;
  }

  static std::string command_property_name(std::uint32_t pid) {
    return "bomfather:command:pid=" + std::to_string(pid);
  }

  static std::string command_value(const ProcessRecord& r) {
    std::string head = r.comm + " " + detail::join(r.argv, " ");
    return detail::collapse_whitespace(head) + "\nEnv: " + detail::join(r.env, ", ");
  }

 private:
  std::unordered_map<std::uint32_t, std::size_t>::iterator add(ProcessRecord rec) {
    const std::uint32_t pid = rec.pid;
    records_.push_back(std::move(rec));
    by_pid_[pid].push_back(records_.size() - 1);
    return live_.insert_or_assign(pid, records_.size() - 1).first;
  }

  std::vector<std::string> normalize_env(const std::vector<std::string>& env) const {
    std::vector<std::string> out = redact(env, policy_);
    if (!verbatim_env_) std::erase(out, std::string());
    return out;
  }

  RedactionPolicy policy_;
  bool verbatim_env_;
  std::vector<ProcessRecord> records_;
  std::unordered_map<std::uint32_t, std::vector<std::size_t>> by_pid_;
  std::unordered_map<std::uint32_t, std::size_t> live_;
};

}  // namespace bomtrace
