#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "bomtrace/error.hpp"
#include "bomtrace/sha256.hpp"

namespace bomtrace {

inline constexpr std::string_view kToolName = "bomtrace";
inline constexpr std::string_view kToolVersion = "1.0.0";
inline constexpr int kLogFormatVersion = 1;
inline constexpr std::size_t kMaxCommBytes = 64;

enum class EventKind : std::uint8_t { open, fork, exec, exit, drop };
enum class AccessMode : std::uint8_t { r, w, rw };

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::open: return "open";
    case EventKind::fork: return "fork";
    case EventKind::exec: return "exec";
    case EventKind::exit: return "exit";
    case EventKind::drop: return "drop";
  }
  return "?";
}

inline std::string_view to_string(AccessMode m) {
  switch (m) {
    case AccessMode::r: return "r";
    case AccessMode::w: return "w";
    case AccessMode::rw: return "rw";
  }
  return "?";
}

inline std::optional<EventKind> parse_event_kind(std::string_view s) {
  if (s == "open") return EventKind::open;
  if (s == "fork") return EventKind::fork;
  if (s == "exec") return EventKind::exec;
  if (s == "exit") return EventKind::exit;
  if (s == "drop") return EventKind::drop;
  return std::nullopt;
}

inline std::optional<AccessMode> parse_access_mode(std::string_view s) {
  if (s == "r") return AccessMode::r;
  if (s == "w") return AccessMode::w;
  if (s == "rw") return AccessMode::rw;
  return std::nullopt;
}

/// One kernel-observed occurrence. Which optional fields are populated is
/// fixed by `kind`; see validate().
struct BuildEvent {
  std::uint64_t ts = 0;
  EventKind kind = EventKind::open;
  std::uint32_t pid = 0;
  std::optional<std::uint32_t> ppid;
  std::string comm;
  std::optional<std::string> path;
  std::optional<AccessMode> mode;
  std::optional<std::vector<std::string>> argv;
  std::optional<std::vector<std::string>> env;
  std::optional<Digest> sha256;
  std::optional<std::uint64_t> dropped;

  friend bool operator==(const BuildEvent&, const BuildEvent&) = default;
};

struct LogHeader {
  std::string started;  // RFC 3339 UTC
  std::string tool;     // "<name>/<version>"

  friend bool operator==(const LogHeader&, const LogHeader&) = default;
};

struct LogSummary {
  std::uint64_t events = 0;
  std::uint64_t dropped = 0;

  friend bool operator==(const LogSummary&, const LogSummary&) = default;
};

using LogRecord = std::variant<LogHeader, BuildEvent, LogSummary>;

/// Absolute, and free of "." and ".." segments.
inline bool is_canonical_path(std::string_view path) {
  if (path.empty() || path.front() != '/') return false;
  std::size_t pos = 1;
  while (pos <= path.size()) {
    std::size_t end = path.find('/', pos);
    if (end == std::string_view::npos) end = path.size();
    std::string_view seg = path.substr(pos, end - pos);
    if (seg == "." || seg == "..") return false;
    pos = end + 1;
  }
  return true;
}

/// Throws ParseError describing the first invariant the event violates.
inline void validate(const BuildEvent& e, std::size_t line = 0) {
  auto fail = [line](const std::string& msg) { throw ParseError(msg, line); };
  const bool is_open = e.kind == EventKind::open;
  const bool is_exec = e.kind == EventKind::exec;
  const bool is_drop = e.kind == EventKind::drop;
  const std::string kind{to_string(e.kind)};

  if (e.pid == 0 && !is_drop) fail("pid must be positive for kind=" + kind);
  if ((e.kind == EventKind::fork || is_exec) && (!e.ppid || *e.ppid == 0))
    fail("ppid required for kind=" + kind);
  if (e.comm.size() > kMaxCommBytes) fail("comm longer than 64 bytes");
  if (is_open != e.path.has_value())
    fail(is_open ? "path required for kind=open" : "path not allowed for kind=" + kind);
  if (is_open != e.mode.has_value())
    fail(is_open ? "mode required for kind=open" : "mode not allowed for kind=" + kind);
  if (e.path && !is_canonical_path(*e.path)) fail("path is not absolute and canonical: " + *e.path);
  if (is_exec != e.argv.has_value())
    fail(is_exec ? "argv required for kind=exec" : "argv not allowed for kind=" + kind);
  if (is_exec != e.env.has_value())
    fail(is_exec ? "env required for kind=exec" : "env not allowed for kind=" + kind);
  if (e.sha256 && !is_open) fail("sha256 not allowed for kind=" + kind);
  if (is_drop != e.dropped.has_value())
    fail(is_drop ? "dropped required for kind=drop" : "dropped not allowed for kind=" + kind);
  if (e.dropped && *e.dropped == 0) fail("dropped must be positive");
}

namespace detail {

using ordered_json = nlohmann::ordered_json;

inline std::uint64_t get_unsigned(const nlohmann::json& j, std::string_view key, std::size_t line) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer()) throw ParseError(std::string(key) + " must not be negative", line);
  throw ParseError(std::string(key) + " must be a non-negative integer", line);
}

inline std::string get_string(const nlohmann::json& j, std::string_view key, std::size_t line) {
  if (!j.is_string()) throw ParseError(std::string(key) + " must be a string", line);
  return j.get<std::string>();
}

inline std::vector<std::string> get_string_list(const nlohmann::json& j, std::string_view key,
                                                std::size_t line) {
  if (!j.is_array()) throw ParseError(std::string(key) + " must be an array of strings", line);
  std::vector<std::string> out;
  out.reserve(j.size());
  for (const auto& item : j) out.push_back(get_string(item, key, line));
  return out;
}

inline void reject_unknown_keys(const nlohmann::json& obj,
                                std::initializer_list<std::string_view> allowed, std::size_t line) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (auto k : allowed) known = known || it.key() == k;
    if (!known) throw ParseError("unknown key \"" + it.key() + "\"", line);
  }
}

}  // namespace detail

/// Parses one replay-log line into a header, event, or summary record.
inline LogRecord parse_line(std::string_view text, std::size_t line = 0) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed record: ") + e.what(), line);
  }
  if (!obj.is_object()) throw ParseError("record is not a JSON object", line);
  auto v = obj.find("v");
  if (v == obj.end()) throw ParseError("missing format version \"v\"", line);
  if (!v->is_number_unsigned() || v->get<std::uint64_t>() != kLogFormatVersion)
    throw ParseError("unsupported format version", line);
  auto kind_it = obj.find("kind");
  if (kind_it == obj.end()) throw ParseError("missing kind", line);
  const std::string kind_name = detail::get_string(*kind_it, "kind", line);

  if (kind_name == "header") {
    detail::reject_unknown_keys(obj, {"v", "kind", "started", "tool"}, line);
    if (!obj.contains("started") || !obj.contains("tool"))
      throw ParseError("header requires started and tool", line);
    return LogHeader{detail::get_string(obj["started"], "started", line),
                     detail::get_string(obj["tool"], "tool", line)};
  }
  if (kind_name == "summary") {
    detail::reject_unknown_keys(obj, {"v", "kind", "events", "dropped"}, line);
    if (!obj.contains("events") || !obj.contains("dropped"))
      throw ParseError("summary requires events and dropped", line);
    return LogSummary{detail::get_unsigned(obj["events"], "events", line),
                      detail::get_unsigned(obj["dropped"], "dropped", line)};
  }

  auto kind = parse_event_kind(kind_name);
  if (!kind) throw ParseError("unknown kind \"" + kind_name + "\"", line);
  detail::reject_unknown_keys(obj,
                              {"v", "ts", "kind", "pid", "ppid", "comm", "path", "mode", "argv",
                               "env", "sha256", "dropped"},
                              line);
  for (auto key : {"ts", "pid", "comm"})
    if (!obj.contains(key)) throw ParseError(std::string("missing ") + key, line);

  BuildEvent e;
  e.kind = *kind;
  e.ts = detail::get_unsigned(obj["ts"], "ts", line);
  std::uint64_t pid = detail::get_unsigned(obj["pid"], "pid", line);
  if (pid > UINT32_MAX) throw ParseError("pid out of range", line);
  e.pid = static_cast<std::uint32_t>(pid);
  if (auto it = obj.find("ppid"); it != obj.end()) {
    std::uint64_t ppid = detail::get_unsigned(*it, "ppid", line);
    if (ppid > UINT32_MAX) throw ParseError("ppid out of range", line);
    e.ppid = static_cast<std::uint32_t>(ppid);
  }
  e.comm = detail::get_string(obj["comm"], "comm", line);
  if (auto it = obj.find("path"); it != obj.end()) e.path = detail::get_string(*it, "path", line);
  if (auto it = obj.find("mode"); it != obj.end()) {
    auto m = parse_access_mode(detail::get_string(*it, "mode", line));
    if (!m) throw ParseError("mode must be one of r, w, rw", line);
    e.mode = m;
  }
  if (auto it = obj.find("argv"); it != obj.end()) e.argv = detail::get_string_list(*it, "argv", line);
  if (auto it = obj.find("env"); it != obj.end()) e.env = detail::get_string_list(*it, "env", line);
  if (auto it = obj.find("sha256"); it != obj.end()) {
    auto d = Digest::from_hex(detail::get_string(*it, "sha256", line));
    if (!d) throw ParseError("sha256 must be 64 lowercase hex characters", line);
    e.sha256 = d;
  }
  if (auto it = obj.find("dropped"); it != obj.end())
    e.dropped = detail::get_unsigned(*it, "dropped", line);
  validate(e, line);
  return e;
}

/// One line (no trailing newline) with keys in the fixed log order.
inline std::string serialize_event(const BuildEvent& e) {
  validate(e);
  detail::ordered_json j;
  j["v"] = kLogFormatVersion;
  j["ts"] = e.ts;
  j["kind"] = to_string(e.kind);
  j["pid"] = e.pid;
  if (e.ppid) j["ppid"] = *e.ppid;
  j["comm"] = e.comm;
  if (e.path) j["path"] = *e.path;
  if (e.mode) j["mode"] = to_string(*e.mode);
  if (e.argv) j["argv"] = *e.argv;
  if (e.env) j["env"] = *e.env;
  if (e.sha256) j["sha256"] = e.sha256->hex();
  if (e.dropped) j["dropped"] = *e.dropped;
  return j.dump();
}

inline std::string serialize_header(const LogHeader& h) {
  detail::ordered_json j;
  j["v"] = kLogFormatVersion;
  j["kind"] = "header";
  j["started"] = h.started;
  j["tool"] = h.tool;
  return j.dump();
}

inline std::string serialize_summary(const LogSummary& s) {
  detail::ordered_json j;
  j["v"] = kLogFormatVersion;
  j["kind"] = "summary";
  j["events"] = s.events;
  j["dropped"] = s.dropped;
  return j.dump();
}

/// Pull-based, single-consumer stream of events in non-decreasing ts order.
class EventSource {
 public:
  virtual ~EventSource() = default;

  /// Next event, or nullopt once the stream has terminated.
  virtual std::optional<BuildEvent> next() = 0;
  virtual const LogHeader& header() const = 0;
};

/// Reads a replay log. Structural errors surface from the constructor
/// (header) or from next() (records) as ParseError/OrderingError.
class ReplaySource final : public EventSource {
 public:
  explicit ReplaySource(const std::string& path) : owned_(std::make_unique<std::ifstream>(path)) {
    if (!*owned_) throw Error("cannot read event log: " + path);
    in_ = owned_.get();
    read_header();
  }

  explicit ReplaySource(std::istream& in) : in_(&in) { read_header(); }

  std::optional<BuildEvent> next() override {
    std::string text;
    while (!done_ && std::getline(*in_, text)) {
      ++line_;
      if (summary_) throw ParseError("record after summary line", line_);
      if (text.empty()) throw ParseError("empty line", line_);
      LogRecord rec = parse_line(text, line_);
      if (std::holds_alternative<LogHeader>(rec)) throw ParseError("duplicate header", line_);
      if (auto* s = std::get_if<LogSummary>(&rec)) {
        if (s->events != events_ || s->dropped != dropped_)
          throw ParseError("summary does not match the preceding records", line_);
        summary_ = *s;
        continue;
      }
      BuildEvent e = std::get<BuildEvent>(std::move(rec));
      if (events_ > 0 && e.ts < last_ts_)
        throw OrderingError("ts " + std::to_string(e.ts) + " decreases (previous " +
                                std::to_string(last_ts_) + ")",
                            line_);
      last_ts_ = e.ts;
      ++events_;
      if (e.dropped) dropped_ += *e.dropped;
      return e;
    }
    if (in_->bad()) throw ParseError("read error", line_);
    done_ = true;
    return std::nullopt;
  }

  const LogHeader& header() const override { return header_; }
  const std::optional<LogSummary>& summary() const { return summary_; }
  std::size_t line() const { return line_; }

 private:
  void read_header() {
    std::string text;
    if (!std::getline(*in_, text)) throw ParseError("missing header line", 1);
    line_ = 1;
    LogRecord rec = parse_line(text, 1);
    auto* h = std::get_if<LogHeader>(&rec);
    if (!h) throw ParseError("first line must be the header", 1);
    header_ = *h;
  }

  std::unique_ptr<std::ifstream> owned_;
  std::istream* in_ = nullptr;
  LogHeader header_;
  std::optional<LogSummary> summary_;
  std::size_t line_ = 0;
  std::uint64_t events_ = 0;
  std::uint64_t dropped_ = 0;
  std::uint64_t last_ts_ = 0;
  bool done_ = false;
};

/// Appends records to an event log, one line each, flushed per line.
class LogWriter {
 public:
  explicit LogWriter(std::ostream& out) : out_(out) {}

  void header(const LogHeader& h) { line(serialize_header(h)); }
  void event(const BuildEvent& e) {
    line(serialize_event(e));
    ++events_;
    if (e.dropped) dropped_ += *e.dropped;
  }
  void summary() { line(serialize_summary({events_, dropped_})); }

 private:
  void line(const std::string& s) {
    out_ << s << '\n';
    out_.flush();
  }

  std::ostream& out_;
  std::uint64_t events_ = 0;
  std::uint64_t dropped_ = 0;
};

}  // namespace bomtrace
