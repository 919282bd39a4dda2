#pragma once

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "bomtrace/events.hpp"
#include "bomtrace/path_filter.hpp"
#include "bomtrace/sha256.hpp"

namespace bomtrace {

enum class UnhashableReason : std::uint8_t { vanished, permission, non_regular, excluded };
enum class Classification : std::uint8_t { input, output, intermediate };

inline std::string_view to_string(UnhashableReason r) {
  switch (r) {
    case UnhashableReason::vanished: return "vanished";
    case UnhashableReason::permission: return "permission";
    case UnhashableReason::non_regular: return "non-regular";
    case UnhashableReason::excluded: return "excluded";
  }
  return "?";
}

inline std::string_view to_string(Classification c) {
  switch (c) {
    case Classification::input: return "input";
    case Classification::output: return "output";
    case Classification::intermediate: return "intermediate";
  }
  return "?";
}

/// What the tracer could learn about a file's content at one point in time.
struct Content {
  std::optional<Digest> digest;
  std::optional<UnhashableReason> reason;

  static Content of(const Digest& d) { return {d, std::nullopt}; }
  static Content unhashable(UnhashableReason r) { return {std::nullopt, r}; }
};

struct ModeSet {
  bool read = false;
  bool write = false;

  friend bool operator==(const ModeSet&, const ModeSet&) = default;
};

struct FileObservation {
  std::string path;
  std::uint32_t version = 1;
  std::optional<Digest> digest;
  std::optional<UnhashableReason> reason;
  ModeSet modes;
  std::uint32_t first_pid = 0;
  std::uint32_t last_pid = 0;
  std::uint64_t first_ts = 0;
  std::uint64_t last_ts = 0;
  std::uint64_t event_count = 0;
  Classification classification = Classification::input;

  bool hashable() const { return digest.has_value(); }

  friend bool operator==(const FileObservation&, const FileObservation&) = default;
};

/// Live-mode cache identity; every field comes from one fstat() snapshot.
struct HashCacheKey {
  dev_t device = 0;
  ino_t inode = 0;
  off_t size = 0;
  std::int64_t mtime_ns = 0;

  friend bool operator==(const HashCacheKey&, const HashCacheKey&) = default;
};

struct HashCacheKeyHash {
  std::size_t operator()(const HashCacheKey& k) const noexcept {
    std::size_t h = std::hash<std::uint64_t>{}(k.device);
    for (std::uint64_t v : {std::uint64_t(k.inode), std::uint64_t(k.size), std::uint64_t(k.mtime_ns)})
      h ^= std::hash<std::uint64_t>{}(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
  }
};

/// Hashes files from the live filesystem with an identity cache.
class FileHasher {
 public:
  explicit FileHasher(bool cache_enabled = true) : cache_enabled_(cache_enabled) {}

  Content hash(const std::string& path) {
    int fd = ::open(path.c_str(), O_RDONLY | O_NONBLOCK | O_CLOEXEC | O_NOCTTY);
    if (fd < 0) return Content::unhashable(reason_for(errno));
    struct FdCloser {
      int fd;
      ~FdCloser() { ::close(fd); }
    } closer{fd};

    struct stat st {};
    if (::fstat(fd, &st) != 0) return Content::unhashable(reason_for(errno));
    if (!S_ISREG(st.st_mode)) return Content::unhashable(UnhashableReason::non_regular);
    HashCacheKey key{st.st_dev, st.st_ino, st.st_size,
                     std::int64_t(st.st_mtim.tv_sec) * 1'000'000'000 + st.st_mtim.tv_nsec};
    if (cache_enabled_) {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) {
        ++hits_;
        return Content::of(it->second);
      }
    }
    ++misses_;
    Digest d;
    try {
      d = hash_fd(fd);
    } catch (const HashReadError&) {
      return Content::unhashable(UnhashableReason::vanished);
    }
    if (cache_enabled_) {
      std::lock_guard lock(mu_);
      cache_.emplace(key, d);
    }
    return Content::of(d);
  }

  std::uint64_t hits() const { return hits_; }
  std::uint64_t misses() const { return misses_; }

 private:
  static UnhashableReason reason_for(int err) {
    switch (err) {
      case EACCES:
      case EPERM: return UnhashableReason::permission;
      case ENXIO:
      case ENODEV:
      case EOPNOTSUPP: return UnhashableReason::non_regular;
      default: return UnhashableReason::vanished;
    }
  }

  bool cache_enabled_;
  std::mutex mu_;
  std::unordered_map<HashCacheKey, Digest, HashCacheKeyHash> cache_;
  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> misses_{0};
};

/// Aggregates open events into per-(path, content version) observations.
///
/// Replay mode takes content from each event's sha256. Live mode hashes the
/// filesystem: reads hash immediately (through the cache); writes are held
/// as pending until the next read of the path or finalize(), at which point
/// they resolve to the content they produced. `on_resolved` reports each
/// held event's content by the sequence number given to observe().
///
/// observe() is safe to call from several threads as long as the events of
/// any single path arrive from one thread in order (observe_all() does this).
class ObservationStore {
 public:
  enum class Mode { replay, live };
  using ResolvedFn = std::function<void(std::uint64_t seq, const Content&)>;

  static constexpr std::size_t kShards = 64;

  explicit ObservationStore(Mode mode, PathFilter filter = {}, FileHasher* hasher = nullptr)
      : mode_(mode), filter_(std::move(filter)), hasher_(hasher), shards_(kShards) {
    if (mode_ == Mode::live && !hasher_) {
      owned_hasher_ = std::make_unique<FileHasher>();
      hasher_ = owned_hasher_.get();
    }
  }

  void on_resolved(ResolvedFn fn) { resolved_ = std::move(fn); }

  /// Returns the content the event was attributed to, or nullopt when the
  /// event is held pending (live writes).
  std::optional<Content> observe(const BuildEvent& e, std::uint64_t seq = 0) {
    if (e.kind != EventKind::open || !e.path || !e.mode) return std::nullopt;
    Shard& shard = shards_[shard_index(*e.path)];
    std::lock_guard lock(shard.mu);
    PathState& st = shard.paths[*e.path];

    if (filter_.excluded(*e.path)) {
      Content c = Content::unhashable(UnhashableReason::excluded);
      apply(st, *e.path, e, c);
      return c;
    }
    if (mode_ == Mode::replay) {
      Content c = e.sha256 ? Content::of(*e.sha256) : Content::unhashable(UnhashableReason::vanished);
      if (e.sha256) {
        if (shard.replay_seen.insert({*e.path, *e.sha256}).second) ++replay_misses_;
        else ++replay_hits_;
      }
      apply(st, *e.path, e, c);
      return c;
    }
    if (*e.mode != AccessMode::r) {
      st.pending.push_back({e, seq});
      return std::nullopt;
    }
    Content c = hasher_->hash(*e.path);
    resolve_pending(st, *e.path, c);
    apply(st, *e.path, e, c);
    return c;
  }

  /// Replays `events` through observe() using `workers` threads. Events are
  /// partitioned by path so per-path order is preserved; the result does
  /// not depend on the worker count.
  void observe_all(std::span<const BuildEvent> events, unsigned workers = 1) {
    workers = std::max(1u, workers);
    if (workers == 1) {
      for (std::size_t i = 0; i < events.size(); ++i) observe(events[i], i);
      return;
    }
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([this, events, w, workers] {
        for (std::size_t i = 0; i < events.size(); ++i) {
          const auto& e = events[i];
          if (e.kind != EventKind::open || !e.path) continue;
          if (shard_index(*e.path) % workers == w) observe(e, i);
        }
      });
    }
  }

  /// Resolves outstanding writes, classifies, and returns observations
  /// sorted by (path, version). Requires exclusive access.
  std::vector<FileObservation> finalize() {
    std::vector<FileObservation> out;
    for (auto& shard : shards_) {
      std::lock_guard lock(shard.mu);
      for (auto& [path, st] : shard.paths) {
        if (!st.pending.empty()) {
          Content c = hasher_ ? hasher_->hash(path) : Content::unhashable(UnhashableReason::vanished);
          resolve_pending(st, path, c);
        }
        for (std::size_t i = 0; i < st.versions.size(); ++i) {
          FileObservation obs = st.versions[i];
          const Track& t = st.tracks[i];
          if (t.first_mode == AccessMode::r && !t.written_before)
            obs.classification = Classification::input;
          else if (t.has_write && !t.read_after_write)
            obs.classification = Classification::output;
          else
            obs.classification = Classification::intermediate;
          out.push_back(std::move(obs));
        }
      }
    }
    std::sort(out.begin(), out.end(), [](const FileObservation& a, const FileObservation& b) {
      if (a.path != b.path) return a.path < b.path;
      return a.version < b.version;
    });
    return out;
  }

  std::uint64_t replay_cache_hits() const { return replay_hits_; }
  std::uint64_t replay_cache_misses() const { return replay_misses_; }

 private:
  struct Track {
    AccessMode first_mode = AccessMode::r;
    bool written_before = false;
    bool has_write = false;
    bool read_after_write = false;
  };

  struct Pending {
    BuildEvent event;
    std::uint64_t seq;
  };

  struct PathState {
    std::vector<FileObservation> versions;
    std::vector<Track> tracks;
    std::vector<Pending> pending;
    bool written = false;
  };

  struct Shard {
    std::mutex mu;
    std::unordered_map<std::string, PathState> paths;
    std::set<std::pair<std::string, Digest>> replay_seen;
  };

  static std::size_t shard_index(const std::string& path) {
    return std::hash<std::string>{}(path) % kShards;
  }

  void resolve_pending(PathState& st, const std::string& path, const Content& c) {
    for (auto& p : st.pending) {
      apply(st, path, p.event, c);
      if (resolved_) resolved_(p.seq, c);
    }
    st.pending.clear();
  }

  static void apply(PathState& st, const std::string& path, const BuildEvent& e, const Content& c) {
    const AccessMode mode = *e.mode;
    const bool writes = mode != AccessMode::r;
    // Unhashable contents compare equal to each other regardless of reason.
    if (st.versions.empty() || st.versions.back().digest != c.digest) {
      FileObservation obs;
      obs.path = path;
      obs.version = static_cast<std::uint32_t>(st.versions.size() + 1);
      obs.digest = c.digest;
      obs.reason = c.digest ? std::nullopt : c.reason;
      obs.first_pid = e.pid;
      obs.first_ts = e.ts;
      st.versions.push_back(std::move(obs));
      st.tracks.push_back(Track{mode, st.written});
    }
    FileObservation& obs = st.versions.back();
    Track& t = st.tracks.back();
    obs.last_pid = e.pid;
    obs.last_ts = e.ts;
    ++obs.event_count;
    obs.modes.read = obs.modes.read || mode != AccessMode::w;
    obs.modes.write = obs.modes.write || writes;
    if (writes) {
      t.has_write = true;
      t.read_after_write = false;
    } else if (t.has_write) {
      t.read_after_write = true;
    }
    st.written = st.written || writes;
  }

  Mode mode_;
  PathFilter filter_;
  FileHasher* hasher_;
  std::unique_ptr<FileHasher> owned_hasher_;
  std::vector<Shard> shards_;
  ResolvedFn resolved_;
  std::atomic<std::uint64_t> replay_hits_{0};
  std::atomic<std::uint64_t> replay_misses_{0};
};

}  // namespace bomtrace
