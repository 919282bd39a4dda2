#pragma once

#include <algorithm>
#include <deque>
#include <set>
#include <tuple>
#include <vector>

#include "bomtrace/events.hpp"
#include "bomtrace/hashing.hpp"
#include "bomtrace/merkle.hpp"
#include "bomtrace/path_filter.hpp"
#include "bomtrace/process_tree.hpp"
#include "bomtrace/sbom.hpp"

namespace bomtrace {

struct PipelineOptions {
  PathFilter filter;
  RedactionPolicy redaction = RedactionPolicy::defaults();
  bool verbatim_env = false;
  bool inputs_only = false;
  unsigned workers = 1;
};

struct PipelineResult {
  LogHeader header;
  std::vector<FileObservation> observations;
  ProvenanceTree tree;
  ProcessTree processes;
  BuildStats stats;
  SbomDocument document;
};

namespace detail {

inline int kind_rank(EventKind k) {
  switch (k) {
    case EventKind::fork: return 0;
    case EventKind::exec: return 1;
    case EventKind::open: return 2;
    case EventKind::exit: return 3;
    case EventKind::drop: return 4;
  }
  return 5;
}

}  // namespace detail

/// Total order used inside a run of equal timestamps, so that results do
/// not depend on how concurrent events happened to arrive.
inline bool canonical_less(const BuildEvent& a, const BuildEvent& b) {
  auto key = [](const BuildEvent& e) {
    return std::tie(e.ts, e.pid, e.ppid, e.comm, e.path, e.mode, e.sha256, e.argv, e.env, e.dropped);
  };
  if (a.ts != b.ts) return a.ts < b.ts;
  if (int ra = detail::kind_rank(a.kind), rb = detail::kind_rank(b.kind); ra != rb) return ra < rb;
  return key(a) < key(b);
}

/// Sorts each run of equal-ts events canonically; ts order is untouched.
inline void canonicalize(std::vector<BuildEvent>& events) {
  std::stable_sort(events.begin(), events.end(), canonical_less);
}

namespace detail {

struct EventCounts {
  std::uint64_t total = 0;
  std::uint64_t opens = 0;
  std::uint64_t dropped = 0;

  void add(const BuildEvent& e) {
    ++total;
    if (e.kind == EventKind::open) ++opens;
    if (e.dropped) dropped += *e.dropped;
  }
};

inline PipelineResult assemble(const LogHeader& header, const EventCounts& counts,
                               std::vector<FileObservation> observations, ProcessTree processes,
                               const PipelineOptions& opt) {
  PipelineResult r;
  r.header = header;
  const auto selected = select_observations(observations, opt.inputs_only);
  r.tree = ProvenanceTree::from_observations(selected);

  BuildStats& s = r.stats;
  s.total_events = counts.total;
  s.open_events = counts.opens;
  s.dropped_events = counts.dropped;
  std::set<std::string_view> paths;
  for (const auto& o : selected) {
    paths.insert(o.path);
    ++(o.hashable() ? s.hashable : s.unhashable);
    switch (o.classification) {
      case Classification::input: ++s.inputs; break;
      case Classification::output: ++s.outputs; break;
      case Classification::intermediate: ++s.intermediates; break;
    }
  }
  s.distinct_files = paths.size();
  s.processes = processes.records().size();
  s.orphan_processes = processes.orphan_count();
  s.orphan_observations = processes.orphan_attributed(selected);

  r.document = build_document(observations, r.tree, processes, s, {header.started, opt.inputs_only});
  r.observations = std::move(observations);
  r.processes = std::move(processes);
  return r;
}

}  // namespace detail

/// Runs the full pipeline over a replay source.
inline PipelineResult run_replay(EventSource& source, const PipelineOptions& opt = {}) {
  std::vector<BuildEvent> events;
  while (auto e = source.next()) events.push_back(std::move(*e));
  canonicalize(events);

  detail::EventCounts counts;
  ProcessTree processes(opt.redaction, opt.verbatim_env);
  for (const auto& e : events) {
    counts.add(e);
    processes.ingest(e);
  }
  ObservationStore store(ObservationStore::Mode::replay, opt.filter);
  store.observe_all(events, opt.workers);
  return detail::assemble(source.header(), counts, store.finalize(), std::move(processes), opt);
}

/// Consumes live events (in ts order), hashes the filesystem, and appends
/// every event to the log with its resolved digest. The log is written in
/// processing order, so replaying it reproduces the same document.
class LiveRecorder {
 public:
  LiveRecorder(LogWriter& log, PipelineOptions opt, FileHasher* hasher = nullptr)
      : log_(log),
        opt_(std::move(opt)),
        processes_(opt_.redaction, opt_.verbatim_env),
        store_(ObservationStore::Mode::live, opt_.filter, hasher) {
    store_.on_resolved([this](std::uint64_t seq, const Content& c) {
      Slot& slot = queue_[seq - base_seq_];
      slot.event.sha256 = c.digest;
      slot.resolved = true;
    });
  }

  void push(BuildEvent e, bool truncated = false) {
    if (!run_.empty() && run_.front().event.ts != e.ts) flush_run();
    run_.push_back({std::move(e), truncated});
  }

  /// Ends the stream: resolves pending writes and writes the summary line.
  PipelineResult finish(const LogHeader& header) {
    flush_run();
    auto observations = store_.finalize();
    flush_log();
    log_.summary();
    return detail::assemble(header, counts_, std::move(observations), std::move(processes_), opt_);
  }

 private:
  struct Incoming {
    BuildEvent event;
    bool truncated;
  };
  struct Slot {
    BuildEvent event;
    bool resolved;
  };

  void flush_run() {
    std::stable_sort(run_.begin(), run_.end(),
                     [](const Incoming& a, const Incoming& b) { return canonical_less(a.event, b.event); });
    for (auto& in : run_) process(std::move(in.event), in.truncated);
    run_.clear();
    flush_log();
  }

  void process(BuildEvent e, bool truncated) {
    if (e.env) e.env = redact(*e.env, opt_.redaction);
    counts_.add(e);
    processes_.ingest(e);
    if (truncated) processes_.mark_truncated(e.pid);
    const std::uint64_t seq = base_seq_ + queue_.size();
    queue_.push_back({e, e.kind != EventKind::open});
    if (e.kind == EventKind::open) {
      if (auto c = store_.observe(e, seq)) {
        queue_.back().event.sha256 = c->digest;
        queue_.back().resolved = true;
      }
    }
  }

  void flush_log() {
    while (!queue_.empty() && queue_.front().resolved) {
      log_.event(queue_.front().event);
      queue_.pop_front();
      ++base_seq_;
    }
  }

  LogWriter& log_;
  PipelineOptions opt_;
  ProcessTree processes_;
  ObservationStore store_;
  detail::EventCounts counts_;
  std::vector<Incoming> run_;
  std::deque<Slot> queue_;
  std::uint64_t base_seq_ = 0;
};

}  // namespace bomtrace
