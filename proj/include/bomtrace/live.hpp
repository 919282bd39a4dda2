#pragma once

// Live capture. A transport launches the root command and yields encoded
// RawKernelRecords; LiveSource decodes them into BuildEvents.
//
// Backends:
//   ebpf    consumes the ring buffer pinned by the kernel probe loader
//   ptrace  follows the process tree with ptrace(2); no kernel probes needed

#include <fcntl.h>
#include <linux/capability.h>
#include <signal.h>
#include <sys/epoll.h>
#include <sys/ptrace.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <sys/uio.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <deque>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "bomtrace/bpf.hpp"
#include "bomtrace/error.hpp"
#include "bomtrace/events.hpp"
#include "bomtrace/raw_record.hpp"

namespace bomtrace {

enum class LiveBackend { ebpf, ptrace };

inline constexpr std::string_view kDefaultPinDir = "/sys/fs/bpf/bomtrace";

struct LiveOptions {
  std::vector<std::string> command;
  LiveBackend backend = LiveBackend::ebpf;
  std::string pin_dir{kDefaultPinDir};
};

namespace live_detail {

inline std::uint64_t monotonic_ns() {
  timespec ts{};
  ::clock_gettime(CLOCK_MONOTONIC, &ts);
  return static_cast<std::uint64_t>(ts.tv_sec) * 1'000'000'000ull + static_cast<std::uint64_t>(ts.tv_nsec);
}

inline std::string now_rfc3339() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  ::gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::optional<std::string> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline std::vector<std::string> split_nul(const std::string& blob) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < blob.size()) {
    auto end = blob.find('\0', start);
    if (end == std::string::npos) end = blob.size();
    out.push_back(blob.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

inline std::string proc_path(pid_t pid, std::string_view leaf) {
  return "/proc/" + std::to_string(pid) + "/" + std::string(leaf);
}

inline std::string read_comm(pid_t pid) {
  auto s = read_file(proc_path(pid, "comm")).value_or("");
  while (!s.empty() && s.back() == '\n') s.pop_back();
  return s;
}

/// Value of a numeric "Key:\tN" line in /proc/<pid>/status.
inline std::optional<pid_t> status_field(pid_t pid, std::string_view key) {
  std::ifstream in(proc_path(pid, "status"));
  std::string line;
  while (std::getline(in, line)) {
    if (line.size() > key.size() && line.compare(0, key.size(), key) == 0 && line[key.size()] == ':')
      return static_cast<pid_t>(std::atol(line.c_str() + key.size() + 1));
  }
  return std::nullopt;
}

/// Shell-style exit status: the exit code, or 128 + signal number.
inline int exit_code_of(int wstatus) {
  if (WIFEXITED(wstatus)) return WEXITSTATUS(wstatus);
  if (WIFSIGNALED(wstatus)) return 128 + WTERMSIG(wstatus);
  return 1;
}

inline std::vector<char*> argv_of(std::vector<std::string>& command) {
  std::vector<char*> out;
  for (auto& s : command) out.push_back(s.data());
  out.push_back(nullptr);
  return out;
}

inline bool has_cap(const __user_cap_data_struct (&data)[2], int cap) {
  return (data[cap / 32].effective >> (cap % 32)) & 1u;
}

}  // namespace live_detail

/// True when the effective capability set allows loading and reading
/// kernel probes: CAP_SYS_ADMIN, or CAP_BPF together with CAP_PERFMON.
inline bool has_tracing_privilege() {
  __user_cap_header_struct hdr{_LINUX_CAPABILITY_VERSION_3, 0};
  __user_cap_data_struct data[2]{};
  if (::syscall(SYS_capget, &hdr, data) != 0) return false;
  constexpr int kCapPerfmon = 38;
  constexpr int kCapBpf = 39;
  return live_detail::has_cap(data, CAP_SYS_ADMIN) ||
         (live_detail::has_cap(data, kCapBpf) && live_detail::has_cap(data, kCapPerfmon));
}

/// Source of encoded records for one traced command.
class RecordTransport {
 public:
  virtual ~RecordTransport() = default;

  /// Next encoded record, or nullopt once the traced tree has exited.
  virtual std::optional<std::vector<std::uint8_t>> next_record() = 0;
  /// Exit status of the root command once it has been reaped.
  virtual std::optional<int> root_status() const = 0;
};

/// Follows the root command and its descendants with ptrace(2), turning
/// process lifecycle stops and successful open syscalls into records.
class PtraceTransport final : public RecordTransport {
 public:
  explicit PtraceTransport(std::vector<std::string> command) {
    if (command.empty()) throw Error("no command to trace");
    int gate[2];
    if (::pipe2(gate, O_CLOEXEC) != 0) throw Error("pipe: " + std::string(std::strerror(errno)));
    auto argv = live_detail::argv_of(command);
    pid_t pid = ::fork();
    if (pid < 0) throw Error("fork: " + std::string(std::strerror(errno)));
    if (pid == 0) {
      ::close(gate[0]);
      if (::ptrace(PTRACE_TRACEME, 0, nullptr, nullptr) != 0) {
        int err = errno;
        (void)!::write(gate[1], &err, sizeof err);
        ::_exit(126);
      }
      ::raise(SIGSTOP);
      ::execvp(argv[0], argv.data());
      ::_exit(127);
    }
    ::close(gate[1]);
    int st = 0;
    ::waitpid(pid, &st, __WALL);
    if (!WIFSTOPPED(st)) {
      int err = EPERM;
      (void)!::read(gate[0], &err, sizeof err);
      ::close(gate[0]);
      throw PermissionError("ptrace: cannot trace the root command: " + std::string(std::strerror(err)));
    }
    ::close(gate[0]);
    constexpr long kOptions = PTRACE_O_TRACESYSGOOD | PTRACE_O_TRACEFORK | PTRACE_O_TRACEVFORK |
                              PTRACE_O_TRACECLONE | PTRACE_O_TRACEEXEC | PTRACE_O_EXITKILL;
    if (::ptrace(PTRACE_SETOPTIONS, pid, nullptr, reinterpret_cast<void*>(kOptions)) != 0) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &st, __WALL);
      throw PermissionError("ptrace: cannot set options: " + std::string(std::strerror(errno)));
    }
    root_ = pid;
    tasks_[pid].tgid = pid;
    procs_[pid] = Proc{static_cast<std::uint32_t>(::getpid()), live_detail::read_comm(pid)};
    resume(pid, 0);
  }

  ~PtraceTransport() override {
    for (auto& [tid, task] : tasks_) ::kill(tid, SIGKILL);
    int st;
    while (!tasks_.empty()) {
      pid_t tid = ::waitpid(-1, &st, __WALL);
      if (tid < 0 && errno != EINTR) break;
      if (tid > 0 && (WIFEXITED(st) || WIFSIGNALED(st))) tasks_.erase(tid);
    }
  }

  std::optional<std::vector<std::uint8_t>> next_record() override {
    while (queue_.empty() && !tasks_.empty()) step();
    if (queue_.empty()) return std::nullopt;
    auto r = std::move(queue_.front());
    queue_.pop_front();
    return r;
  }

  std::optional<int> root_status() const override { return root_status_; }

 private:
  struct Task {
    pid_t tgid = 0;
    bool awaiting_initial_stop = false;
    long nr = -1;
    std::uint32_t open_flags = 0;
    std::string pre_exec_comm;
  };
  struct Proc {
    std::uint32_t ppid = 0;
    std::string comm;
  };

  static bool is_open_syscall(long nr) {
#ifdef SYS_open
    if (nr == SYS_open) return true;
#endif
#ifdef SYS_creat
    if (nr == SYS_creat) return true;
#endif
    return nr == SYS_openat || nr == kSysOpenat2;
  }

  static bool is_exec_syscall(long nr) { return nr == SYS_execve || nr == SYS_execveat; }

  static constexpr long kSysOpenat2 = 437;

  void resume(pid_t tid, int sig) {
    ::ptrace(PTRACE_SYSCALL, tid, nullptr, reinterpret_cast<void*>(static_cast<long>(sig)));
  }

  void emit(RawKernelRecord r) {
    r.ts = live_detail::monotonic_ns();
    queue_.push_back(encode_raw_record(r));
  }

  void step() {
    int st = 0;
    pid_t tid = ::waitpid(-1, &st, __WALL);
    if (tid < 0) {
      if (errno == EINTR) return;
      tasks_.clear();  // ECHILD: nothing left to wait for
      return;
    }
    if (WIFEXITED(st) || WIFSIGNALED(st)) {
      on_task_gone(tid, st);
      return;
    }
    if (!WIFSTOPPED(st)) return;

    bool fresh = !tasks_.contains(tid);
    if (fresh) register_task(tid, 0, false);
    Task& task = tasks_[tid];
    const int sig = WSTOPSIG(st);
    const int event = (st >> 16) & 0xff;

    if (sig == (SIGTRAP | 0x80)) {
      on_syscall_stop(tid, task);
      resume(tid, 0);
      return;
    }
    if (sig == SIGTRAP && event != 0) {
      unsigned long msg = 0;
      ::ptrace(PTRACE_GETEVENTMSG, tid, nullptr, &msg);
      if (event == PTRACE_EVENT_FORK || event == PTRACE_EVENT_VFORK || event == PTRACE_EVENT_CLONE) {
        register_task(static_cast<pid_t>(msg), tid, true);
      } else if (event == PTRACE_EVENT_EXEC) {
        on_exec(tid, static_cast<pid_t>(msg));
      }
      resume(tid, 0);
      return;
    }
    if (sig == SIGSTOP && (fresh || task.awaiting_initial_stop)) {
      task.awaiting_initial_stop = false;
      resume(tid, 0);
      return;
    }
    siginfo_t si{};
    if (::ptrace(PTRACE_GETSIGINFO, tid, nullptr, &si) != 0 && errno == EINVAL) {
      resume(tid, 0);  // group-stop
      return;
    }
    resume(tid, sig);
  }

  // First sight of a task, either through its creator's event or through
  // its own initial stop (whichever waitpid reported first).
  void register_task(pid_t tid, pid_t creator, bool from_event) {
    if (auto it = tasks_.find(tid); it != tasks_.end()) return;
    Task task;
    task.awaiting_initial_stop = from_event;
    task.tgid = live_detail::status_field(tid, "Tgid").value_or(tid);
    if (task.tgid == tid) {
      pid_t parent = live_detail::status_field(tid, "PPid").value_or(0);
      if (creator != 0) parent = tasks_.contains(creator) ? tasks_[creator].tgid : creator;
      Proc proc;
      proc.ppid = static_cast<std::uint32_t>(parent);
      auto pit = procs_.find(parent);
      proc.comm = pit != procs_.end() ? pit->second.comm : live_detail::read_comm(tid);
      procs_[tid] = proc;
      RawKernelRecord r;
      r.kind = RawKind::fork;
      r.pid = static_cast<std::uint32_t>(tid);
      r.ppid = proc.ppid;
      r.comm = proc.comm;
      emit(std::move(r));
    }
    tasks_[tid] = std::move(task);
  }

  void on_syscall_stop(pid_t tid, Task& task) {
    __ptrace_syscall_info info{};
    if (::ptrace(PTRACE_GET_SYSCALL_INFO, tid, reinterpret_cast<void*>(sizeof info), &info) <= 0) return;
    if (info.op == PTRACE_SYSCALL_INFO_ENTRY) {
      task.nr = static_cast<long>(info.entry.nr);
      task.open_flags = entry_open_flags(tid, task.nr, info.entry.args);
      if (is_exec_syscall(task.nr)) task.pre_exec_comm = live_detail::read_comm(tid);
      return;
    }
    if (info.op != PTRACE_SYSCALL_INFO_EXIT) return;
    const long nr = std::exchange(task.nr, -1);
    if (!is_open_syscall(nr) || info.exit.is_error || info.exit.rval < 0) return;

    std::string link(kRawMaxPath, '\0');
    auto fd_link = live_detail::proc_path(tid, "fd/" + std::to_string(info.exit.rval));
    ssize_t n = ::readlink(fd_link.c_str(), link.data(), link.size());
    if (n <= 0 || link[0] != '/') return;
    link.resize(static_cast<std::size_t>(n));
    constexpr std::string_view kDeleted = " (deleted)";
    if (link.ends_with(kDeleted)) link.resize(link.size() - kDeleted.size());

    const Proc& proc = procs_[task.tgid];
    RawKernelRecord r;
    r.kind = RawKind::open;
    r.pid = static_cast<std::uint32_t>(task.tgid);
    r.ppid = proc.ppid;
    r.comm = proc.comm;
    r.open_flags = task.open_flags;
    r.path = std::move(link);
    emit(std::move(r));
  }

  static std::uint32_t entry_open_flags(pid_t tid, long nr, const std::uint64_t* args) {
#ifdef SYS_open
    if (nr == SYS_open) return static_cast<std::uint32_t>(args[1]);
#endif
#ifdef SYS_creat
    if (nr == SYS_creat) return O_CREAT | O_WRONLY | O_TRUNC;
#endif
    if (nr == SYS_openat) return static_cast<std::uint32_t>(args[2]);
    if (nr == kSysOpenat2) {
      std::uint64_t flags = 0;  // first field of struct open_how
      iovec local{&flags, sizeof flags};
      iovec remote{reinterpret_cast<void*>(args[2]), sizeof flags};
      ::process_vm_readv(tid, &local, 1, &remote, 1, 0);
      return static_cast<std::uint32_t>(flags);
    }
    return 0;
  }

  void on_exec(pid_t tid, pid_t former_tid) {
    std::string comm;
    if (auto it = tasks_.find(former_tid); it != tasks_.end()) {
      comm = it->second.pre_exec_comm;
      if (former_tid != tid) {
        Task moved = std::move(it->second);
        tasks_.erase(it);
        moved.tgid = tid;
        tasks_[tid] = std::move(moved);
      }
    }
    Proc& proc = procs_[tid];
    if (comm.empty()) comm = proc.comm;

    RawKernelRecord r;
    r.kind = RawKind::exec;
    r.pid = static_cast<std::uint32_t>(tid);
    r.ppid = proc.ppid;
    r.comm = comm;
    r.argv = live_detail::split_nul(live_detail::read_file(live_detail::proc_path(tid, "cmdline")).value_or(""));
    r.env = live_detail::split_nul(live_detail::read_file(live_detail::proc_path(tid, "environ")).value_or(""));
    emit(std::move(r));
    proc.comm = live_detail::read_comm(tid);
  }

  void on_task_gone(pid_t tid, int st) {
    if (tid == root_) root_status_ = live_detail::exit_code_of(st);
    auto it = tasks_.find(tid);
    if (it == tasks_.end()) return;
    const pid_t tgid = it->second.tgid;
    tasks_.erase(it);
    if (tid != tgid) return;
    auto pit = procs_.find(tgid);
    RawKernelRecord r;
    r.kind = RawKind::exit;
    r.pid = static_cast<std::uint32_t>(tgid);
    if (pit != procs_.end()) {
      r.ppid = pit->second.ppid;
      r.comm = pit->second.comm;
      procs_.erase(pit);
    }
    emit(std::move(r));
  }

  pid_t root_ = 0;
  std::optional<int> root_status_;
  std::unordered_map<pid_t, Task> tasks_;
  std::unordered_map<pid_t, Proc> procs_;
  std::deque<std::vector<std::uint8_t>> queue_;
};

/// Reads records from the ring buffer pinned by the kernel probe loader.
/// Expected pins under `pin_dir`: "events" (ringbuf), "traced_pids"
/// (hash, u32 pid -> u8), "drops" (per-CPU array, u64 at key 0).
class EbpfTransport final : public RecordTransport {
 public:
  explicit EbpfTransport(const LiveOptions& opt) {
    if (opt.command.empty()) throw Error("no command to trace");
    if (!has_tracing_privilege())
      throw PermissionError("live tracing requires CAP_BPF and CAP_PERFMON (or CAP_SYS_ADMIN)");
    struct stat sb{};
    if (::stat("/sys/kernel/btf/vmlinux", &sb) != 0)
      throw UnsupportedError("kernel lacks BTF type information (/sys/kernel/btf/vmlinux)");
    events_ = bpf::obj_get(opt.pin_dir + "/events");
    pids_ = bpf::obj_get(opt.pin_dir + "/traced_pids");
    drops_ = bpf::obj_get(opt.pin_dir + "/drops");
    ring_ = std::make_unique<bpf::RingBufferConsumer>(events_.get());
    epoll_ = bpf::Fd(::epoll_create1(EPOLL_CLOEXEC));
    epoll_event ev{};
    ev.events = EPOLLIN;
    ::epoll_ctl(epoll_.get(), EPOLL_CTL_ADD, events_.get(), &ev);
    drops_seen_ = bpf::percpu_sum(drops_.get(), 0);
    launch(opt.command);
  }

  ~EbpfTransport() override {
    if (!root_status_ && root_ > 0) {
      ::kill(root_, SIGKILL);
      int st;
      ::waitpid(root_, &st, 0);
    }
  }

  std::optional<std::vector<std::uint8_t>> next_record() override {
    for (;;) {
      if (!queue_.empty()) {
        auto r = std::move(queue_.front());
        queue_.pop_front();
        return r;
      }
      drain();
      if (!queue_.empty()) continue;
      reap();
      if (root_status_ && !bpf::map_has_keys(pids_.get(), sizeof(std::uint32_t))) {
        drain();
        if (queue_.empty()) return std::nullopt;
        continue;
      }
      epoll_event ev{};
      ::epoll_wait(epoll_.get(), &ev, 1, 100);
    }
  }

  std::optional<int> root_status() const override { return root_status_; }

 private:
  void launch(std::vector<std::string> command) {
    int gate[2];
    if (::pipe2(gate, O_CLOEXEC) != 0) throw Error("pipe: " + std::string(std::strerror(errno)));
    auto argv = live_detail::argv_of(command);
    pid_t pid = ::fork();
    if (pid < 0) throw Error("fork: " + std::string(std::strerror(errno)));
    if (pid == 0) {
      ::close(gate[1]);
      char go;
      if (::read(gate[0], &go, 1) != 1) ::_exit(126);
      ::execvp(argv[0], argv.data());
      ::_exit(127);
    }
    ::close(gate[0]);
    root_ = pid;
    std::uint32_t key = static_cast<std::uint32_t>(pid);
    std::uint8_t one = 1;
    if (!bpf::map_update(pids_.get(), &key, &one)) {
      int err = errno;
      ::close(gate[1]);
      int st;
      ::waitpid(pid, &st, 0);
      root_status_ = live_detail::exit_code_of(st);
      if (err == EPERM || err == EACCES) throw PermissionError("bpf: cannot seed traced pid map");
      throw UnsupportedError("bpf: cannot seed traced pid map: " + bpf::errno_text(err));
    }
    char go = 1;
    (void)!::write(gate[1], &go, 1);
    ::close(gate[1]);
  }

  void drain() {
    ring_->consume([&](std::span<const std::uint8_t> sample) { queue_.emplace_back(sample.begin(), sample.end()); });
    const std::uint64_t total = bpf::percpu_sum(drops_.get(), 0);
    if (total > drops_seen_) {
      RawKernelRecord r;
      r.kind = RawKind::drop;
      r.ts = live_detail::monotonic_ns();
      r.drop_count = total - drops_seen_;
      drops_seen_ = total;
      queue_.push_back(encode_raw_record(r));
    }
  }

  void reap() {
    if (root_status_) return;
    int st = 0;
    if (::waitpid(root_, &st, WNOHANG) == root_) root_status_ = live_detail::exit_code_of(st);
  }

  bpf::Fd events_, pids_, drops_, epoll_;
  std::unique_ptr<bpf::RingBufferConsumer> ring_;
  std::uint64_t drops_seen_ = 0;
  pid_t root_ = 0;
  std::optional<int> root_status_;
  std::deque<std::vector<std::uint8_t>> queue_;
};

/// Live event source. Record timestamps (CLOCK_MONOTONIC) are rebased to
/// the start of the trace and clamped so the stream never goes backwards.
class LiveSource final : public EventSource {
 public:
  explicit LiveSource(const LiveOptions& opt) : base_ns_(live_detail::monotonic_ns()) {
    header_ = {live_detail::now_rfc3339(), std::string(kToolName) + "/" + std::string(kToolVersion)};
    if (opt.backend == LiveBackend::ptrace)
      transport_ = std::make_unique<PtraceTransport>(opt.command);
    else
      transport_ = std::make_unique<EbpfTransport>(opt);
  }

  LiveSource(std::unique_ptr<RecordTransport> transport, std::uint64_t base_ns, LogHeader header)
      : transport_(std::move(transport)), base_ns_(base_ns), header_(std::move(header)) {}

  std::optional<BuildEvent> next() override {
    while (auto bytes = transport_->next_record()) {
      RawKernelRecord raw = decode_raw_record(*bytes);
      auto e = to_build_event(raw);
      if (!e) {
        ++skipped_;
        continue;
      }
      e->ts = std::max(last_ts_, e->ts >= base_ns_ ? e->ts - base_ns_ : 0);
      last_ts_ = e->ts;
      last_truncated_ = raw.truncated;
      if (raw.truncated) ++truncated_[static_cast<std::size_t>(e->kind)];
      return e;
    }
    return std::nullopt;
  }

  const LogHeader& header() const override { return header_; }

  /// Whether the record behind the last returned event was truncated.
  bool last_truncated() const { return last_truncated_; }
  /// Records that had no event mapping (e.g. relative open paths).
  std::uint64_t skipped() const { return skipped_; }
  std::optional<int> root_status() const { return transport_->root_status(); }
  /// Truncated records seen so far of the given kind. A truncated fork
  /// means the kernel's traced-pid set was full and descendants may be
  /// missing from the capture.
  std::uint64_t truncated(EventKind kind) const { return truncated_[static_cast<std::size_t>(kind)]; }

 private:
  std::unique_ptr<RecordTransport> transport_;
  std::uint64_t base_ns_;
  LogHeader header_;
  std::uint64_t last_ts_ = 0;
  bool last_truncated_ = false;
  std::uint64_t skipped_ = 0;
  std::array<std::uint64_t, 5> truncated_{};
};

}  // namespace bomtrace
