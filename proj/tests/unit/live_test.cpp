#include <gtest/gtest.h>

#include <linux/bpf.h>
#include <sys/prctl.h>

#include <set>
#include <sstream>

#include "bomtrace/live.hpp"
#include "bomtrace/pipeline.hpp"
#include "test_support.hpp"

using namespace bomtrace;

namespace {

class FakeTransport : public RecordTransport {
 public:
  explicit FakeTransport(std::vector<RawKernelRecord> records, int status = 0)
      : records_(std::move(records)), status_(status) {}

  std::optional<std::vector<std::uint8_t>> next_record() override {
    if (i_ == records_.size()) {
      done_ = true;
      return std::nullopt;
    }
    return encode_raw_record(records_[i_++]);
  }
  std::optional<int> root_status() const override {
    return done_ ? std::optional<int>(status_) : std::nullopt;
  }

 private:
  std::vector<RawKernelRecord> records_;
  std::size_t i_ = 0;
  int status_;
  bool done_ = false;
};

// Kernel-side scope model: a bounded traced-pid set seeded with the root.
class PidSetModel {
 public:
  PidSetModel(std::size_t capacity, std::uint32_t root) : capacity_(capacity) { pids_.insert(root); }

  std::optional<RawKernelRecord> fork(std::uint64_t ts, std::uint32_t parent, std::uint32_t child) {
    if (!pids_.contains(parent)) return std::nullopt;
    RawKernelRecord r;
    r.kind = RawKind::fork, r.ts = ts, r.pid = child, r.ppid = parent, r.comm = "sh";
    if (pids_.size() < capacity_) pids_.insert(child);
    else r.truncated = true;
    return r;
  }

 private:
  std::size_t capacity_;
  std::set<std::uint32_t> pids_;
};

RawKernelRecord raw(RawKind kind, std::uint64_t ts, std::uint32_t pid) {
  RawKernelRecord r;
  r.kind = kind, r.ts = ts, r.pid = pid, r.ppid = 1, r.comm = "cc";
  return r;
}

LiveSource fake_source(std::vector<RawKernelRecord> records, std::uint64_t base = 1000) {
  return LiveSource(std::make_unique<FakeTransport>(std::move(records)), base, {"2024-09-17T10:00:00Z", "bomtrace/1.0.0"});
}

// Runs `fn` in a child without tracing privilege; returns the child's exit code.
template <typename Fn>
int run_unprivileged(Fn fn) {
  pid_t pid = ::fork();
  if (pid == 0) {
    if (::geteuid() == 0 && ::setuid(65534) != 0) ::_exit(90);
    ::_exit(fn());
  }
  int st = 0;
  ::waitpid(pid, &st, 0);
  return WIFEXITED(st) ? WEXITSTATUS(st) : 99;
}

}  // namespace

TEST(LiveSource, DecodesRebasesAndClamps) {
  auto open = raw(RawKind::open, 1500, 10);
  open.path = "/src/a.c";
  open.open_flags = O_RDONLY;
  auto rel = raw(RawKind::open, 1600, 10);
  rel.path = "a.c";
  auto late = raw(RawKind::exit, 1400, 10);  // out of order: clamped to the previous ts
  auto src = fake_source({raw(RawKind::fork, 1200, 10), open, rel, late});

  auto e1 = src.next();
  ASSERT_TRUE(e1);
  EXPECT_EQ(e1->kind, EventKind::fork);
  EXPECT_EQ(e1->ts, 200u);
  auto e2 = src.next();
  ASSERT_TRUE(e2);
  EXPECT_EQ(*e2->path, "/src/a.c");
  EXPECT_EQ(e2->mode, AccessMode::r);
  EXPECT_FALSE(e2->sha256);
  auto e3 = src.next();
  ASSERT_TRUE(e3);
  EXPECT_EQ(e3->kind, EventKind::exit);
  EXPECT_EQ(e3->ts, 500u);
  EXPECT_FALSE(src.next());
  EXPECT_EQ(src.skipped(), 1u);
  EXPECT_EQ(src.root_status(), 0);
}

TEST(LiveSource, ForkStormBeyondPidSetCapacityIsFlagged) {
  PidSetModel kernel(4, 100);
  std::vector<RawKernelRecord> records;
  for (std::uint32_t i = 0; i < 5; ++i)
    if (auto r = kernel.fork(10 + i, 100, 101 + i)) records.push_back(*r);
  ASSERT_EQ(records.size(), 5u);
  auto src = fake_source(records, 0);
  std::vector<bool> flags;
  while (src.next()) flags.push_back(src.last_truncated());
  EXPECT_EQ(flags, (std::vector<bool>{false, false, false, true, true}));
  EXPECT_EQ(src.truncated(EventKind::fork), 2u);
  EXPECT_EQ(src.truncated(EventKind::exec), 0u);
}

TEST(LiveSource, TruncatedExecIsCountedAndMarked) {
  auto exec = raw(RawKind::exec, 5, 10);
  exec.argv = {"cc"};
  for (int i = 0; i < 40; ++i) exec.env.push_back("V" + std::to_string(i) + "=" + std::string(1000, 'x'));
  auto src = fake_source({exec}, 0);

  std::ostringstream log;
  LogWriter w(log);
  w.header(src.header());
  LiveRecorder rec(w, PipelineOptions{});
  while (auto e = src.next()) rec.push(*e, src.last_truncated());
  auto result = rec.finish(src.header());
  EXPECT_EQ(src.truncated(EventKind::exec), 1u);
  ASSERT_EQ(result.processes.records().size(), 1u);
  EXPECT_TRUE(result.processes.records()[0].truncated);
  EXPECT_LT(result.processes.records()[0].env.size(), 40u);
}

TEST(LiveSource, DropRecordsBecomeDropEvents) {
  auto drop = raw(RawKind::drop, 7, 0);
  drop.drop_count = 3;
  auto src = fake_source({drop}, 0);
  auto e = src.next();
  ASSERT_TRUE(e);
  EXPECT_EQ(e->kind, EventKind::drop);
  EXPECT_EQ(e->dropped, 3u);
}

TEST(PtraceTransport, TracesAFileWritingCommand) {
  test::TempDir dir;
  const std::string in = dir.file("input.txt"), out = dir.file("output.txt");
  test::write_file(in, "provenance\n");
  LiveOptions opt;
  opt.backend = LiveBackend::ptrace;
  opt.command = {"/bin/sh", "-c", "cat " + in + " > " + out + "; exit 3"};
  LiveSource src(opt);

  std::ostringstream log;
  LogWriter w(log);
  w.header(src.header());
  LiveRecorder rec(w, PipelineOptions{});
  std::vector<BuildEvent> seen;
  std::uint64_t last_ts = 0;
  while (auto e = src.next()) {
    EXPECT_GE(e->ts, last_ts);
    last_ts = e->ts;
    seen.push_back(*e);
    rec.push(*e, src.last_truncated());
  }
  auto result = rec.finish(src.header());
  EXPECT_EQ(src.root_status(), 3);

  bool forked = false, execed_cat = false, exited = false;
  for (const auto& e : seen) {
    forked = forked || e.kind == EventKind::fork;
    execed_cat = execed_cat || (e.kind == EventKind::exec && e.argv && !e.argv->empty() && e.argv->front() == "cat");
    exited = exited || e.kind == EventKind::exit;
  }
  EXPECT_TRUE(forked);
  EXPECT_TRUE(execed_cat);
  EXPECT_TRUE(exited);

  std::optional<Classification> in_class, out_class;
  for (const auto& o : result.observations) {
    if (o.path == in) {
      EXPECT_EQ(o.digest->hex(), test::openssl_sha256_hex("provenance\n"));
      in_class = o.classification;
    }
    if (o.path == out) {
      EXPECT_EQ(o.digest->hex(), test::openssl_sha256_hex("provenance\n"));
      out_class = o.classification;
    }
  }
  EXPECT_EQ(in_class, Classification::input);
  EXPECT_EQ(out_class, Classification::output);

  std::istringstream replay_in(log.str());
  ReplaySource replay(replay_in);
  EXPECT_EQ(emit(run_replay(replay).document), emit(result.document));
}

TEST(PtraceTransport, MissingCommandFails) {
  LiveOptions opt;
  opt.backend = LiveBackend::ptrace;
  opt.command = {"/nonexistent/bomtrace-no-such-binary"};
  try {
    LiveSource src(opt);
    while (src.next()) {
    }
    EXPECT_EQ(src.root_status(), 127);
  } catch (const Error&) {
    SUCCEED();
  }
}

TEST(EbpfTransport, UnprivilegedCallerGetsPermissionError) {
  int code = run_unprivileged([] {
    if (has_tracing_privilege()) return 10;
    try {
      LiveOptions opt;
      opt.command = {"true"};
      EbpfTransport t(opt);
      return 11;
    } catch (const PermissionError&) {
      return 0;
    } catch (...) {
      return 12;
    }
  });
  EXPECT_EQ(code, 0);
}

TEST(EbpfTransport, MissingPinsAreUnsupported) {
  if (!has_tracing_privilege()) GTEST_SKIP() << "needs tracing privilege";
  struct stat sb {};
  if (::stat("/sys/kernel/btf/vmlinux", &sb) != 0) GTEST_SKIP() << "kernel without BTF";
  LiveOptions opt;
  opt.command = {"true"};
  opt.pin_dir = "/sys/fs/bpf/bomtrace-test-does-not-exist";
  EXPECT_THROW(EbpfTransport t(opt), UnsupportedError);
}

namespace {

// Loads a socket-filter program that writes one 8-byte sample into the ring
// buffer `map_fd` per test run.
bpf::Fd load_ringbuf_writer(int map_fd, std::uint64_t payload) {
  bpf_insn insns[] = {
      // *(u64 *)(r10 - 8) = payload (two 32-bit stores)
      {BPF_ST | BPF_MEM | BPF_W, BPF_REG_10, 0, -8, static_cast<std::int32_t>(payload)},
      {BPF_ST | BPF_MEM | BPF_W, BPF_REG_10, 0, -4, static_cast<std::int32_t>(payload >> 32)},
      // r1 = map
      {BPF_LD | BPF_DW | BPF_IMM, BPF_REG_1, BPF_PSEUDO_MAP_FD, 0, map_fd},
      {0, 0, 0, 0, 0},
      // r2 = r10 - 8
      {BPF_ALU64 | BPF_MOV | BPF_X, BPF_REG_2, BPF_REG_10, 0, 0},
      {BPF_ALU64 | BPF_ADD | BPF_K, BPF_REG_2, 0, 0, -8},
      {BPF_ALU64 | BPF_MOV | BPF_K, BPF_REG_3, 0, 0, 8},
      {BPF_ALU64 | BPF_MOV | BPF_K, BPF_REG_4, 0, 0, 0},
      {BPF_JMP | BPF_CALL, 0, 0, 0, BPF_FUNC_ringbuf_output},
      {BPF_ALU64 | BPF_MOV | BPF_K, BPF_REG_0, 0, 0, 0},
      {BPF_JMP | BPF_EXIT, 0, 0, 0, 0},
  };
  static const char license[] = "GPL";
  bpf_attr attr{};
  attr.prog_type = BPF_PROG_TYPE_SOCKET_FILTER;
  attr.insns = reinterpret_cast<std::uint64_t>(insns);
  attr.insn_cnt = sizeof(insns) / sizeof(insns[0]);
  attr.license = reinterpret_cast<std::uint64_t>(license);
  long fd = bpf::sys_bpf(BPF_PROG_LOAD, attr);
  return bpf::Fd(static_cast<int>(fd));
}

bool run_program(int prog_fd) {
  std::uint8_t packet[64] = {};
  bpf_attr attr{};
  attr.test.prog_fd = static_cast<std::uint32_t>(prog_fd);
  attr.test.data_in = reinterpret_cast<std::uint64_t>(packet);
  attr.test.data_size_in = sizeof(packet);
  attr.test.repeat = 1;
  return bpf::sys_bpf(BPF_PROG_TEST_RUN, attr) == 0;
}

}  // namespace

TEST(RingBufferConsumer, ReadsSamplesWrittenByAProgram) {
  if (!has_tracing_privilege()) GTEST_SKIP() << "needs tracing privilege";
  bpf::Fd map;
  try {
    map = bpf::map_create(BPF_MAP_TYPE_RINGBUF, 0, 0, 4096);
  } catch (const Error& e) {
    GTEST_SKIP() << e.what();
  }
  auto prog = load_ringbuf_writer(map.get(), 0x1122334455667788ull);
  if (!prog) GTEST_SKIP() << "cannot load BPF program: " << std::strerror(errno);
  if (!run_program(prog.get())) GTEST_SKIP() << "BPF_PROG_TEST_RUN unavailable: " << std::strerror(errno);

  bpf::RingBufferConsumer ring(map.get());
  std::vector<std::vector<std::uint8_t>> samples;
  auto collect = [&](std::span<const std::uint8_t> s) { samples.emplace_back(s.begin(), s.end()); };
  EXPECT_EQ(ring.consume(collect), 1u);
  EXPECT_EQ(ring.consume(collect), 0u);
  // Enough samples to wrap the 4 KiB ring several times (16 bytes each).
  for (int round = 0; round < 4; ++round) {
    for (int i = 0; i < 200; ++i) ASSERT_TRUE(run_program(prog.get()));
    EXPECT_EQ(ring.consume(collect), 200u);
  }
  ASSERT_EQ(samples.size(), 801u);
  for (const auto& s : samples) {
    ASSERT_EQ(s.size(), 8u);
    EXPECT_EQ(s[0], 0x88);
    EXPECT_EQ(s[7], 0x11);
  }
}

TEST(Bpf, RingBufferConsumerRejectsOtherMapTypes) {
  if (!has_tracing_privilege()) GTEST_SKIP() << "needs tracing privilege";
  bpf::Fd map;
  try {
    map = bpf::map_create(BPF_MAP_TYPE_HASH, 4, 1, 4);
  } catch (const Error& e) {
    GTEST_SKIP() << e.what();
  }
  EXPECT_THROW(bpf::RingBufferConsumer r(map.get()), Error);
  std::uint32_t key = 7;
  std::uint8_t one = 1;
  EXPECT_FALSE(bpf::map_has_keys(map.get(), 4));
  ASSERT_TRUE(bpf::map_update(map.get(), &key, &one));
  EXPECT_TRUE(bpf::map_has_keys(map.get(), 4));
}

TEST(Bpf, PossibleCpusIsPositive) { EXPECT_GE(bpf::possible_cpus(), 1u); }
