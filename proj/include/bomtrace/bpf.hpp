#pragma once

// Minimal bpf(2) wrappers and a BPF ring buffer consumer. Only what the
// live source needs to talk to maps pinned by the kernel probe loader.

#include <linux/bpf.h>
#include <sys/mman.h>
#include <sys/syscall.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "bomtrace/error.hpp"

namespace bomtrace::bpf {

inline long sys_bpf(int cmd, bpf_attr& attr) {
  return ::syscall(__NR_bpf, cmd, &attr, sizeof(attr));
}

/// Owning file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline std::string errno_text(int err) { return std::strerror(err); }

/// Opens a pinned object. Throws PermissionError on EPERM/EACCES and
/// UnsupportedError when the pin does not exist.
inline Fd obj_get(const std::string& path) {
  bpf_attr attr{};
  attr.pathname = reinterpret_cast<std::uint64_t>(path.c_str());
  long fd = sys_bpf(BPF_OBJ_GET, attr);
  if (fd < 0) {
    int err = errno;
    if (err == EPERM || err == EACCES) throw PermissionError("bpf: cannot open " + path + ": " + errno_text(err));
    throw UnsupportedError("bpf: cannot open pinned map " + path + ": " + errno_text(err));
  }
  return Fd(static_cast<int>(fd));
}

inline Fd map_create(bpf_map_type type, std::uint32_t key_size, std::uint32_t value_size,
                     std::uint32_t max_entries) {
  bpf_attr attr{};
  attr.map_type = type;
  attr.key_size = key_size;
  attr.value_size = value_size;
  attr.max_entries = max_entries;
  long fd = sys_bpf(BPF_MAP_CREATE, attr);
  if (fd < 0) throw Error("bpf: map create failed: " + errno_text(errno));
  return Fd(static_cast<int>(fd));
}

inline bool map_update(int map_fd, const void* key, const void* value, std::uint64_t flags = BPF_ANY) {
  bpf_attr attr{};
  attr.map_fd = static_cast<std::uint32_t>(map_fd);
  attr.key = reinterpret_cast<std::uint64_t>(key);
  attr.value = reinterpret_cast<std::uint64_t>(value);
  attr.flags = flags;
  return sys_bpf(BPF_MAP_UPDATE_ELEM, attr) == 0;
}

inline bool map_lookup(int map_fd, const void* key, void* value) {
  bpf_attr attr{};
  attr.map_fd = static_cast<std::uint32_t>(map_fd);
  attr.key = reinterpret_cast<std::uint64_t>(key);
  attr.value = reinterpret_cast<std::uint64_t>(value);
  return sys_bpf(BPF_MAP_LOOKUP_ELEM, attr) == 0;
}

/// True when the map holds at least one key.
inline bool map_has_keys(int map_fd, std::uint32_t key_size) {
  std::vector<std::uint8_t> next(key_size);
  bpf_attr attr{};
  attr.map_fd = static_cast<std::uint32_t>(map_fd);
  attr.key = 0;
  attr.next_key = reinterpret_cast<std::uint64_t>(next.data());
  return sys_bpf(BPF_MAP_GET_NEXT_KEY, attr) == 0;
}

inline bpf_map_info map_info(int map_fd) {
  bpf_map_info info{};
  bpf_attr attr{};
  attr.info.bpf_fd = static_cast<std::uint32_t>(map_fd);
  attr.info.info_len = sizeof(info);
  attr.info.info = reinterpret_cast<std::uint64_t>(&info);
  if (sys_bpf(BPF_OBJ_GET_INFO_BY_FD, attr) != 0) throw Error("bpf: map info failed: " + errno_text(errno));
  return info;
}

/// Number of possible CPUs, as sized by per-CPU maps ("0-3,5" syntax).
inline unsigned possible_cpus() {
  std::ifstream in("/sys/devices/system/cpu/possible");
  std::string spec;
  if (!(in >> spec)) return static_cast<unsigned>(sysconf(_SC_NPROCESSORS_CONF));
  unsigned highest = 0;
  std::size_t pos = 0;
  while (pos < spec.size()) {
    std::size_t comma = spec.find(',', pos);
    std::string part = spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    auto dash = part.find('-');
    unsigned hi = static_cast<unsigned>(std::stoul(dash == std::string::npos ? part : part.substr(dash + 1)));
    highest = std::max(highest, hi + 1);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return highest;
}

/// Sum of a per-CPU u64 counter at `key`.
inline std::uint64_t percpu_sum(int map_fd, std::uint32_t key) {
  std::vector<std::uint64_t> values(possible_cpus());
  if (!map_lookup(map_fd, &key, values.data())) return 0;
  std::uint64_t total = 0;
  for (auto v : values) total += v;
  return total;
}

/// Userspace side of a BPF_MAP_TYPE_RINGBUF map, read through mmap.
class RingBufferConsumer {
 public:
  explicit RingBufferConsumer(int map_fd) : map_fd_(map_fd) {
    const auto info = map_info(map_fd);
    if (info.type != BPF_MAP_TYPE_RINGBUF) throw Error("bpf: map is not a ring buffer");
    page_ = static_cast<std::size_t>(sysconf(_SC_PAGESIZE));
    mask_ = info.max_entries - 1;
    consumer_ = ::mmap(nullptr, page_, PROT_READ | PROT_WRITE, MAP_SHARED, map_fd, 0);
    if (consumer_ == MAP_FAILED) throw Error("bpf: mmap consumer page: " + errno_text(errno));
    producer_len_ = page_ + 2 * std::size_t{info.max_entries};
    producer_ = ::mmap(nullptr, producer_len_, PROT_READ, MAP_SHARED, map_fd, static_cast<off_t>(page_));
    if (producer_ == MAP_FAILED) {
      ::munmap(consumer_, page_);
      throw Error("bpf: mmap producer pages: " + errno_text(errno));
    }
  }

  RingBufferConsumer(const RingBufferConsumer&) = delete;
  RingBufferConsumer& operator=(const RingBufferConsumer&) = delete;

  ~RingBufferConsumer() {
    ::munmap(producer_, producer_len_);
    ::munmap(consumer_, page_);
  }

  int fd() const { return map_fd_; }

  /// Hands every committed sample to `fn(std::span<const std::uint8_t>)`;
  /// returns the number consumed.
  template <typename Fn>
  std::size_t consume(Fn&& fn) {
    constexpr std::uint32_t kBusy = 1u << 31;
    constexpr std::uint32_t kDiscard = 1u << 30;
    constexpr std::size_t kHeader = 8;
    auto* cons_pos = static_cast<std::uint64_t*>(consumer_);
    auto* prod_pos = static_cast<const std::uint64_t*>(producer_);
    auto* data = static_cast<const std::uint8_t*>(producer_) + page_;

    std::size_t n = 0;
    std::uint64_t cons = std::atomic_ref(*cons_pos).load(std::memory_order_acquire);
    for (;;) {
      std::uint64_t prod = std::atomic_ref(*const_cast<std::uint64_t*>(prod_pos)).load(std::memory_order_acquire);
      if (cons >= prod) break;
      auto* hdr = reinterpret_cast<const std::uint32_t*>(data + (cons & mask_));
      std::uint32_t len = std::atomic_ref(*const_cast<std::uint32_t*>(hdr)).load(std::memory_order_acquire);
      if (len & kBusy) break;
      const std::uint32_t size = len & ~(kBusy | kDiscard);
      if (!(len & kDiscard)) {
        fn(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(hdr) + kHeader, size));
        ++n;
      }
      cons += (size + kHeader + 7) & ~std::uint64_t{7};
      std::atomic_ref(*cons_pos).store(cons, std::memory_order_release);
    }
    return n;
  }

 private:
  int map_fd_;
  std::size_t page_ = 0;
  std::uint64_t mask_ = 0;
  void* consumer_ = nullptr;
  void* producer_ = nullptr;
  std::size_t producer_len_ = 0;
};

}  // namespace bomtrace::bpf
