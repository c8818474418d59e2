#include "cmpi/device.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>

#include <fcntl.h>
#include <sched.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <time.h>
#include <unistd.h>

#include "cmpi/error.hpp"

#if defined(__x86_64__) || defined(__i386__)
#include <cpuid.h>
#endif

namespace cmpi {

const char* errc_name(Errc c) {
    switch (c) {
        case Errc::ok: return "ok";
        case Errc::out_of_bounds: return "out-of-bounds";
        case Errc::misaligned: return "misaligned";
        case Errc::capacity_not_aligned: return "capacity-not-aligned";
        case Errc::path_not_writable: return "path-not-writable";
        case Errc::file_too_small: return "file-too-small";
        case Errc::io_error: return "io-error";
        case Errc::region_too_small: return "region-too-small";
        case Errc::geometry_mismatch: return "geometry-mismatch";
        case Errc::name_too_long: return "name-too-long";
        case Errc::name_exists: return "name-exists";
        case Errc::not_found: return "not-found";
        case Errc::metadata_full: return "metadata-full";
        case Errc::object_region_full: return "object-region-full";
        case Errc::bad_config: return "bad-config";
        case Errc::buffer_too_small: return "buffer-too-small";
        case Errc::invalid_rank: return "invalid-rank";
        case Errc::no_epoch: return "no-epoch";
        case Errc::epoch_misuse: return "epoch-misuse";
        case Errc::lock_reentrant: return "lock-reentrant";
        case Errc::lock_not_held: return "lock-not-held";
        case Errc::timeout: return "timeout";
        case Errc::bad_state: return "bad-state";
        case Errc::spawn_failed: return "spawn-failed";
    }
    return "unknown";
}

uint64_t monotonic_ns() {
    timespec ts{};
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return uint64_t(ts.tv_sec) * 1000000000ull + uint64_t(ts.tv_nsec);
}

uint64_t fnv1a64(std::span<const std::byte> data, uint64_t seed) {
    uint64_t h = seed;
    for (std::byte b : data) {
        h ^= uint64_t(static_cast<unsigned char>(b));
        h *= 1099511628211ull;
    }
    return h;
}

void Backoff::pause() {
    ++iter_;
    if (iter_ <= 64) {
#if defined(__x86_64__) || defined(__i386__)
        __builtin_ia32_pause();
#elif defined(__aarch64__)
        asm volatile("yield");
#endif
        return;
    }
    if (iter_ <= 96) {
        sched_yield();
        return;
    }
    unsigned shift = iter_ - 97;
    uint64_t ns = shift >= 10 ? max_sleep_ns_ : std::min(uint64_t(1000) << shift, max_sleep_ns_);
    timespec ts{0, long(ns)};
    nanosleep(&ts, nullptr);
}

namespace {

// Cache maintenance on the real hierarchy (coherent mode).
#if defined(__x86_64__) || defined(__i386__)
bool detect_clflushopt() {
    unsigned eax = 0, ebx = 0, ecx = 0, edx = 0;
    if (__get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx) == 0) return false;
    return (ebx & (1u << 23)) != 0;
}

void hw_flush_line(const void* p) {
    static const bool have_opt = detect_clflushopt();
    if (have_opt) {
        asm volatile("clflushopt %0" : "+m"(*(volatile char*)p));
    } else {
        asm volatile("clflush %0" : "+m"(*(volatile char*)p));
    }
}
#elif defined(__aarch64__)
void hw_flush_line(const void* p) {
    asm volatile("dc civac, %0" ::"r"(p) : "memory");
}
#else
void hw_flush_line(const void*) {}
#endif

std::atomic<uint64_t>& word_at(unsigned char* base, uint64_t offset) {
    return *reinterpret_cast<std::atomic<uint64_t>*>(base + offset);
}

} // namespace

DeviceRegion DeviceRegion::open(const DeviceConfig& cfg) {
    if (cfg.capacity == 0 || cfg.capacity % kCacheline != 0)
        raise(Errc::capacity_not_aligned,
              "device capacity must be a nonzero multiple of " + std::to_string(kCacheline));
    if (cfg.path.empty()) raise(Errc::bad_config, "device path is empty");

    int fd = ::open(cfg.path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd < 0) raise(Errc::path_not_writable, cfg.path + ": " + std::strerror(errno));

    struct stat st{};
    if (fstat(fd, &st) != 0) {
        int e = errno;
        ::close(fd);
        raise(Errc::io_error, "fstat: " + std::string(std::strerror(e)));
    }
    if (st.st_size == 0) {
        if (ftruncate(fd, off_t(cfg.capacity)) != 0) {
            int e = errno;
            ::close(fd);
            raise(Errc::io_error, "ftruncate: " + std::string(std::strerror(e)));
        }
    } else if (uint64_t(st.st_size) < cfg.capacity) {
        ::close(fd);
        raise(Errc::file_too_small, cfg.path + " holds " + std::to_string(st.st_size) +
                                        " bytes, need " + std::to_string(cfg.capacity));
    }

    void* p = mmap(nullptr, cfg.capacity, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
    if (p == MAP_FAILED) {
        int e = errno;
        ::close(fd);
        raise(Errc::io_error, "mmap: " + std::string(std::strerror(e)));
    }

    DeviceRegion r;
    r.config_ = cfg;
    r.base_ = static_cast<unsigned char*>(p);
    r.length_ = cfg.capacity;
    r.fd_ = fd;
    return r;
}

DeviceRegion::DeviceRegion(DeviceRegion&& other) noexcept
    : config_(std::move(other.config_)),
      base_(other.base_),
      length_(other.length_),
      fd_(other.fd_),
      overlay_(std::move(other.overlay_)) {
    other.base_ = nullptr;
    other.fd_ = -1;
    other.length_ = 0;
}

DeviceRegion& DeviceRegion::operator=(DeviceRegion&& other) noexcept {
    if (this != &other) {
        this->~DeviceRegion();
        new (this) DeviceRegion(std::move(other));
    }
    return *this;
}

DeviceRegion::~DeviceRegion() {
    if (base_) munmap(base_, length_);
    if (fd_ >= 0) ::close(fd_);
    base_ = nullptr;
    fd_ = -1;
}

void DeviceRegion::check_range(uint64_t offset, uint64_t len, const char* what) const {
    if (offset > length_ || len > length_ - offset)
        raise(Errc::out_of_bounds, std::string(what) + " at offset " + std::to_string(offset) +
                                       " len " + std::to_string(len) + " exceeds region of " +
                                       std::to_string(length_));
}

void DeviceRegion::write_bytes(uint64_t offset, std::span<const std::byte> data) {
    check_range(offset, data.size(), "write");
    if (data.empty()) return;

    if (config_.mode == CoherenceMode::coherent) {
        std::memcpy(base_ + offset, data.data(), data.size());
        return;
    }

    // Write-allocate per line: fetch the backing line on first touch, apply
    // the store, keep it dirty until flushed.
    uint64_t pos = offset;
    const std::byte* src = data.data();
    uint64_t remaining = data.size();
    while (remaining > 0) {
        uint64_t line_off = align_down(pos, kCacheline);
        uint64_t in_line = pos - line_off;
        uint64_t n = std::min<uint64_t>(kCacheline - in_line, remaining);
        auto [it, inserted] = overlay_.try_emplace(line_off);
        if (inserted) std::memcpy(it->second.bytes, base_ + line_off, kCacheline);
        std::memcpy(it->second.bytes + in_line, src, n);
        it->second.dirty = true;
        pos += n;
        src += n;
        remaining -= n;
    }
}

void DeviceRegion::read_bytes(uint64_t offset, std::span<std::byte> out, bool invalidate_first) {
    check_range(offset, out.size(), "read");
    if (out.empty()) return;

    if (config_.mode == CoherenceMode::coherent) {
        if (invalidate_first) {
            fence();
            flush_range(offset, out.size());
        }
        std::memcpy(out.data(), base_ + offset, out.size());
        return;
    }

    if (invalidate_first) {
        fence();
        flush_range(offset, out.size());
    }

    // Read-allocate: lines fetched here stay in the overlay and can go stale,
    // like a cache fill would.
    uint64_t pos = offset;
    std::byte* dst = out.data();
    uint64_t remaining = out.size();
    while (remaining > 0) {
        uint64_t line_off = align_down(pos, kCacheline);
        uint64_t in_line = pos - line_off;
        uint64_t n = std::min<uint64_t>(kCacheline - in_line, remaining);
        auto [it, inserted] = overlay_.try_emplace(line_off);
        if (inserted) std::memcpy(it->second.bytes, base_ + line_off, kCacheline);
        std::memcpy(dst, it->second.bytes + in_line, n);
        pos += n;
        dst += n;
        remaining -= n;
    }
}

void DeviceRegion::drop_line(uint64_t line_off) {
    auto it = overlay_.find(line_off);
    if (it == overlay_.end()) return;
    if (it->second.dirty) std::memcpy(base_ + line_off, it->second.bytes, kCacheline);
    overlay_.erase(it);
}

void DeviceRegion::flush_range(uint64_t offset, uint64_t len) {
    check_range(offset, len, "flush");
    if (len == 0) return;
    uint64_t first = align_down(offset, kCacheline);
    uint64_t last = align_down(offset + len - 1, kCacheline);

    if (config_.mode == CoherenceMode::coherent) {
        for (uint64_t off = first; off <= last; off += kCacheline) hw_flush_line(base_ + off);
        return;
    }
    for (uint64_t off = first; off <= last; off += kCacheline) drop_line(off);
}

void DeviceRegion::fence() { std::atomic_thread_fence(std::memory_order_seq_cst); }

void DeviceRegion::nt_store_u64(uint64_t offset, uint64_t value) {
    if (offset % 8 != 0)
        raise(Errc::misaligned, "nt store at offset " + std::to_string(offset));
    check_range(offset, 8, "nt store");
    word_at(base_, offset).store(value, std::memory_order_seq_cst);
}

uint64_t DeviceRegion::nt_load_u64(uint64_t offset) {
    if (offset % 8 != 0)
        raise(Errc::misaligned, "nt load at offset " + std::to_string(offset));
    check_range(offset, 8, "nt load");
    return word_at(base_, offset).load(std::memory_order_seq_cst);
}

void DeviceRegion::zero_range_flushed(uint64_t offset, uint64_t len) {
    check_range(offset, len, "zero");
    if (offset % kCacheline != 0 || len % kCacheline != 0)
        raise(Errc::misaligned, "zero range must be cacheline-aligned");
    if (len == 0) return;
    if (config_.mode == CoherenceMode::incoherent_emulated) {
        for (uint64_t off = offset; off < offset + len; off += kCacheline) overlay_.erase(off);
    }
    std::memset(base_ + offset, 0, len);
    if (config_.mode == CoherenceMode::coherent) flush_range(offset, len);
    fence();
}

} // namespace cmpi
