#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>

#include "cmpi/common.hpp"

namespace cmpi {

enum class CoherenceMode {
    coherent,
    incoherent_emulated,
};

struct DeviceConfig {
    std::string path;
    uint64_t capacity = 1ull << 30;
    CoherenceMode mode = CoherenceMode::coherent;
};

/// One process attachment of the pooled-memory device, backed by a shared
/// zero-filled file so that every attaching process sees the same bytes at
/// the same offsets.
///
/// Plain byte accesses must follow the coherence discipline: flush_range +
/// fence after every write, fence + invalidating read before every read that
/// may race with a remote writer. 8-byte control words (flags, ring indices,
/// cursors) use nt_store_u64 / nt_load_u64, which always operate directly on
/// the backing store and are totally ordered per offset.
///
/// In coherent mode the discipline is executed against the real cache
/// hierarchy (clflush/clflushopt + fences), so it costs what it costs but
/// cannot be observed to fail. In incoherent_emulated mode a per-attachment
/// overlay of 64-byte lines models an unsynchronized cache: plain writes land
/// in the overlay until flushed, plain reads fill the overlay and can go
/// stale, so a missing flush or invalidate shows up as stale data.
class DeviceRegion {
public:
    static DeviceRegion open(const DeviceConfig& cfg);

    DeviceRegion(DeviceRegion&& other) noexcept;
    DeviceRegion& operator=(DeviceRegion&& other) noexcept;
    DeviceRegion(const DeviceRegion&) = delete;
    DeviceRegion& operator=(const DeviceRegion&) = delete;
    ~DeviceRegion();

    void write_bytes(uint64_t offset, std::span<const std::byte> data);
    void read_bytes(uint64_t offset, std::span<std::byte> out, bool invalidate_first);

    /// Write back (and drop, in emulated mode) every cached line that
    /// intersects [offset, offset+len).
    void flush_range(uint64_t offset, uint64_t len);

    /// Orders all device accesses issued by this rank before the fence ahead
    /// of all accesses issued after it.
    void fence();

    void nt_store_u64(uint64_t offset, uint64_t value);
    uint64_t nt_load_u64(uint64_t offset);

    /// Zero a range directly in the backing store, dropping any overlay
    /// lines. Equivalent to write_bytes + flush_range, used for bulk
    /// formatting.
    void zero_range_flushed(uint64_t offset, uint64_t len);

    uint64_t length() const noexcept { return length_; }
    CoherenceMode mode() const noexcept { return config_.mode; }
    const DeviceConfig& config() const noexcept { return config_; }

    size_t overlay_lines() const noexcept { return overlay_.size(); }

private:
    DeviceRegion() = default;
    void check_range(uint64_t offset, uint64_t len, const char* what) const;
    void drop_line(uint64_t line_off);

    struct Line {
        alignas(8) unsigned char bytes[kCacheline];
        bool dirty = false;
    };

    DeviceConfig config_;
    unsigned char* base_ = nullptr;
    uint64_t length_ = 0;
    int fd_ = -1;
    std::unordered_map<uint64_t, Line> overlay_; // keyed by line offset
};

} // namespace cmpi
