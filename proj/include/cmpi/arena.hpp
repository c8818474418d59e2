#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cmpi/device.hpp"

namespace cmpi {

/// Largest `levels` primes <= cap, in descending order.
std::vector<uint64_t> prime_levels(uint64_t cap, uint32_t levels);

/// 64-bit FNV-1a over the object name, re-seeded per hash level. Fixed so the
/// on-device layout is stable; see docs/arena_format.md.
uint64_t arena_name_hash(std::string_view name, uint32_t level);

struct HashGeometry {
    std::vector<uint64_t> primes; // strictly descending, distinct primes

    static HashGeometry defaults() { return with(200000, 10); }
    static HashGeometry with(uint64_t cap, uint32_t levels) {
        return HashGeometry{prime_levels(cap, levels)};
    }

    uint32_t levels() const noexcept { return uint32_t(primes.size()); }
    uint64_t slot_total() const noexcept {
        uint64_t total = 0;
        for (uint64_t p : primes) total += p;
        return total;
    }
    void validate() const;
    bool operator==(const HashGeometry&) const = default;
};

struct ObjHandle {
    uint64_t slot_index = 0;
    uint64_t offset = 0; // bytes from object-region base
    uint64_t size = 0;   // cacheline-rounded
};

struct ObjInfo {
    std::string name;
    uint64_t slot_index;
    uint64_t offset;
    uint64_t size;
};

struct ArenaHeader {
    uint64_t magic = 0;
    uint64_t metadata_off = 0;
    uint64_t metadata_len = 0;
    uint64_t objects_off = 0;
    uint64_t objects_len = 0;
    HashGeometry geometry;
};

/// Shared-object management over the device: a fixed multi-level hash of
/// 128-byte metadata slots indexed by object name, and a contiguous object
/// region handed out by a bump cursor. Object space is never reclaimed;
/// unlink only frees the metadata slot.
///
/// Metadata mutation (create/unlink) is serialized across ranks by a bakery
/// lock resident in the device header; lookups are lock-free. All slot
/// control words are nt-accessed, names follow the flush/invalidate
/// discipline, so the structure is correct in incoherent-emulated mode.
class Arena {
public:
    // On-device header layout (all offsets cacheline-aligned):
    //   line 0          magic, levels, slot_size, metadata_off, metadata_len,
    //                   objects_off, objects_len, header_bytes
    //   line 1          alloc_cursor (nt word)
    //   line 2          boot word (nt word, owned by the runtime bootstrap)
    //   lines 3..6      level prime table, kMaxLevels u64 entries
    //   lines 7..70     creation-lock choosing cells, one per rank
    //   lines 71..134   creation-lock ticket cells, one per rank
    static constexpr uint64_t kArenaMagic = 0x3130524149504D43ull; // "CMPIAR01"
    static constexpr uint32_t kMaxLevels = 32;
    static constexpr uint64_t kSlotSize = 128;
    static constexpr uint64_t kMaxNameLen = 63;
    static constexpr uint64_t kCursorOff = 64;
    static constexpr uint64_t kBootOff = 128;
    static constexpr uint64_t kPrimesOff = 192;
    static constexpr uint64_t kLockChoosingOff = kPrimesOff + kMaxLevels * 8; // 448
    static constexpr uint64_t kLockTicketOff = kLockChoosingOff + kMaxRanks * kCacheline;
    static constexpr uint64_t kHeaderBytes = kLockTicketOff + kMaxRanks * kCacheline; // 8640

    // Slot field offsets (slot is two cachelines: control words, then name).
    static constexpr uint64_t kSlotState = 0;
    static constexpr uint64_t kSlotOwner = 8;
    static constexpr uint64_t kSlotOffset = 16;
    static constexpr uint64_t kSlotSizeField = 24;
    static constexpr uint64_t kSlotName = 64;

    enum SlotState : uint64_t { FREE = 0, CLAIMING = 1, USED = 2 };

    static Arena format(DeviceRegion& dev, const HashGeometry& geometry, uint32_t self_rank = 0);
    static Arena attach(DeviceRegion& dev, uint32_t self_rank = 0);
    static bool formatted(DeviceRegion& dev);

    ObjHandle create(std::string_view name, uint64_t size);
    ObjHandle open(std::string_view name);
    void unlink(std::string_view name);
    std::vector<ObjInfo> list();

    const ArenaHeader& header() const noexcept { return hdr_; }
    uint64_t alloc_cursor() { return dev_->nt_load_u64(kCursorOff); }
    uint64_t device_offset(const ObjHandle& h) const { return hdr_.objects_off + h.offset; }
    DeviceRegion& device() noexcept { return *dev_; }
    uint32_t self_rank() const noexcept { return self_rank_; }

    uint64_t boot_word() { return dev_->nt_load_u64(kBootOff); }
    void set_boot_word(uint64_t v) { dev_->nt_store_u64(kBootOff, v); }

    uint64_t slot_device_off(uint64_t slot_index) const {
        return hdr_.metadata_off + slot_index * kSlotSize;
    }
    uint64_t level_base(uint32_t level) const { return level_base_[level]; }

private:
    Arena(DeviceRegion& dev, ArenaHeader hdr, uint32_t self_rank);

    struct Probe {
        uint64_t slot_index;
        uint32_t level;
    };
    Probe probe_slot(std::string_view name, uint32_t level) const;
    std::string read_slot_name(uint64_t slot_index);
    bool try_claim(uint64_t slot_index);

    DeviceRegion* dev_;
    ArenaHeader hdr_;
    std::vector<uint64_t> level_base_; // cumulative slot index at the start of each level
    uint32_t self_rank_;
};

} // namespace cmpi
