#include "cmpi/arena.hpp"

#include <algorithm>
#include <cstring>

#include "cmpi/error.hpp"
#include "cmpi/sync.hpp"

namespace cmpi {

namespace {

bool is_prime(uint64_t n) {
    if (n < 2) return false;
    if (n % 2 == 0) return n == 2;
    for (uint64_t d = 3; d * d <= n; d += 2)
        if (n % d == 0) return false;
    return true;
}

BakeryLock creation_lock(DeviceRegion& dev, uint32_t self_rank) {
    return BakeryLock(dev, Arena::kLockChoosingOff, Arena::kLockTicketOff, kMaxRanks, self_rank);
}

} // namespace

std::vector<uint64_t> prime_levels(uint64_t cap, uint32_t levels) {
    if (cap < 3) raise(Errc::bad_config, "prime cap must be >= 3");
    if (levels < 1) raise(Errc::bad_config, "need at least one hash level");
    std::vector<uint64_t> out;
    out.reserve(levels);
    for (uint64_t n = cap; n >= 2 && out.size() < levels; --n)
        if (is_prime(n)) out.push_back(n);
    if (out.size() < levels)
        raise(Errc::bad_config, "not enough primes <= " + std::to_string(cap) + " for " +
                                    std::to_string(levels) + " levels");
    return out;
}

uint64_t arena_name_hash(std::string_view name, uint32_t level) {
    uint64_t h = 14695981039346656037ull ^ (0x9e3779b97f4a7c15ull * (uint64_t(level) + 1));
    for (unsigned char c : name) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void HashGeometry::validate() const {
    if (primes.empty()) raise(Errc::bad_config, "geometry has no levels");
    if (primes.size() > Arena::kMaxLevels)
        raise(Errc::bad_config, "geometry exceeds " + std::to_string(Arena::kMaxLevels) + " levels");
    for (size_t i = 0; i < primes.size(); ++i) {
        if (!is_prime(primes[i]))
            raise(Errc::bad_config, std::to_string(primes[i]) + " is not prime");
        if (i > 0 && primes[i] >= primes[i - 1])
            raise(Errc::bad_config, "level primes must be strictly descending");
    }
}

Arena::Arena(DeviceRegion& dev, ArenaHeader hdr, uint32_t self_rank)
    : dev_(&dev), hdr_(std::move(hdr)), self_rank_(self_rank) {
    if (self_rank >= kMaxRanks) raise(Errc::invalid_rank, "rank exceeds arena lock capacity");
    level_base_.resize(hdr_.geometry.levels() + 1, 0);
    for (uint32_t l = 0; l < hdr_.geometry.levels(); ++l)
        level_base_[l + 1] = level_base_[l] + hdr_.geometry.primes[l];
}

bool Arena::formatted(DeviceRegion& dev) {
    unsigned char line[kCacheline];
    dev.read_bytes(0, as_writable_bytes_of(line, sizeof line), true);
    uint64_t magic;
    std::memcpy(&magic, line, 8);
    return magic == kArenaMagic;
}

Arena Arena::format(DeviceRegion& dev, const HashGeometry& geometry, uint32_t self_rank) {
    geometry.validate();
    const uint64_t slot_total = geometry.slot_total();
    const uint64_t metadata_len = slot_total * kSlotSize;
    const uint64_t required = kHeaderBytes + metadata_len + kCacheline;
    if (dev.length() < required)
        raise(Errc::region_too_small, "device of " + std::to_string(dev.length()) +
                                          " bytes cannot hold " + std::to_string(slot_total) +
                                          " slots (need " + std::to_string(required) + ")");

    if (formatted(dev)) {
        Arena existing = attach(dev, self_rank);
        if (existing.hdr_.geometry != geometry)
            raise(Errc::geometry_mismatch, "arena is formatted with a different geometry");
        return existing;
    }

    ArenaHeader hdr;
    hdr.magic = kArenaMagic;
    hdr.metadata_off = kHeaderBytes;
    hdr.metadata_len = metadata_len;
    hdr.objects_off = align_up(kHeaderBytes + metadata_len, kCacheline);
    hdr.objects_len = align_down(dev.length() - hdr.objects_off, kCacheline);
    hdr.geometry = geometry;

    // Wipe header and metadata, then publish the header with the magic word
    // written last so waiters polling for it never observe a partial format.
    dev.zero_range_flushed(0, hdr.objects_off);

    uint64_t line0[8] = {hdr.magic,       uint64_t(geometry.levels()),
                         kSlotSize,        hdr.metadata_off,
                         hdr.metadata_len, hdr.objects_off,
                         hdr.objects_len,  kHeaderBytes};
    uint64_t primes_table[kMaxLevels] = {};
    for (uint32_t l = 0; l < geometry.levels(); ++l) primes_table[l] = geometry.primes[l];

    dev.write_bytes(kPrimesOff, as_bytes_of(primes_table, sizeof primes_table));
    dev.flush_range(kPrimesOff, sizeof primes_table);
    dev.fence();

    dev.write_bytes(0, as_bytes_of(line0, sizeof line0));
    dev.flush_range(0, sizeof line0);
    dev.fence();

    return Arena(dev, std::move(hdr), self_rank);
}

Arena Arena::attach(DeviceRegion& dev, uint32_t self_rank) {
    uint64_t line0[8];
    dev.fence();
    dev.read_bytes(0, as_writable_bytes_of(line0, sizeof line0), true);
    if (line0[0] != kArenaMagic) raise(Errc::bad_state, "arena is not formatted");

    ArenaHeader hdr;
    hdr.magic = line0[0];
    uint64_t levels = line0[1];
    uint64_t slot_size = line0[2];
    hdr.metadata_off = line0[3];
    hdr.metadata_len = line0[4];
    hdr.objects_off = line0[5];
    hdr.objects_len = line0[6];
    if (slot_size != kSlotSize || levels == 0 || levels > kMaxLevels)
        raise(Errc::geometry_mismatch, "unsupported arena header");
    if (hdr.objects_off + hdr.objects_len > dev.length() || hdr.metadata_off != kHeaderBytes)
        raise(Errc::geometry_mismatch, "arena header does not fit this device");

    uint64_t primes_table[kMaxLevels];
    dev.read_bytes(kPrimesOff, as_writable_bytes_of(primes_table, sizeof primes_table), true);
    hdr.geometry.primes.assign(primes_table, primes_table + levels);
    hdr.geometry.validate();
    if (hdr.geometry.slot_total() * kSlotSize != hdr.metadata_len)
        raise(Errc::geometry_mismatch, "slot table length does not match level primes");

    return Arena(dev, std::move(hdr), self_rank);
}

Arena::Probe Arena::probe_slot(std::string_view name, uint32_t level) const {
    uint64_t bucket = arena_name_hash(name, level) % hdr_.geometry.primes[level];
    return Probe{level_base_[level] + bucket, level};
}

std::string Arena::read_slot_name(uint64_t slot_index) {
    char buf[kCacheline];
    dev_->read_bytes(slot_device_off(slot_index) + kSlotName,
                     as_writable_bytes_of(buf, sizeof buf), true);
    size_t n = strnlen(buf, kMaxNameLen + 1);
    return std::string(buf, std::min(n, size_t(kMaxNameLen)));
}

// Claim with plain/nt stores only: advertise CLAIMING with our rank, fence,
// re-read. On a collision the lower rank re-asserts and the higher rank walks
// away. Under the creation lock this never contends; the protocol stays in
// place for the lock-free layout it documents.
bool Arena::try_claim(uint64_t slot_index) {
    const uint64_t off = slot_device_off(slot_index);
    dev_->nt_store_u64(off + kSlotState, CLAIMING);
    dev_->nt_store_u64(off + kSlotOwner, self_rank_);
    dev_->fence();
    for (int attempt = 0; attempt < 2; ++attempt) {
        uint64_t state = dev_->nt_load_u64(off + kSlotState);
        uint64_t owner = dev_->nt_load_u64(off + kSlotOwner);
        if (state == CLAIMING && owner == self_rank_) return true;
        if (state != CLAIMING) return false; // someone else completed a transition
        if (owner < self_rank_) return false;
        dev_->nt_store_u64(off + kSlotOwner, self_rank_);
        dev_->fence();
    }
    return false;
}

ObjHandle Arena::create(std::string_view name, uint64_t size) {
    if (name.empty()) raise(Errc::bad_config, "object name is empty");
    if (name.size() > kMaxNameLen)
        raise(Errc::name_too_long, std::string(name) + " exceeds " +
                                       std::to_string(kMaxNameLen) + " bytes");
    if (size == 0) raise(Errc::bad_config, "object size must be > 0");

    BakeryLock lock = creation_lock(*dev_, self_rank_);
    lock.lock();
    struct Unlocker {
        BakeryLock* l;
        ~Unlocker() { l->unlock(); }
    } unlocker{&lock};

    const uint32_t levels = hdr_.geometry.levels();

    // Exclusive create: the name must not exist at any level.
    for (uint32_t l = 0; l < levels; ++l) {
        Probe p = probe_slot(name, l);
        dev_->fence();
        if (dev_->nt_load_u64(slot_device_off(p.slot_index) + kSlotState) == USED &&
            read_slot_name(p.slot_index) == name)
            raise(Errc::name_exists, std::string(name));
    }

    const uint64_t rounded = align_up(size, kCacheline);
    const uint64_t cursor = dev_->nt_load_u64(kCursorOff);
    if (cursor + rounded > hdr_.objects_len)
        raise(Errc::object_region_full, "object region exhausted at cursor " +
                                            std::to_string(cursor));

    for (uint32_t l = 0; l < levels; ++l) {
        Probe p = probe_slot(name, l);
        const uint64_t off = slot_device_off(p.slot_index);
        dev_->fence();
        if (dev_->nt_load_u64(off + kSlotState) != FREE) continue;
        if (!try_claim(p.slot_index)) continue;

        char namebuf[kCacheline] = {};
        std::memcpy(namebuf, name.data(), name.size());
        dev_->write_bytes(off + kSlotName, as_bytes_of(namebuf, sizeof namebuf));
        dev_->flush_range(off + kSlotName, kCacheline);
        dev_->nt_store_u64(off + kSlotOffset, cursor);
        dev_->nt_store_u64(off + kSlotSizeField, rounded);
        dev_->fence();

        // Fresh object bytes are zero for readers that follow the discipline.
        dev_->zero_range_flushed(hdr_.objects_off + cursor, rounded);

        dev_->nt_store_u64(off + kSlotState, USED);
        dev_->fence();
        dev_->nt_store_u64(kCursorOff, cursor + rounded);
        dev_->fence();
        return ObjHandle{p.slot_index, cursor, rounded};
    }

    raise(Errc::metadata_full, "no free slot on any level for " + std::string(name));
}

ObjHandle Arena::open(std::string_view name) {
    if (name.empty() || name.size() > kMaxNameLen) raise(Errc::not_found, std::string(name));
    const uint32_t levels = hdr_.geometry.levels();
    for (uint32_t l = 0; l < levels; ++l) {
        Probe p = probe_slot(name, l);
        const uint64_t off = slot_device_off(p.slot_index);
        dev_->fence();
        if (dev_->nt_load_u64(off + kSlotState) != USED) continue;
        if (read_slot_name(p.slot_index) != name) continue;
        uint64_t obj_off = dev_->nt_load_u64(off + kSlotOffset);
        uint64_t obj_size = dev_->nt_load_u64(off + kSlotSizeField);
        // Re-validate: the slot may have been unlinked and reclaimed for a
        // different name between the name read and the field reads.
        dev_->fence();
        if (dev_->nt_load_u64(off + kSlotState) != USED || read_slot_name(p.slot_index) != name)
            continue;
        if (obj_off + obj_size > hdr_.objects_len)
            raise(Errc::io_error, "slot for " + std::string(name) + " points outside the object region");
        return ObjHandle{p.slot_index, obj_off, obj_size};
    }
    raise(Errc::not_found, std::string(name));
}

void Arena::unlink(std::string_view name) {
    BakeryLock lock = creation_lock(*dev_, self_rank_);
    lock.lock();
    struct Unlocker {
        BakeryLock* l;
        ~Unlocker() { l->unlock(); }
    } unlocker{&lock};

    const uint32_t levels = hdr_.geometry.levels();
    for (uint32_t l = 0; l < levels; ++l) {
        Probe p = probe_slot(name, l);
        const uint64_t off = slot_device_off(p.slot_index);
        dev_->fence();
        if (dev_->nt_load_u64(off + kSlotState) != USED) continue;
        if (read_slot_name(p.slot_index) != name) continue;
        dev_->nt_store_u64(off + kSlotOwner, 0);
        dev_->nt_store_u64(off + kSlotState, FREE);
        dev_->fence();
        return;
    }
    raise(Errc::not_found, std::string(name));
}

std::vector<ObjInfo> Arena::list() {
    std::vector<ObjInfo> out;
    const uint64_t total = hdr_.geometry.slot_total();
    dev_->fence();
    for (uint64_t i = 0; i < total; ++i) {
        const uint64_t off = slot_device_off(i);
        if (dev_->nt_load_u64(off + kSlotState) != USED) continue;
        ObjInfo info;
        info.name = read_slot_name(i);
        info.slot_index = i;
        info.offset = dev_->nt_load_u64(off + kSlotOffset);
        info.size = dev_->nt_load_u64(off + kSlotSizeField);
        out.push_back(std::move(info));
    }
    std::sort(out.begin(), out.end(),
              [](const ObjInfo& a, const ObjInfo& b) { return a.name < b.name; });
    return out;
}

} // namespace cmpi
