#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmpi/arena.hpp"
#include "cmpi/sync.hpp"

namespace cmpi {

/// One-sided communication window: a single arena object holding nranks
/// contiguous per-rank segments, plus a companion synchronization array
/// (PSCW flags and per-target lock cells) allocated in the same call.
///
/// put/get require an open access epoch (start..complete) or the window lock
/// on the target; visibility to the target is guaranteed after the matching
/// wait. Concurrent origins writing one target in the same epoch must target
/// cacheline-disjoint ranges, mirroring the flush granularity of the device.
class Window {
public:
    /// Collective: every rank calls with identical name and seg_size. Rank 0
    /// creates "win.<name>" and "win.<name>.sync"; other ranks open them,
    /// retrying until deadline_ns while the objects do not exist yet.
    static Window allocate_shared(Arena& arena, const std::string& name, uint64_t seg_size,
                                  uint32_t nranks, uint32_t self, uint64_t deadline_ns);

    void put(uint32_t target, uint64_t disp, std::span<const std::byte> data);
    void get(uint32_t target, uint64_t disp, std::span<std::byte> out);
    std::vector<std::byte> get(uint32_t target, uint64_t disp, uint64_t len);

    // PSCW. The target side posts an exposure epoch to a group of origins
    // and waits for their completions; each origin starts an access epoch
    // against its targets and completes it after its RMA calls.
    void post(std::span<const uint32_t> origin_group);
    void wait();
    void start(std::span<const uint32_t> target_group);
    void complete();

    // Exclusive per-target window lock (store/load-only bakery).
    void lock(uint32_t target);
    void unlock(uint32_t target);

    uint64_t seg_size() const noexcept { return seg_size_; }
    uint32_t nranks() const noexcept { return nranks_; }
    uint32_t rank() const noexcept { return self_; }
    uint64_t segment_offset(uint32_t r) const; // absolute device offset
    const ObjHandle& data_handle() const noexcept { return data_; }
    const ObjHandle& sync_handle() const noexcept { return sync_obj_; }
    SyncArray& sync_array() noexcept { return sync_; }

private:
    Window(DeviceRegion& dev, ObjHandle data, ObjHandle sync_obj, uint64_t sync_base,
           uint64_t seg_size, uint32_t nranks, uint32_t self, uint64_t data_base);

    void check_access(uint32_t target, uint64_t disp, uint64_t len) const;

    DeviceRegion* dev_;
    ObjHandle data_;
    ObjHandle sync_obj_;
    SyncArray sync_;
    uint64_t data_base_; // absolute device offset of segment 0
    uint64_t seg_size_;
    uint32_t nranks_;
    uint32_t self_;

    bool in_exposure_ = false;
    bool in_access_ = false;
    std::vector<uint32_t> exposure_group_;
    std::vector<uint32_t> access_group_;
    std::vector<bool> locked_;
};

} // namespace cmpi
