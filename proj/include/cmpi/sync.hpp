#pragma once

#include <cstdint>
#include <optional>

#include "cmpi/device.hpp"

namespace cmpi {

/// Lamport-bakery mutual exclusion between ranks, using only 8-byte nt
/// stores and loads on the device — no cross-process read-modify-write.
/// Cells live one per cacheline: choosing[i] at choosing_off + 64*i,
/// ticket[i] at ticket_off + 64*i.
///
/// The acquire protocol is exposed as an explicit step machine, one device
/// access per step, so tests can interleave ranks deterministically and
/// enumerate schedules. lock() simply runs the stepper with backoff.
class BakeryStepper {
public:
    enum class Phase : uint8_t {
        idle,
        set_choosing,
        scan_tickets,
        set_ticket,
        clear_choosing,
        check_choosing,
        check_ticket,
        holding,
    };
    enum class Step : uint8_t { advanced, spinning, acquired };

    BakeryStepper(DeviceRegion& dev, uint64_t choosing_off, uint64_t ticket_off,
                  uint32_t nranks, uint32_t self);

    /// Arm a new acquisition. Valid from idle.
    void begin();

    /// Perform at most one device access of the acquire protocol.
    Step step();

    /// Drop the lock (single nt store). Valid while holding.
    void release();

    bool holding() const noexcept { return phase_ == Phase::holding; }

    struct LocalState {
        Phase phase;
        uint32_t scan;
        uint64_t max_seen;
        uint64_t my_ticket;
        bool operator==(const LocalState&) const = default;
    };
    LocalState local_state() const noexcept { return {phase_, scan_, max_seen_, my_ticket_}; }

    uint32_t self() const noexcept { return self_; }

private:
    DeviceRegion* dev_;
    uint64_t choosing_off_;
    uint64_t ticket_off_;
    uint32_t nranks_;
    uint32_t self_;

    Phase phase_ = Phase::idle;
    uint32_t scan_ = 0;
    uint64_t max_seen_ = 0;
    uint64_t my_ticket_ = 0;
};

class BakeryLock {
public:
    BakeryLock(DeviceRegion& dev, uint64_t choosing_off, uint64_t ticket_off,
               uint32_t nranks, uint32_t self)
        : stepper_(dev, choosing_off, ticket_off, nranks, self) {}

    void lock();
    void unlock();
    BakeryStepper& stepper() noexcept { return stepper_; }

private:
    BakeryStepper stepper_;
};

/// Per-(origin, target) Post-Wait and Start-Complete flag words plus
/// per-target window-lock cells, each flag on its own cacheline. Pure layout
/// and single-word access; the epoch protocol lives in the window code.
///
/// Object layout, in cachelines from base, with n = nranks:
///   [0,            n*n)   post_flag(origin, target)      at origin*n + target
///   [n*n,        2*n*n)   complete_flag(origin, target)  at origin*n + target
///   [2*n*n,      3*n*n)   lock choosing cells: target t, rank r at t*n + r
///   [3*n*n,      4*n*n)   lock ticket cells:   target t, rank r at t*n + r
class SyncArray {
public:
    SyncArray(DeviceRegion& dev, uint64_t base_off, uint32_t nranks)
        : dev_(&dev), base_(base_off), nranks_(nranks) {}

    static uint64_t bytes_for(uint32_t nranks) {
        return 4ull * nranks * nranks * kCacheline;
    }

    uint64_t post_flag_off(uint32_t origin, uint32_t target) const {
        return base_ + (uint64_t(origin) * nranks_ + target) * kCacheline;
    }
    uint64_t complete_flag_off(uint32_t origin, uint32_t target) const {
        return base_ + (uint64_t(nranks_) * nranks_ + uint64_t(origin) * nranks_ + target) * kCacheline;
    }
    uint64_t lock_choosing_off(uint32_t target) const {
        return base_ + (2ull * nranks_ * nranks_ + uint64_t(target) * nranks_) * kCacheline;
    }
    uint64_t lock_ticket_off(uint32_t target) const {
        return base_ + (3ull * nranks_ * nranks_ + uint64_t(target) * nranks_) * kCacheline;
    }

    void set_flag(uint64_t off) { dev_->nt_store_u64(off, 1); }
    void clear_flag(uint64_t off) { dev_->nt_store_u64(off, 0); }
    bool flag_set(uint64_t off) { return dev_->nt_load_u64(off) != 0; }

    uint32_t nranks() const noexcept { return nranks_; }
    DeviceRegion& device() noexcept { return *dev_; }

private:
    DeviceRegion* dev_;
    uint64_t base_;
    uint32_t nranks_;
};

/// Sequence-number barrier: rank r owns seq[r] (one cacheline each at
/// base_off + 64*r), bumps its private sequence on entry, publishes it with
/// an nt store, and spins until every peer's published sequence has caught
/// up to its own.
class BarrierArray {
public:
    BarrierArray(DeviceRegion& dev, uint64_t base_off, uint32_t nranks, uint32_t self)
        : dev_(&dev), base_(base_off), nranks_(nranks), self_(self) {}

    static uint64_t bytes_for(uint32_t nranks) { return uint64_t(nranks) * kCacheline; }

    /// Enter the barrier; returns when all ranks have entered at least as
    /// many barriers. deadline_ns (monotonic) turns a missing peer into an
    /// Errc::timeout instead of spinning forever.
    void wait(std::optional<uint64_t> deadline_ns = std::nullopt);

    uint64_t local_sequence() const noexcept { return local_seq_; }
    uint64_t published_sequence(uint32_t rank) {
        return dev_->nt_load_u64(base_ + uint64_t(rank) * kCacheline);
    }

private:
    DeviceRegion* dev_;
    uint64_t base_;
    uint32_t nranks_;
    uint32_t self_;
    uint64_t local_seq_ = 0;
};

} // namespace cmpi
