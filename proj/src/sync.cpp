#include "cmpi/sync.hpp"

#include "cmpi/error.hpp"

namespace cmpi {

BakeryStepper::BakeryStepper(DeviceRegion& dev, uint64_t choosing_off, uint64_t ticket_off,
                             uint32_t nranks, uint32_t self)
    : dev_(&dev), choosing_off_(choosing_off), ticket_off_(ticket_off), nranks_(nranks),
      self_(self) {
    if (self >= nranks) raise(Errc::invalid_rank, "bakery rank out of range");
}

void BakeryStepper::begin() {
    if (phase_ != Phase::idle) raise(Errc::bad_state, "bakery acquisition already in progress");
    phase_ = Phase::set_choosing;
    scan_ = 0;
    max_seen_ = 0;
    my_ticket_ = 0;
}

BakeryStepper::Step BakeryStepper::step() {
    switch (phase_) {
        case Phase::idle:
            begin();
            [[fallthrough]];
        case Phase::set_choosing:
            dev_->nt_store_u64(choosing_off_ + uint64_t(self_) * kCacheline, 1);
            phase_ = Phase::scan_tickets;
            scan_ = 0;
            max_seen_ = 0;
            return Step::advanced;

        case Phase::scan_tickets: {
            uint64_t t = dev_->nt_load_u64(ticket_off_ + uint64_t(scan_) * kCacheline);
            if (t > max_seen_) max_seen_ = t;
            if (++scan_ == nranks_) phase_ = Phase::set_ticket;
            return Step::advanced;
        }

        case Phase::set_ticket:
            my_ticket_ = max_seen_ + 1;
            dev_->nt_store_u64(ticket_off_ + uint64_t(self_) * kCacheline, my_ticket_);
            phase_ = Phase::clear_choosing;
            return Step::advanced;

        case Phase::clear_choosing:
            dev_->nt_store_u64(choosing_off_ + uint64_t(self_) * kCacheline, 0);
            phase_ = Phase::check_choosing;
            scan_ = 0;
            return Step::advanced;

        case Phase::check_choosing: {
            while (scan_ < nranks_ && scan_ == self_) ++scan_;
            if (scan_ == nranks_) {
                phase_ = Phase::holding;
                return Step::acquired;
            }
            uint64_t c = dev_->nt_load_u64(choosing_off_ + uint64_t(scan_) * kCacheline);
            if (c != 0) return Step::spinning;
            phase_ = Phase::check_ticket;
            return Step::advanced;
        }

        case Phase::check_ticket: {
            uint64_t t = dev_->nt_load_u64(ticket_off_ + uint64_t(scan_) * kCacheline);
            bool peer_first = t != 0 && (t < my_ticket_ || (t == my_ticket_ && scan_ < self_));
            if (peer_first) return Step::spinning;
            ++scan_;
            phase_ = Phase::check_choosing;
            return Step::advanced;
        }

        case Phase::holding:
            return Step::acquired;
    }
    raise(Errc::bad_state, "bakery stepper in unknown phase");
}

void BakeryStepper::release() {
    if (phase_ != Phase::holding) raise(Errc::lock_not_held, "release without holding the lock");
    dev_->nt_store_u64(ticket_off_ + uint64_t(self_) * kCacheline, 0);
    phase_ = Phase::idle;
}

void BakeryLock::lock() {
    if (stepper_.holding()) raise(Errc::lock_reentrant, "lock already held by this rank");
    stepper_.begin();
    Backoff backoff(64000); // FIFO handoff stalls behind long waiter sleeps
    for (;;) {
        BakeryStepper::Step s = stepper_.step();
        if (s == BakeryStepper::Step::acquired) return;
        if (s == BakeryStepper::Step::spinning) {
            backoff.pause();
        } else {
            backoff.reset();
        }
    }
}

void BakeryLock::unlock() { stepper_.release(); }

void BarrierArray::wait(std::optional<uint64_t> deadline_ns) {
    ++local_seq_;
    dev_->nt_store_u64(base_ + uint64_t(self_) * kCacheline, local_seq_);
    dev_->fence();
    for (uint32_t r = 0; r < nranks_; ++r) {
        if (r == self_) continue;
        Backoff backoff;
        while (dev_->nt_load_u64(base_ + uint64_t(r) * kCacheline) < local_seq_) {
            if (deadline_ns && monotonic_ns() > *deadline_ns)
                raise(Errc::timeout, "barrier: rank " + std::to_string(r) +
                                         " never reached sequence " + std::to_string(local_seq_));
            backoff.pause();
        }
    }
}

} // namespace cmpi
