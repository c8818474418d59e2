#include "cmpi/rma.hpp"

#include <algorithm>

#include "cmpi/error.hpp"

namespace cmpi {

namespace {

std::string data_name(const std::string& name) { return "win." + name; }
std::string sync_name(const std::string& name) { return "win." + name + ".sync"; }

ObjHandle open_with_retry(Arena& arena, const std::string& obj, uint64_t deadline_ns) {
    Backoff backoff;
    for (;;) {
        try {
            return arena.open(obj);
        } catch (const Error& e) {
            if (e.code() != Errc::not_found) throw;
            if (monotonic_ns() > deadline_ns)
                raise(Errc::timeout, obj + " never appeared");
            backoff.pause();
        }
    }
}

void check_group(std::span<const uint32_t> group, uint32_t nranks) {
    if (group.empty()) raise(Errc::bad_config, "empty synchronization group");
    for (uint32_t r : group)
        if (r >= nranks) raise(Errc::invalid_rank, "group member " + std::to_string(r));
}

} // namespace

Window::Window(DeviceRegion& dev, ObjHandle data, ObjHandle sync_obj, uint64_t sync_base,
               uint64_t seg_size, uint32_t nranks, uint32_t self, uint64_t data_base)
    : dev_(&dev),
      data_(data),
      sync_obj_(sync_obj),
      sync_(dev, sync_base, nranks),
      data_base_(data_base),
      seg_size_(seg_size),
      nranks_(nranks),
      self_(self),
      locked_(nranks, false) {}

Window Window::allocate_shared(Arena& arena, const std::string& name, uint64_t seg_size,
                               uint32_t nranks, uint32_t self, uint64_t deadline_ns) {
    if (nranks == 0 || self >= nranks) raise(Errc::invalid_rank, "window rank out of range");
    if (seg_size == 0) raise(Errc::bad_config, "window segment size must be > 0");

    const uint64_t seg = align_up(seg_size, kCacheline);
    const uint64_t data_bytes = uint64_t(nranks) * seg;
    const uint64_t sync_bytes = SyncArray::bytes_for(nranks);

    ObjHandle data, sync_obj;
    if (self == 0) {
        data = arena.create(data_name(name), data_bytes);
        sync_obj = arena.create(sync_name(name), sync_bytes);
    } else {
        sync_obj = open_with_retry(arena, sync_name(name), deadline_ns);
        data = arena.open(data_name(name)); // created before the sync object
    }
    if (data.size != data_bytes)
        raise(Errc::geometry_mismatch,
              "window " + name + " holds " + std::to_string(data.size) + " bytes, expected " +
                  std::to_string(data_bytes) + " — seg_size differs across ranks");
    if (sync_obj.size != sync_bytes)
        raise(Errc::geometry_mismatch, "window " + name + " sync array size mismatch");

    return Window(arena.device(), data, sync_obj, arena.device_offset(sync_obj), seg, nranks, self,
                  arena.device_offset(data));
}

uint64_t Window::segment_offset(uint32_t r) const {
    if (r >= nranks_) raise(Errc::invalid_rank, "segment of rank " + std::to_string(r));
    return data_base_ + uint64_t(r) * seg_size_;
}

void Window::check_access(uint32_t target, uint64_t disp, uint64_t len) const {
    if (target >= nranks_) raise(Errc::invalid_rank, "target rank " + std::to_string(target));
    if (disp > seg_size_ || len > seg_size_ - disp)
        raise(Errc::out_of_bounds, "access at displacement " + std::to_string(disp) + " len " +
                                       std::to_string(len) + " leaves the " +
                                       std::to_string(seg_size_) + "-byte segment");
    if (!in_access_ && !locked_[target])
        raise(Errc::no_epoch, "RMA access outside an access epoch or window lock");
}

void Window::put(uint32_t target, uint64_t disp, std::span<const std::byte> data) {
    check_access(target, disp, data.size());
    const uint64_t off = segment_offset(target) + disp;
    dev_->write_bytes(off, data);
#ifndef CMPI_BROKEN_NO_PUT_FLUSH
    dev_->flush_range(off, data.size());
#endif
    dev_->fence();
}

void Window::get(uint32_t target, uint64_t disp, std::span<std::byte> out) {
    check_access(target, disp, out.size());
    dev_->read_bytes(segment_offset(target) + disp, out, true);
}

std::vector<std::byte> Window::get(uint32_t target, uint64_t disp, uint64_t len) {
    std::vector<std::byte> out(len);
    get(target, disp, std::span<std::byte>(out));
    return out;
}

void Window::post(std::span<const uint32_t> origin_group) {
    check_group(origin_group, nranks_);
    if (in_exposure_) raise(Errc::epoch_misuse, "post while an exposure epoch is open");
    exposure_group_.assign(origin_group.begin(), origin_group.end());
    for (uint32_t o : exposure_group_) sync_.set_flag(sync_.post_flag_off(o, self_));
    in_exposure_ = true;
}

void Window::wait() {
    if (!in_exposure_) raise(Errc::epoch_misuse, "wait without a posted exposure epoch");
    for (uint32_t o : exposure_group_) {
        Backoff backoff;
        while (!sync_.flag_set(sync_.complete_flag_off(o, self_))) backoff.pause();
        sync_.clear_flag(sync_.complete_flag_off(o, self_));
    }
    in_exposure_ = false;
    exposure_group_.clear();
}

void Window::start(std::span<const uint32_t> target_group) {
    check_group(target_group, nranks_);
    if (in_access_) raise(Errc::epoch_misuse, "start while an access epoch is open");
    access_group_.assign(target_group.begin(), target_group.end());
    for (uint32_t t : access_group_) {
        Backoff backoff;
        while (!sync_.flag_set(sync_.post_flag_off(self_, t))) backoff.pause();
        sync_.clear_flag(sync_.post_flag_off(self_, t));
    }
    in_access_ = true;
}

void Window::complete() {
    if (!in_access_) raise(Errc::epoch_misuse, "complete without an access epoch");
    dev_->fence(); // order put flushes before the completion flags
    for (uint32_t t : access_group_) sync_.set_flag(sync_.complete_flag_off(self_, t));
    in_access_ = false;
    access_group_.clear();
}

void Window::lock(uint32_t target) {
    if (target >= nranks_) raise(Errc::invalid_rank, "lock target " + std::to_string(target));
    if (locked_[target]) raise(Errc::lock_reentrant, "window lock on rank " +
                                                         std::to_string(target) + " already held");
    BakeryLock lk(*dev_, sync_.lock_choosing_off(target), sync_.lock_ticket_off(target), nranks_,
                  self_);
    lk.lock();
    locked_[target] = true;
}

void Window::unlock(uint32_t target) {
    if (target >= nranks_) raise(Errc::invalid_rank, "unlock target " + std::to_string(target));
    if (!locked_[target])
        raise(Errc::lock_not_held, "window lock on rank " + std::to_string(target) + " not held");
    dev_->fence(); // order critical-section accesses before the release
    dev_->nt_store_u64(sync_.lock_ticket_off(target) + uint64_t(self_) * kCacheline, 0);
    locked_[target] = false;
}

} // namespace cmpi
