#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace cmpi {

inline constexpr uint64_t kCacheline = 64;
inline constexpr uint32_t kMaxRanks = 64;

constexpr uint64_t align_up(uint64_t v, uint64_t a) { return (v + a - 1) & ~(a - 1); }
constexpr uint64_t align_down(uint64_t v, uint64_t a) { return v & ~(a - 1); }
constexpr bool is_pow2(uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

/// Polling backoff for cross-process spin waits. Tuned so that ping-pong
/// handoffs stay cheap on a single-core host: a short pause-spin burst, a
/// few sched_yield rounds to let the peer process run, then exponential
/// sleeps from 1 us up to max_sleep_ns (default 1 ms). Lock acquisition uses
/// a lower cap so a FIFO handoff does not idle behind a sleeping waiter.
class Backoff {
public:
    Backoff() = default;
    explicit Backoff(uint64_t max_sleep_ns) : max_sleep_ns_(max_sleep_ns) {}
    void pause();
    void reset() noexcept { iter_ = 0; }

private:
    unsigned iter_ = 0;
    uint64_t max_sleep_ns_ = 1000000;
};

uint64_t monotonic_ns();

uint64_t fnv1a64(std::span<const std::byte> data,
                 uint64_t seed = 14695981039346656037ull);

inline std::span<const std::byte> as_bytes_of(const void* p, size_t n) {
    return {static_cast<const std::byte*>(p), n};
}
inline std::span<std::byte> as_writable_bytes_of(void* p, size_t n) {
    return {static_cast<std::byte*>(p), n};
}

} // namespace cmpi
