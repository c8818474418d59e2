#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "cmpi/arena.hpp"
#include "cmpi/device.hpp"

namespace cmpi {

enum class QueueStatus { ok, full, empty };

struct QueueConfig {
    uint32_t cell_size = 16 * 1024; // power of two, >= 4 KiB
    uint32_t depth = 64;            // cells per ring, power of two
    bool checksum = false;          // verify a per-cell payload checksum on dequeue

    void validate() const;
};

/// On-device message cell header, one cacheline. The payload follows
/// immediately, so a cell carries cell_size - 64 payload bytes.
struct MessageHeader {
    uint32_t src_rank = 0;
    uint32_t dst_rank = 0;
    int32_t tag = 0;
    uint32_t chunk_index = 0;
    uint32_t chunk_count = 1;
    uint32_t reserved0 = 0;
    uint64_t total_len = 0;
    uint64_t payload_len = 0;
    uint64_t checksum = 0;
    uint64_t reserved1 = 0;
    uint64_t reserved2 = 0;
};
static_assert(sizeof(MessageHeader) == kCacheline);

inline constexpr uint64_t kCellHeaderBytes = kCacheline;

/// One SPSC ring: a head line (consumer-owned), a tail line (producer-owned),
/// then depth cells. head and tail are indices in [0, depth); the ring is
/// empty when head == tail and holds at most depth-1 messages. Cell bytes are
/// published by flushing them before the tail advances with an nt store, so a
/// consumer that observes the new tail reads a complete cell.
class RingQueue {
public:
    RingQueue(DeviceRegion& dev, uint64_t base_off, const QueueConfig& cfg);

    QueueStatus try_enqueue(MessageHeader hdr, std::span<const std::byte> payload);

    /// Read the header of the oldest message without consuming it.
    QueueStatus peek(MessageHeader& out);

    /// Consume the oldest message; copies min(payload_len, payload_out.size())
    /// payload bytes.
    QueueStatus try_dequeue(MessageHeader& out, std::span<std::byte> payload_out);

    uint64_t payload_capacity() const noexcept { return cfg_.cell_size - kCellHeaderBytes; }

    uint64_t head_off() const noexcept { return base_; }
    uint64_t tail_off() const noexcept { return base_ + kCacheline; }
    uint64_t cell_off(uint32_t i) const noexcept {
        return base_ + 2 * kCacheline + uint64_t(i) * cfg_.cell_size;
    }
    static uint64_t queue_bytes(const QueueConfig& cfg) {
        return 2 * kCacheline + uint64_t(cfg.depth) * cfg.cell_size;
    }

private:
    DeviceRegion* dev_;
    uint64_t base_;
    QueueConfig cfg_;
};

/// nranks x nranks SPSC rings in one arena object; ring (src -> dst) lives at
/// index dst*nranks + src, receiver-major. A companion config object pins
/// (nranks, cell_size, depth) so every rank opens the same layout.
class QueueMatrix {
public:
    static QueueMatrix create(Arena& arena, const std::string& comm_name, uint32_t nranks,
                              const QueueConfig& cfg);
    static QueueMatrix open_existing(Arena& arena, const std::string& comm_name, uint32_t nranks,
                                     const QueueConfig& cfg, uint64_t deadline_ns);

    /// rank 0 creates, everyone else opens (bounded retry until deadline).
    static QueueMatrix create_or_open(Arena& arena, const std::string& comm_name, uint32_t nranks,
                                      const QueueConfig& cfg, uint32_t self,
                                      uint64_t deadline_ns);

    RingQueue ring(uint32_t src, uint32_t dst) const;

    static uint64_t ring_offset_in_object(uint32_t src, uint32_t dst, uint32_t nranks,
                                          const QueueConfig& cfg) {
        return (uint64_t(dst) * nranks + src) * RingQueue::queue_bytes(cfg);
    }
    static uint64_t object_bytes(uint32_t nranks, const QueueConfig& cfg) {
        return uint64_t(nranks) * nranks * RingQueue::queue_bytes(cfg);
    }

    const QueueConfig& config() const noexcept { return cfg_; }
    uint32_t nranks() const noexcept { return nranks_; }
    uint64_t base_device_offset() const noexcept { return base_; }

private:
    QueueMatrix(DeviceRegion& dev, uint64_t base, uint32_t nranks, QueueConfig cfg)
        : dev_(&dev), base_(base), nranks_(nranks), cfg_(cfg) {}

    DeviceRegion* dev_;
    uint64_t base_;
    uint32_t nranks_;
    QueueConfig cfg_;
};

/// Tagged, blocking point-to-point messaging over a queue matrix. Messages
/// larger than one cell are split into sequential chunks and reassembled in
/// order; messages whose tag does not match the pending receive are parked on
/// a per-sender unexpected list in private memory.
///
/// Sends block (spin with backoff) while the destination ring is full, so two
/// ranks that each send more than a ring holds before receiving can deadlock,
/// as with any bounded blocking channel.
class Channel {
public:
    Channel(QueueMatrix matrix, uint32_t self);

    void send(uint32_t dst, int32_t tag, std::span<const std::byte> data);

    /// Returns the received length. Throws buffer_too_small (with the full
    /// length in Error::value) if buf cannot hold the matched message; the
    /// message is consumed either way.
    size_t recv(uint32_t src, int32_t tag, std::span<std::byte> buf);

    /// Chunk count of the message delivered by the last recv.
    uint32_t last_recv_chunks() const noexcept { return last_chunks_; }

    QueueMatrix& matrix() noexcept { return mx_; }
    uint32_t self() const noexcept { return self_; }

private:
    struct Stashed {
        int32_t tag;
        uint32_t chunks;
        std::vector<std::byte> data;
    };

    QueueMatrix mx_;
    uint32_t self_;
    uint32_t last_chunks_ = 1;
    std::vector<std::deque<Stashed>> unexpected_; // indexed by src rank
};

} // namespace cmpi
