#include "cmpi/queue.hpp"

#include <cstring>

#include "cmpi/error.hpp"

namespace cmpi {

void QueueConfig::validate() const {
    if (!is_pow2(cell_size) || cell_size < 4096)
        raise(Errc::bad_config, "cell size must be a power of two >= 4096, got " +
                                    std::to_string(cell_size));
    if (!is_pow2(depth) || depth < 2)
        raise(Errc::bad_config, "queue depth must be a power of two >= 2, got " +
                                    std::to_string(depth));
}

RingQueue::RingQueue(DeviceRegion& dev, uint64_t base_off, const QueueConfig& cfg)
    : dev_(&dev), base_(base_off), cfg_(cfg) {}

QueueStatus RingQueue::try_enqueue(MessageHeader hdr, std::span<const std::byte> payload) {
    if (payload.size() > payload_capacity())
        raise(Errc::bad_config, "payload of " + std::to_string(payload.size()) +
                                    " exceeds cell capacity " + std::to_string(payload_capacity()));
    uint64_t tail = dev_->nt_load_u64(tail_off());
    uint64_t head = dev_->nt_load_u64(head_off());
    uint64_t next = (tail + 1) & (cfg_.depth - 1);
    if (next == head) return QueueStatus::full;

    hdr.payload_len = payload.size();
    hdr.checksum = cfg_.checksum ? fnv1a64(payload) : 0;

    const uint64_t cell = cell_off(uint32_t(tail));
    dev_->write_bytes(cell, as_bytes_of(&hdr, sizeof hdr));
    if (!payload.empty()) dev_->write_bytes(cell + kCellHeaderBytes, payload);
    dev_->flush_range(cell, kCellHeaderBytes + payload.size());
    dev_->fence();
    dev_->nt_store_u64(tail_off(), next);
    return QueueStatus::ok;
}

QueueStatus RingQueue::peek(MessageHeader& out) {
    uint64_t head = dev_->nt_load_u64(head_off());
    uint64_t tail = dev_->nt_load_u64(tail_off());
    if (head == tail) return QueueStatus::empty;
    dev_->read_bytes(cell_off(uint32_t(head)), as_writable_bytes_of(&out, sizeof out), true);
    return QueueStatus::ok;
}

QueueStatus RingQueue::try_dequeue(MessageHeader& out, std::span<std::byte> payload_out) {
    uint64_t head = dev_->nt_load_u64(head_off());
    uint64_t tail = dev_->nt_load_u64(tail_off());
    if (head == tail) return QueueStatus::empty;

    const uint64_t cell = cell_off(uint32_t(head));
    dev_->read_bytes(cell, as_writable_bytes_of(&out, sizeof out), true);
    if (out.payload_len > payload_capacity())
        raise(Errc::io_error, "cell header reports payload of " + std::to_string(out.payload_len));

    uint64_t n = std::min<uint64_t>(out.payload_len, payload_out.size());
    if (n > 0) dev_->read_bytes(cell + kCellHeaderBytes, payload_out.subspan(0, n), true);

    if (cfg_.checksum && n == out.payload_len) {
        uint64_t got = fnv1a64(std::span<const std::byte>(payload_out.data(), n));
        if (got != out.checksum)
            raise(Errc::io_error, "cell checksum mismatch on dequeue");
    }

    dev_->nt_store_u64(head_off(), (head + 1) & (cfg_.depth - 1));
    return QueueStatus::ok;
}

namespace {

std::string matrix_object_name(const std::string& comm_name) { return "qm." + comm_name; }
std::string matrix_config_name(const std::string& comm_name) { return "qm." + comm_name + ".cfg"; }

} // namespace

QueueMatrix QueueMatrix::create(Arena& arena, const std::string& comm_name, uint32_t nranks,
                                const QueueConfig& cfg) {
    cfg.validate();
    if (nranks == 0) raise(Errc::bad_config, "nranks must be >= 1");

    DeviceRegion& dev = arena.device();
    uint64_t meta[8] = {nranks, cfg.cell_size, cfg.depth, 0, 0, 0, 0, 0};
    ObjHandle cfg_obj = arena.create(matrix_config_name(comm_name), sizeof meta);
    uint64_t cfg_off = arena.device_offset(cfg_obj);
    dev.write_bytes(cfg_off, as_bytes_of(meta, sizeof meta));
    dev.flush_range(cfg_off, sizeof meta);
    dev.fence();

    ObjHandle obj = arena.create(matrix_object_name(comm_name), object_bytes(nranks, cfg));
    return QueueMatrix(dev, arena.device_offset(obj), nranks, cfg);
}

QueueMatrix QueueMatrix::open_existing(Arena& arena, const std::string& comm_name, uint32_t nranks,
                                       const QueueConfig& cfg, uint64_t deadline_ns) {
    cfg.validate();
    DeviceRegion& dev = arena.device();

    Backoff backoff;
    for (;;) {
        try {
            ObjHandle obj = arena.open(matrix_object_name(comm_name));

            uint64_t meta[8];
            ObjHandle cfg_obj = arena.open(matrix_config_name(comm_name));
            dev.read_bytes(arena.device_offset(cfg_obj), as_writable_bytes_of(meta, sizeof meta),
                           true);
            if (meta[0] != nranks || meta[1] != cfg.cell_size || meta[2] != cfg.depth)
                raise(Errc::geometry_mismatch,
                      "queue matrix " + comm_name + " was created with nranks=" +
                          std::to_string(meta[0]) + " cell=" + std::to_string(meta[1]) +
                          " depth=" + std::to_string(meta[2]));
            if (obj.size != object_bytes(nranks, cfg))
                raise(Errc::geometry_mismatch, "queue matrix object size mismatch");
            return QueueMatrix(dev, arena.device_offset(obj), nranks, cfg);
        } catch (const Error& e) {
            if (e.code() != Errc::not_found) throw;
            if (monotonic_ns() > deadline_ns)
                raise(Errc::timeout, "queue matrix " + comm_name + " never appeared");
            backoff.pause();
        }
    }
}

QueueMatrix QueueMatrix::create_or_open(Arena& arena, const std::string& comm_name, uint32_t nranks,
                                        const QueueConfig& cfg, uint32_t self,
                                        uint64_t deadline_ns) {
    if (self == 0) return create(arena, comm_name, nranks, cfg);
    return open_existing(arena, comm_name, nranks, cfg, deadline_ns);
}

RingQueue QueueMatrix::ring(uint32_t src, uint32_t dst) const {
    if (src >= nranks_ || dst >= nranks_)
        raise(Errc::invalid_rank, "ring(" + std::to_string(src) + "," + std::to_string(dst) +
                                      ") outside " + std::to_string(nranks_) + " ranks");
    return RingQueue(*dev_, base_ + ring_offset_in_object(src, dst, nranks_, cfg_), cfg_);
}

Channel::Channel(QueueMatrix matrix, uint32_t self)
    : mx_(std::move(matrix)), self_(self), unexpected_(mx_.nranks()) {
    if (self >= mx_.nranks()) raise(Errc::invalid_rank, "channel rank out of range");
}

void Channel::send(uint32_t dst, int32_t tag, std::span<const std::byte> data) {
    if (dst >= mx_.nranks())
        raise(Errc::invalid_rank, "send to rank " + std::to_string(dst) + " of " +
                                      std::to_string(mx_.nranks()));
    RingQueue ring = mx_.ring(self_, dst);
    const uint64_t cap = ring.payload_capacity();
    const uint64_t total = data.size();
    const uint32_t chunks = total == 0 ? 1 : uint32_t((total + cap - 1) / cap);

    uint64_t sent = 0;
    for (uint32_t ci = 0; ci < chunks; ++ci) {
        uint64_t n = std::min<uint64_t>(cap, total - sent);
        MessageHeader hdr;
        hdr.src_rank = self_;
        hdr.dst_rank = dst;
        hdr.tag = tag;
        hdr.chunk_index = ci;
        hdr.chunk_count = chunks;
        hdr.total_len = total;

        Backoff backoff;
        while (ring.try_enqueue(hdr, data.subspan(sent, n)) == QueueStatus::full)
            backoff.pause();
        sent += n;
    }
}

size_t Channel::recv(uint32_t src, int32_t tag, std::span<std::byte> buf) {
    if (src >= mx_.nranks())
        raise(Errc::invalid_rank, "recv from rank " + std::to_string(src) + " of " +
                                      std::to_string(mx_.nranks()));

    auto& stash = unexpected_[src];
    for (auto it = stash.begin(); it != stash.end(); ++it) {
        if (it->tag != tag) continue;
        Stashed msg = std::move(*it);
        stash.erase(it);
        last_chunks_ = msg.chunks;
        if (msg.data.size() > buf.size())
            raise(Errc::buffer_too_small,
                  "message of " + std::to_string(msg.data.size()) + " bytes", msg.data.size());
        std::memcpy(buf.data(), msg.data.data(), msg.data.size());
        return msg.data.size();
    }

    RingQueue ring = mx_.ring(src, self_);
    std::vector<std::byte> scratch;
    for (;;) {
        MessageHeader first;
        Backoff backoff;
        while (ring.peek(first) == QueueStatus::empty) backoff.pause();
        if (first.chunk_index != 0)
            raise(Errc::io_error, "stream from rank " + std::to_string(src) +
                                      " does not start at chunk 0");

        const bool matched = first.tag == tag;
        const uint64_t total = first.total_len;
        const bool fits = total <= buf.size();

        std::span<std::byte> dest;
        if (matched && fits) {
            dest = buf.subspan(0, total);
        } else {
            scratch.resize(total);
            dest = scratch;
        }

        uint64_t got = 0;
        for (uint32_t ci = 0; ci < first.chunk_count; ++ci) {
            MessageHeader hdr;
            Backoff chunk_backoff;
            while (ring.try_dequeue(hdr, dest.subspan(got)) == QueueStatus::empty)
                chunk_backoff.pause();
            if (hdr.tag != first.tag || hdr.chunk_index != ci ||
                hdr.chunk_count != first.chunk_count || hdr.total_len != total ||
                hdr.src_rank != first.src_rank)
                raise(Errc::io_error, "inconsistent chunk train from rank " + std::to_string(src));
            got += hdr.payload_len;
        }
        if (got != total)
            raise(Errc::io_error, "chunk payloads sum to " + std::to_string(got) +
                                      ", header promised " + std::to_string(total));

        last_chunks_ = first.chunk_count;
        if (matched) {
            if (!fits)
                raise(Errc::buffer_too_small, "message of " + std::to_string(total) + " bytes",
                      total);
            return total;
        }
        unexpected_[src].push_back(Stashed{first.tag, first.chunk_count, std::move(scratch)});
        scratch = {};
    }
}

} // namespace cmpi
