#include <cstring>
#include <deque>
#include <random>
#include <thread>
#include <vector>

#include "cmpi/error.hpp"
#include "cmpi/queue.hpp"
#include "cmpi/runtime.hpp"
#include "mp_main.hpp"

using namespace cmpi;

namespace {

struct TestArena {
    mptest::TempFile file;
    DeviceRegion dev;
    Arena arena;

    explicit TestArena(uint64_t cap = 32 << 20, CoherenceMode mode = CoherenceMode::coherent)
        : dev(DeviceRegion::open({file.path(), cap, mode})),
          arena(Arena::format(dev, HashGeometry::with(100, 2))) {}
};

std::vector<std::byte> pattern_bytes(size_t n, uint64_t seed) {
    std::vector<std::byte> out(n);
    std::mt19937_64 rng(seed);
    for (auto& b : out) b = std::byte(rng());
    return out;
}

MessageHeader simple_header(uint32_t src, uint32_t dst, int32_t tag) {
    MessageHeader h;
    h.src_rank = src;
    h.dst_rank = dst;
    h.tag = tag;
    return h;
}

} // namespace

TEST_CASE("queue configuration is validated") {
    QueueConfig bad_depth{16384, 3, false};
    CHECK_THROWS_AS(bad_depth.validate(), Error);
    QueueConfig small_cell{1024, 8, false};
    CHECK_THROWS_AS(small_cell.validate(), Error);
    QueueConfig odd_cell{4096 + 64, 8, false};
    CHECK_THROWS_AS(odd_cell.validate(), Error);

    TestArena t;
    CHECK_THROWS_AS(QueueMatrix::create(t.arena, "bad", 2, QueueConfig{16384, 3, false}), Error);
}

TEST_CASE("matrix layout matches the documented arithmetic") {
    // nranks=2, depth=8, 16 KiB cells: object is exactly 4 rings, and the
    // 0->1 ring sits at index 1*2+0 = 2.
    QueueConfig cfg{16 * 1024, 8, false};
    uint64_t qb = RingQueue::queue_bytes(cfg);
    CHECK(qb == 2 * 64 + 8 * 16384);
    CHECK(QueueMatrix::object_bytes(2, cfg) == 4 * qb);
    CHECK(QueueMatrix::ring_offset_in_object(0, 1, 2, cfg) == 2 * qb);

    TestArena t;
    QueueMatrix mx = QueueMatrix::create(t.arena, "w", 2, cfg);
    ObjHandle h = t.arena.open("qm.w");
    CHECK(h.size == 4 * qb);
    CHECK(mx.ring(0, 1).head_off() == t.arena.device_offset(h) + 2 * qb);
}

TEST_CASE("ring offsets equal a brute-force layout enumeration and never overlap") {
    for (uint32_t nranks : {1u, 2u, 3u, 5u, 8u}) {
        for (uint32_t depth : {2u, 4u, 16u}) {
            QueueConfig cfg{4096, depth, false};
            uint64_t qb = RingQueue::queue_bytes(cfg);
            // enumerate rings receiver-major, summing sizes as we go
            std::vector<std::pair<uint64_t, uint64_t>> intervals;
            uint64_t cursor = 0;
            for (uint32_t r = 0; r < nranks; ++r) {
                for (uint32_t s = 0; s < nranks; ++s) {
                    CHECK(QueueMatrix::ring_offset_in_object(s, r, nranks, cfg) == cursor);
                    intervals.emplace_back(cursor, qb);
                    cursor += qb;
                }
            }
            CHECK(cursor == QueueMatrix::object_bytes(nranks, cfg));
            for (size_t i = 1; i < intervals.size(); ++i)
                CHECK(intervals[i - 1].first + intervals[i - 1].second == intervals[i].first);
        }
    }
}

TEST_CASE("ring round trip, FIFO order, and capacity of depth-1") {
    TestArena t;
    QueueConfig cfg{4096, 8, true};
    QueueMatrix mx = QueueMatrix::create(t.arena, "w", 1, cfg);
    RingQueue ring = mx.ring(0, 0);

    MessageHeader out;
    std::vector<std::byte> buf(4096);
    CHECK(ring.try_dequeue(out, buf) == QueueStatus::empty); // fresh queue

    auto payload = pattern_bytes(100, 5);
    CHECK(ring.try_enqueue(simple_header(0, 0, 7), payload) == QueueStatus::ok);
    CHECK(ring.try_dequeue(out, buf) == QueueStatus::ok);
    CHECK(out.tag == 7);
    CHECK(out.payload_len == 100);
    CHECK(std::memcmp(buf.data(), payload.data(), 100) == 0);

    // FIFO
    for (int i = 0; i < 3; ++i)
        CHECK(ring.try_enqueue(simple_header(0, 0, i), {}) == QueueStatus::ok);
    for (int i = 0; i < 3; ++i) {
        CHECK(ring.try_dequeue(out, buf) == QueueStatus::ok);
        CHECK(out.tag == i);
    }

    // depth 8 holds 7 messages
    for (int i = 0; i < 7; ++i)
        CHECK(ring.try_enqueue(simple_header(0, 0, i), {}) == QueueStatus::ok);
    CHECK(ring.try_enqueue(simple_header(0, 0, 99), {}) == QueueStatus::full);

    CHECK_THROWS_AS(ring.try_enqueue(simple_header(0, 0, 0), pattern_bytes(4096, 1)), Error);
}

TEST_CASE("enqueue publishes only at the tail store in emulated-incoherent mode") {
    mptest::TempFile f;
    DeviceRegion prod = DeviceRegion::open({f.path(), 32 << 20, CoherenceMode::incoherent_emulated});
    DeviceRegion cons = DeviceRegion::open({f.path(), 32 << 20, CoherenceMode::incoherent_emulated});

    Arena pa = Arena::format(prod, HashGeometry::with(100, 2));
    QueueConfig cfg{4096, 8, false};
    QueueMatrix pmx = QueueMatrix::create(pa, "w", 1, cfg);

    Arena ca = Arena::attach(cons, 0);
    QueueMatrix cmx = QueueMatrix::open_existing(ca, "w", 1, cfg, monotonic_ns() + 1000000000ull);

    RingQueue pring = pmx.ring(0, 0);
    RingQueue cring = cmx.ring(0, 0);

    // producer writes and flushes the cell but withholds the tail store
    MessageHeader hdr = simple_header(0, 0, 42);
    hdr.payload_len = 8;
    hdr.total_len = 8;
    auto payload = pattern_bytes(8, 3);
    prod.write_bytes(pring.cell_off(0), as_bytes_of(&hdr, sizeof hdr));
    prod.write_bytes(pring.cell_off(0) + kCellHeaderBytes, payload);
    prod.flush_range(pring.cell_off(0), sizeof hdr + 8);
    prod.fence();

    MessageHeader out;
    std::vector<std::byte> buf(4096);
    CHECK(cring.try_dequeue(out, buf) == QueueStatus::empty); // not yet visible

    prod.nt_store_u64(pring.tail_off(), 1); // publish
    CHECK(cring.try_dequeue(out, buf) == QueueStatus::ok);
    CHECK(out.tag == 42);
    CHECK(std::memcmp(buf.data(), payload.data(), 8) == 0);
}

TEST_CASE("interleaved producer/consumer stream matches an in-process oracle") {
    constexpr int kMessages = 100000;
    mptest::TempFile f;

    // oracle: the same generated stream through a std::deque
    uint64_t oracle_sum = 0;
    {
        std::mt19937_64 rng(123);
        std::deque<std::vector<std::byte>> q;
        for (int i = 0; i < kMessages; ++i) {
            size_t n = rng() % 512;
            std::vector<std::byte> msg(n);
            for (auto& b : msg) b = std::byte(rng());
            q.push_back(std::move(msg));
            oracle_sum = fnv1a64(q.front(), oracle_sum + 1);
            q.pop_front();
        }
    }

    uint64_t consumed_sum = 0;
    {
        DeviceRegion prod =
            DeviceRegion::open({f.path(), 32 << 20, CoherenceMode::incoherent_emulated});
        DeviceRegion cons =
            DeviceRegion::open({f.path(), 32 << 20, CoherenceMode::incoherent_emulated});
        Arena pa = Arena::format(prod, HashGeometry::with(100, 2));
        QueueConfig cfg{4096, 16, true};
        QueueMatrix pmx = QueueMatrix::create(pa, "w", 1, cfg);
        Arena ca = Arena::attach(cons, 0);
        QueueMatrix cmx = QueueMatrix::open_existing(ca, "w", 1, cfg, monotonic_ns() + 1000000000ull);

        std::thread producer([&] {
            std::mt19937_64 rng(123);
            RingQueue ring = pmx.ring(0, 0);
            for (int i = 0; i < kMessages; ++i) {
                size_t n = rng() % 512;
                std::vector<std::byte> msg(n);
                for (auto& b : msg) b = std::byte(rng());
                Backoff backoff;
                while (ring.try_enqueue(simple_header(0, 0, i & 0x7fffffff), msg) ==
                       QueueStatus::full)
                    backoff.pause();
            }
        });

        RingQueue ring = cmx.ring(0, 0);
        MessageHeader out;
        std::vector<std::byte> buf(4096);
        for (int i = 0; i < kMessages; ++i) {
            Backoff backoff;
            while (ring.try_dequeue(out, buf) == QueueStatus::empty) backoff.pause();
            CHECK(out.tag == (i & 0x7fffffff)); // FIFO
            consumed_sum = fnv1a64({buf.data(), out.payload_len}, consumed_sum + 1);
        }
        producer.join();
    }
    CHECK(consumed_sum == oracle_sum);
}

namespace {

struct TwoRankChannels {
    mptest::TempFile file;
    DeviceRegion dev0, dev1;
    Arena arena0, arena1;
    QueueMatrix mx0, mx1;
    Channel ch0, ch1;

    explicit TwoRankChannels(QueueConfig cfg, uint64_t cap = 128 << 20,
                             CoherenceMode mode = CoherenceMode::coherent)
        : dev0(DeviceRegion::open({file.path(), cap, mode})),
          dev1(DeviceRegion::open({file.path(), cap, mode})),
          arena0(Arena::format(dev0, HashGeometry::with(100, 2), 0)),
          arena1(Arena::attach(dev1, 1)),
          mx0(QueueMatrix::create(arena0, "w", 2, cfg)),
          mx1(QueueMatrix::open_existing(arena1, "w", 2, cfg, monotonic_ns() + 2000000000ull)),
          ch0(mx0, 0),
          ch1(mx1, 1) {}
};

} // namespace

TEST_CASE("send splits into the documented chunk counts") {
    // 16 KiB default cells: an 8 KiB message is a single chunk; 64 KiB cells
    // cannot carry a 64 KiB message plus its header, so it needs two chunks;
    // 100 KiB over 64 KiB cells is ceil(102400/65472) = 2.
    QueueConfig cfg64{64 * 1024, 8, false};
    TwoRankChannels t(cfg64);

    std::vector<std::pair<uint64_t, uint32_t>> cases = {
        {1, 1}, {65472, 1}, {64 * 1024, 2}, {100 * 1024, 2}, {1 << 20, 17}};
    for (auto [size, expected_chunks] : cases) {
        auto msg = pattern_bytes(size, size);
        std::thread sender([&] { t.ch0.send(1, 5, msg); });
        std::vector<std::byte> buf(size);
        size_t n = t.ch1.recv(0, 5, buf);
        sender.join();
        CHECK(n == size);
        CHECK(t.ch1.last_recv_chunks() == expected_chunks);
        CHECK(uint64_t(expected_chunks) ==
              (size + (64 * 1024 - 64) - 1) / (64 * 1024 - 64)); // independent ceil
        CHECK(std::memcmp(buf.data(), msg.data(), size) == 0);
    }

    QueueConfig cfg16{16 * 1024, 8, false};
    TwoRankChannels t16(cfg16);
    auto msg = pattern_bytes(8 * 1024, 9);
    std::thread sender([&] { t16.ch0.send(1, 5, msg); });
    std::vector<std::byte> buf(8 * 1024);
    t16.ch1.recv(0, 5, buf);
    sender.join();
    CHECK(t16.ch1.last_recv_chunks() == 1); // a "short message"
}

TEST_CASE("byte-identical transfer across sizes in emulated-incoherent mode") {
    QueueConfig cfg{16 * 1024, 64, true};
    TwoRankChannels t(cfg, 128 << 20, CoherenceMode::incoherent_emulated);

    std::vector<uint64_t> sizes = {0, 1, 63, 64, 65, 4096, 16320, 16321, 100000, 1 << 20};
    std::thread sender([&] {
        for (uint64_t s : sizes) t.ch0.send(1, int32_t(s % 1000), pattern_bytes(s, s * 7 + 1));
    });
    for (uint64_t s : sizes) {
        std::vector<std::byte> buf(std::max<uint64_t>(s, 1));
        size_t n = t.ch1.recv(0, int32_t(s % 1000), buf);
        CHECK(n == s);
        auto expect = pattern_bytes(s, s * 7 + 1);
        CHECK(std::memcmp(buf.data(), expect.data(), s) == 0);
    }
    sender.join();
}

TEST_CASE("tag matching defers non-matching messages to the unexpected list") {
    QueueConfig cfg{4096, 16, false};
    TwoRankChannels t(cfg);

    auto m1 = pattern_bytes(100, 1);
    auto m2 = pattern_bytes(200, 2);
    t.ch0.send(1, 1, m1);
    t.ch0.send(1, 2, m2);

    std::vector<std::byte> buf(4096);
    CHECK(t.ch1.recv(0, 2, buf) == 200); // out of order: tag 2 first
    CHECK(std::memcmp(buf.data(), m2.data(), 200) == 0);
    CHECK(t.ch1.recv(0, 1, buf) == 100); // then tag 1 from the stash
    CHECK(std::memcmp(buf.data(), m1.data(), 100) == 0);
}

TEST_CASE("zero-length messages round trip") {
    QueueConfig cfg{4096, 8, false};
    TwoRankChannels t(cfg);
    t.ch0.send(1, 3, {});
    std::vector<std::byte> buf(16);
    CHECK(t.ch1.recv(0, 3, buf) == 0);
}

TEST_CASE("too-small receive buffer consumes the message and reports its length") {
    QueueConfig cfg{4096, 16, false};
    TwoRankChannels t(cfg);

    t.ch0.send(1, 9, pattern_bytes(500, 4));
    std::vector<std::byte> tiny(100);
    try {
        t.ch1.recv(0, 9, tiny);
        FAIL("expected buffer-too-small");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::buffer_too_small);
        CHECK(e.value() == 500);
    }
    // stream stays usable
    t.ch0.send(1, 10, pattern_bytes(8, 5));
    std::vector<std::byte> buf(8);
    CHECK(t.ch1.recv(0, 10, buf) == 8);
}

TEST_CASE("self-send on a single-rank matrix") {
    TestArena t;
    QueueConfig cfg{4096, 8, false};
    QueueMatrix mx = QueueMatrix::create(t.arena, "self", 1, cfg);
    Channel ch(mx, 0);
    auto msg = pattern_bytes(123, 6);
    ch.send(0, 1, msg);
    std::vector<std::byte> buf(123);
    CHECK(ch.recv(0, 1, buf) == 123);
    CHECK(std::memcmp(buf.data(), msg.data(), 123) == 0);

    CHECK_THROWS_AS(ch.send(1, 0, msg), Error); // invalid destination
}

TEST_CASE("mismatched queue configuration is detected at open") {
    mptest::TempFile f;
    DeviceRegion d0 = DeviceRegion::open({f.path(), 32 << 20, CoherenceMode::coherent});
    DeviceRegion d1 = DeviceRegion::open({f.path(), 32 << 20, CoherenceMode::coherent});
    Arena a0 = Arena::format(d0, HashGeometry::with(100, 2), 0);
    QueueMatrix::create(a0, "w", 2, QueueConfig{16384, 64, false});

    Arena a1 = Arena::attach(d1, 1);
    // same object size (32768*32 == 16384*64) but different shape
    try {
        QueueMatrix::open_existing(a1, "w", 2, QueueConfig{32768, 32, false},
                                   monotonic_ns() + 1000000000ull);
        FAIL("expected geometry-mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::geometry_mismatch);
    }
}
