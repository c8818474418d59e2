#include "cmpi/bench.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>

#include "cmpi/error.hpp"

namespace cmpi {

namespace {

constexpr int32_t kDataTag = 0x100000;
constexpr int32_t kAckTag = 0x200000;
constexpr int32_t kResultTag = 0x300000;

uint32_t bench_call_seq = 0; // collective call counter, same on every rank

void fill_pattern(std::span<std::byte> buf, uint64_t seed) {
    uint64_t x = seed ^ 0x9e3779b97f4a7c15ull;
    size_t i = 0;
    auto next = [&x] {
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        return x * 2685821657736338717ull;
    };
    while (i + 8 <= buf.size()) {
        uint64_t v = next();
        std::memcpy(buf.data() + i, &v, 8);
        i += 8;
    }
    if (i < buf.size()) {
        uint64_t v = next();
        std::memcpy(buf.data() + i, &v, buf.size() - i);
    }
}

void embed_counter(std::span<std::byte> buf, uint64_t counter) {
    if (buf.size() >= 8) std::memcpy(buf.data(), &counter, 8);
}

[[noreturn]] void corrupt(const char* what, uint64_t size) {
    raise(Errc::io_error, std::string("benchmark payload corruption (") + what + ") at size " +
                              std::to_string(size));
}

// Cheap per-message counter check, full compare on a sampled cadence. The
// first 8 bytes carry the counter; the tail must match the fixed pattern.
void verify_payload(std::span<const std::byte> got, std::span<const std::byte> expected_pattern,
                    uint64_t counter, uint32_t iter, uint64_t size) {
    if (size >= 8) {
        uint64_t seen = 0;
        std::memcpy(&seen, got.data(), 8);
        if (seen != counter) corrupt("sequence counter", size);
    }
    if (iter % 64 == 0 && size > 8) {
        if (std::memcmp(got.data() + 8, expected_pattern.data() + 8, size - 8) != 0)
            corrupt("payload bytes", size);
    }
}

uint32_t eff_iters(uint64_t size, uint32_t base, Metric metric) {
    uint32_t divisor = 1;
    if (size >= (1u << 20))
        divisor = metric == Metric::bandwidth ? 50 : 10;
    else if (size >= (64u << 10))
        divisor = metric == Metric::bandwidth ? 10 : 2;
    uint32_t floor = metric == Metric::bandwidth ? 2 : 4;
    return std::max(std::max(base / divisor, floor), 1u);
}

// Active ranks (< pairs) report their per-size measurement to rank 0.
double gather_mean(RankContext& ctx, uint32_t pairs, int32_t tag, double mine) {
    if (ctx.rank() == 0) {
        double sum = mine;
        for (uint32_t i = 1; i < pairs; ++i) {
            double v = 0;
            ctx.recv(i, tag, as_writable_bytes_of(&v, sizeof v));
            sum += v;
        }
        return sum / pairs;
    }
    if (ctx.rank() < pairs) ctx.send(0, tag, as_bytes_of(&mine, sizeof mine));
    return 0;
}

struct WindowState {
    Window win;
    std::vector<std::byte> expected; // partner segment pattern, counter area zeroed
};

} // namespace

const char* pattern_name(Pattern p) {
    switch (p) {
        case Pattern::one_sided_get: return "one_sided_get";
        case Pattern::one_sided_put: return "one_sided_put";
        case Pattern::two_sided: return "two_sided";
    }
    return "?";
}

const char* metric_name(Metric m) {
    return m == Metric::latency ? "latency" : "bandwidth";
}

Pattern parse_pattern(const std::string& s) {
    if (s == "one_sided_get" || s == "get") return Pattern::one_sided_get;
    if (s == "one_sided_put" || s == "put") return Pattern::one_sided_put;
    if (s == "two_sided" || s == "pingpong") return Pattern::two_sided;
    raise(Errc::bad_config, "unknown pattern " + s);
}

Metric parse_metric(const std::string& s) {
    if (s == "latency" || s == "lat") return Metric::latency;
    if (s == "bandwidth" || s == "bw") return Metric::bandwidth;
    raise(Errc::bad_config, "unknown metric " + s);
}

std::vector<uint64_t> BenchConfig::default_sizes() {
    std::vector<uint64_t> sizes;
    for (uint64_t s = 1; s <= (8u << 20); s <<= 1) sizes.push_back(s);
    return sizes;
}

void BenchConfig::validate(uint32_t nranks) const {
    if (pairs < 1) raise(Errc::bad_config, "pairs must be >= 1");
    if (nranks != 2 * pairs)
        raise(Errc::bad_config, "need exactly 2*pairs ranks, got " + std::to_string(nranks) +
                                    " for " + std::to_string(pairs) + " pairs");
    if (sizes.empty()) raise(Errc::bad_config, "no message sizes");
    for (size_t i = 0; i < sizes.size(); ++i) {
        if (i > 0 && sizes[i] <= sizes[i - 1])
            raise(Errc::bad_config, "sizes must be strictly ascending");
        if (metric == Metric::bandwidth && sizes[i] == 0)
            raise(Errc::bad_config, "zero-size message in a bandwidth sweep");
    }
    if (iters < 1) raise(Errc::bad_config, "iters must be >= 1");
    if (metric == Metric::bandwidth && window < 1)
        raise(Errc::bad_config, "window must be >= 1");
}

namespace {

WindowState make_bench_window(RankContext& ctx, const BenchConfig& cfg) {
    uint64_t seg = *std::max_element(cfg.sizes.begin(), cfg.sizes.end());
    std::string name = "bench.w" + std::to_string(bench_call_seq);
    return WindowState{ctx.win_allocate_shared(name, seg), {}};
}

std::vector<BenchRecord> sweep(RankContext& ctx, const BenchConfig& cfg) {
    const uint32_t pairs = cfg.pairs;
    const uint32_t self = ctx.rank();
    const bool active = self < pairs;
    const uint32_t partner = active ? self + pairs : self - pairs;
    const bool one_sided = cfg.pattern != Pattern::two_sided;
    const bool bw = cfg.metric == Metric::bandwidth;
    const uint32_t cell = ctx.config().queue.cell_size;

    std::optional<WindowState> ws;
    if (one_sided) ws.emplace(make_bench_window(ctx, cfg));

    std::vector<BenchRecord> records;
    std::vector<std::byte> sbuf, rbuf, pattern;

    for (size_t si = 0; si < cfg.sizes.size(); ++si) {
        const uint64_t size = cfg.sizes[si];
        const uint32_t iters = eff_iters(size, cfg.iters, cfg.metric);
        const uint32_t warmup = std::max(eff_iters(size, cfg.warmup, cfg.metric) / 2, 1u);
        const uint32_t window = bw ? cfg.window : 1;
        const int32_t data_tag = kDataTag + int32_t(si);
        const int32_t ack_tag = kAckTag + int32_t(si);

        pattern.assign(size, std::byte{0});
        fill_pattern(pattern, size ^ 0xbeef);
        embed_counter(pattern, 0); // gets carry no sequence counter
        sbuf = pattern;
        rbuf.assign(std::max<uint64_t>(size, 8), std::byte{0});

        // One-sided: the target seeds its own segment for gets; puts land in
        // the target segment and are checked there after each epoch.
        if (one_sided && !active && cfg.pattern == Pattern::one_sided_get) {
            uint64_t seg_off = ws->win.segment_offset(self);
            ctx.device().write_bytes(seg_off, std::span<const std::byte>(pattern));
            ctx.device().flush_range(seg_off, size);
            ctx.device().fence();
        }
        if (one_sided && active) ws->expected = pattern;

        ctx.barrier();

        uint64_t elapsed_ns = 0;
        uint64_t t_sweep0 = 0;
        for (uint32_t it = 0; it < warmup + iters; ++it) {
            const bool timed = it >= warmup;
            if (it == warmup) {
                ctx.barrier(); // align ranks before the timed region
                t_sweep0 = monotonic_ns();
            }
            uint64_t t0 = monotonic_ns();

            switch (cfg.pattern) {
                case Pattern::two_sided: {
                    if (active) {
                        for (uint32_t w = 0; w < window; ++w) {
                            embed_counter(sbuf, uint64_t(it) * window + w);
                            ctx.send(partner, data_tag,
                                     std::span<const std::byte>(sbuf.data(), size));
                        }
                        uint64_t n = ctx.recv(partner, bw ? ack_tag : data_tag,
                                              std::span<std::byte>(rbuf));
                        if (!bw) {
                            if (n != size) corrupt("echo length", size);
                            verify_payload({rbuf.data(), size}, pattern, it, it, size);
                        }
                    } else {
                        for (uint32_t w = 0; w < window; ++w) {
                            uint64_t n = ctx.recv(partner, data_tag, std::span<std::byte>(rbuf));
                            if (n != size) corrupt("message length", size);
                            verify_payload({rbuf.data(), size}, pattern,
                                           uint64_t(it) * window + w, it, size);
                        }
                        if (bw) {
                            uint64_t token = it;
                            ctx.send(partner, ack_tag, as_bytes_of(&token, sizeof token));
                        } else {
                            ctx.send(partner, data_tag,
                                     std::span<const std::byte>(rbuf.data(), size));
                        }
                    }
                    break;
                }
                case Pattern::one_sided_get: {
                    if (active) {
                        uint32_t t = partner;
                        ws->win.start({&t, 1});
                        for (uint32_t w = 0; w < window; ++w) {
                            ws->win.get(t, 0, std::span<std::byte>(rbuf.data(), size));
                            verify_payload({rbuf.data(), size}, ws->expected, 0, it, size);
                        }
                        ws->win.complete();
                    } else {
                        uint32_t o = partner;
                        ws->win.post({&o, 1});
                        ws->win.wait();
                    }
                    break;
                }
                case Pattern::one_sided_put: {
                    if (active) {
                        uint32_t t = partner;
                        ws->win.start({&t, 1});
                        for (uint32_t w = 0; w < window; ++w) {
                            embed_counter(sbuf, uint64_t(it) * window + w);
                            ws->win.put(t, 0, std::span<const std::byte>(sbuf.data(), size));
                        }
                        ws->win.complete();
                    } else {
                        uint32_t o = partner;
                        ws->win.post({&o, 1});
                        ws->win.wait();
                        ctx.device().read_bytes(ws->win.segment_offset(self),
                                                std::span<std::byte>(rbuf.data(), size), true);
                        verify_payload({rbuf.data(), size}, pattern,
                                       uint64_t(it) * window + window - 1, it, size);
                    }
                    break;
                }
            }

            if (timed) elapsed_ns += monotonic_ns() - t0;
        }

        ctx.barrier();
        uint64_t t_sweep1 = monotonic_ns();

        double value = 0;
        if (!bw) {
            double per_iter_us = double(elapsed_ns) / iters / 1000.0;
            double lat_us = cfg.pattern == Pattern::two_sided ? per_iter_us / 2 : per_iter_us;
            value = gather_mean(ctx, pairs, kResultTag + int32_t(si), active ? lat_us : 0);
        } else if (self == 0) {
            double secs = double(t_sweep1 - t_sweep0) / 1e9;
            double total_bytes = double(pairs) * iters * window * double(size);
            value = total_bytes / 1e6 / secs;
        }

        if (self == 0) {
            BenchRecord rec;
            rec.pattern = pattern_name(cfg.pattern);
            rec.metric = metric_name(cfg.metric);
            rec.size = size;
            rec.pairs = pairs;
            rec.cell_size = cell;
            rec.value = value;
            rec.iters = iters;
            records.push_back(std::move(rec));
        }
    }

    ctx.barrier();
    return records;
}

} // namespace

std::vector<BenchRecord> run_latency(RankContext& ctx, const BenchConfig& cfg) {
    BenchConfig c = cfg;
    c.metric = Metric::latency;
    c.validate(ctx.nranks());
    ++bench_call_seq;
    return sweep(ctx, c);
}

std::vector<BenchRecord> run_bandwidth(RankContext& ctx, const BenchConfig& cfg) {
    BenchConfig c = cfg;
    c.metric = Metric::bandwidth;
    c.validate(ctx.nranks());
    ++bench_call_seq;
    return sweep(ctx, c);
}

void emit_csv(std::span<const BenchRecord> records, const std::string& path) {
    std::vector<BenchRecord> rows(records.begin(), records.end());
    std::stable_sort(rows.begin(), rows.end(), [](const BenchRecord& a, const BenchRecord& b) {
        if (a.pattern != b.pattern) return a.pattern < b.pattern;
        if (a.size != b.size) return a.size < b.size;
        return a.pairs < b.pairs;
    });

    FILE* f = std::fopen(path.c_str(), "w");
    if (!f) raise(Errc::io_error, "cannot write " + path + ": " + std::strerror(errno));
    std::fprintf(f, "pattern,metric,size,pairs,cell_size,value,iters\n");
    for (const BenchRecord& r : rows)
        std::fprintf(f, "%s,%s,%llu,%u,%u,%.3f,%u\n", r.pattern.c_str(), r.metric.c_str(),
                     (unsigned long long)r.size, r.pairs, r.cell_size, r.value, r.iters);
    if (std::fclose(f) != 0) raise(Errc::io_error, "error closing " + path);
}

} // namespace cmpi
