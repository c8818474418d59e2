#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmpi/runtime.hpp"

namespace cmpi {

enum class Pattern { one_sided_get, one_sided_put, two_sided };
enum class Metric { latency, bandwidth };

const char* pattern_name(Pattern p);
const char* metric_name(Metric m);
Pattern parse_pattern(const std::string& s);
Metric parse_metric(const std::string& s);

struct BenchConfig {
    Pattern pattern = Pattern::two_sided;
    Metric metric = Metric::latency;
    std::vector<uint64_t> sizes = default_sizes(); // ascending
    uint32_t pairs = 1;
    uint32_t warmup = 100;
    uint32_t iters = 1000;
    uint32_t window = 64; // outstanding messages per bandwidth iteration

    static std::vector<uint64_t> default_sizes(); // powers of two, 1 B .. 8 MiB
    void validate(uint32_t nranks) const;
};

struct BenchRecord {
    std::string pattern;
    std::string metric;
    uint64_t size = 0;
    uint32_t pairs = 0;
    uint32_t cell_size = 0;
    double value = 0; // us for latency, MB/s (1e6 bytes) for bandwidth
    uint32_t iters = 0;
};

/// Ping-pong (two-sided) or PSCW-epoch (one-sided) latency sweep. Every rank
/// must call with the same config; rank 0 returns one record per size,
/// other ranks return an empty list. Payloads are integrity-checked as they
/// flow; corruption raises instead of producing numbers.
std::vector<BenchRecord> run_latency(RankContext& ctx, const BenchConfig& cfg);

/// Windowed streaming bandwidth sweep, aggregated across pairs by rank 0.
std::vector<BenchRecord> run_bandwidth(RankContext& ctx, const BenchConfig& cfg);

/// CSV with header pattern,metric,size,pairs,cell_size,value,iters; rows
/// ordered by (pattern, size, pairs). Overwrites path.
void emit_csv(std::span<const BenchRecord> records, const std::string& path);

} // namespace cmpi
