#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cmpi/arena.hpp"
#include "cmpi/device.hpp"
#include "cmpi/queue.hpp"
#include "cmpi/rma.hpp"
#include "cmpi/sync.hpp"

namespace cmpi {

struct RuntimeConfig {
    DeviceConfig device;
    QueueConfig queue;
    HashGeometry geometry = HashGeometry::defaults();
    uint64_t init_timeout_ms = 30000;
    uint64_t boot_id = 1; // launcher-provided run identity published by rank 0

    /// Read CMPI_DEVICE, CMPI_DEVICE_SIZE, CMPI_INCOHERENT, CMPI_CELL_SIZE,
    /// CMPI_QUEUE_DEPTH, CMPI_TIMEOUT_MS, CMPI_BOOT_ID, CMPI_HASH_CAP,
    /// CMPI_HASH_LEVELS.
    static RuntimeConfig from_env();
};

/// Per-process rank identity and its attached device, arena, world channel
/// and bootstrap barrier. Rank 0 formats the arena (when needed), replaces
/// any bootstrap objects left by a previous run, and publishes the boot id;
/// every rank then passes the initialization barrier before init returns.
class RankContext {
public:
    static RankContext init(uint32_t rank, uint32_t nranks, RuntimeConfig cfg);
    /// init() with rank/nranks taken from CMPI_RANK / CMPI_NRANKS.
    static RankContext init_from_env();

    RankContext(RankContext&&) = default;
    RankContext& operator=(RankContext&&) = default;

    /// Final barrier, then release of all handles. Calling twice is an error.
    void finalize();
    bool finalized() const noexcept { return finalized_; }

    void send(uint32_t dst, int32_t tag, std::span<const std::byte> data) {
        channel().send(dst, tag, data);
    }
    size_t recv(uint32_t src, int32_t tag, std::span<std::byte> buf) {
        return channel().recv(src, tag, buf);
    }
    void barrier();
    Window win_allocate_shared(const std::string& name, uint64_t seg_size);

    uint32_t rank() const noexcept { return rank_; }
    uint32_t nranks() const noexcept { return nranks_; }
    DeviceRegion& device() noexcept { return *dev_; }
    Arena& arena() noexcept { return *arena_; }
    Channel& channel();
    const RuntimeConfig& config() const noexcept { return cfg_; }
    uint64_t deadline_ns() const; // init_timeout from now, for collective retries

    static constexpr const char* kBarrierObject = "sys.barrier";
    static constexpr const char* kWorldComm = "world";

private:
    RankContext() = default;

    RuntimeConfig cfg_;
    uint32_t rank_ = 0;
    uint32_t nranks_ = 0;
    std::unique_ptr<DeviceRegion> dev_;
    std::unique_ptr<Arena> arena_;
    std::optional<QueueMatrix> qm_;
    std::optional<Channel> chan_;
    std::optional<BarrierArray> barrier_;
    bool finalized_ = false;
    bool live_ = false;
};

struct LaunchConfig {
    uint32_t nranks = 0;
    std::vector<std::string> command;
    std::string device_path; // empty: unique file under /dev/shm or /tmp
    uint64_t device_size = 1ull << 30;
    bool incoherent = false;
    uint32_t cell_size = 16 * 1024;
    uint32_t queue_depth = 64;
    uint64_t timeout_ms = 30000;
    bool cleanup = false; // remove the device file after the run
    std::vector<std::pair<std::string, std::string>> extra_env;
};

struct LaunchResult {
    int exit_code = 0;                // first nonzero rank status
    std::vector<int> rank_status;     // exit code, or 128+signal
    std::string device_path;
};

/// Spawn nranks processes of `command` with CMPI_RANK/CMPI_NRANKS/CMPI_DEVICE
/// (and the rest of the runtime environment) set, and collect their exits.
/// A bare "bench" command resolves to the cmpi-bench binary next to the
/// calling executable when present.
LaunchResult launch(const LaunchConfig& cfg);

/// Unique device path in a ram-backed directory when available.
std::string default_device_path();

} // namespace cmpi
