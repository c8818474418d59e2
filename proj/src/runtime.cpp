#include "cmpi/runtime.hpp"

#include <atomic>
#include <cerrno>
#include <cstdlib>
#include <cstring>

#include <signal.h>
#include <strings.h>
#include <sys/stat.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "cmpi/error.hpp"

namespace cmpi {

namespace {

const char* env_or(const char* name, const char* fallback) {
    const char* v = std::getenv(name);
    return v && *v ? v : fallback;
}

uint64_t parse_size(const std::string& s) {
    if (s.empty()) raise(Errc::bad_config, "empty size");
    char* end = nullptr;
    unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    uint64_t mult = 1;
    if (end && *end) {
        switch (*end) {
            case 'k': case 'K': mult = 1024; break;
            case 'm': case 'M': mult = 1024 * 1024; break;
            case 'g': case 'G': mult = 1024ull * 1024 * 1024; break;
            default: raise(Errc::bad_config, "bad size suffix in " + s);
        }
    }
    return uint64_t(v) * mult;
}

bool env_flag(const char* name) {
    const char* v = std::getenv(name);
    return v && *v && std::strcmp(v, "0") != 0 && strcasecmp(v, "false") != 0;
}

bool object_exists(Arena& arena, const std::string& name) {
    try {
        arena.open(name);
        return true;
    } catch (const Error& e) {
        if (e.code() == Errc::not_found) return false;
        throw;
    }
}

} // namespace

RuntimeConfig RuntimeConfig::from_env() {
    RuntimeConfig cfg;
    const char* dev = std::getenv("CMPI_DEVICE");
    if (!dev || !*dev) raise(Errc::bad_config, "CMPI_DEVICE is not set");
    cfg.device.path = dev;
    cfg.device.capacity = parse_size(env_or("CMPI_DEVICE_SIZE", "1073741824"));
    cfg.device.mode = env_flag("CMPI_INCOHERENT") ? CoherenceMode::incoherent_emulated
                                                  : CoherenceMode::coherent;
    cfg.queue.cell_size = uint32_t(parse_size(env_or("CMPI_CELL_SIZE", "16384")));
    cfg.queue.depth = uint32_t(parse_size(env_or("CMPI_QUEUE_DEPTH", "64")));
    cfg.queue.checksum = env_flag("CMPI_CELL_CHECKSUM");
    cfg.init_timeout_ms = std::strtoull(env_or("CMPI_TIMEOUT_MS", "30000"), nullptr, 10);
    cfg.boot_id = std::strtoull(env_or("CMPI_BOOT_ID", "1"), nullptr, 10);
    uint64_t cap = std::strtoull(env_or("CMPI_HASH_CAP", "200000"), nullptr, 10);
    uint32_t levels = uint32_t(std::strtoull(env_or("CMPI_HASH_LEVELS", "10"), nullptr, 10));
    cfg.geometry = HashGeometry::with(cap, levels);
    return cfg;
}

uint64_t RankContext::deadline_ns() const {
    return monotonic_ns() + cfg_.init_timeout_ms * 1000000ull;
}

RankContext RankContext::init_from_env() {
    const char* r = std::getenv("CMPI_RANK");
    const char* n = std::getenv("CMPI_NRANKS");
    if (!r || !n) raise(Errc::bad_config, "CMPI_RANK / CMPI_NRANKS are not set");
    return init(uint32_t(std::strtoul(r, nullptr, 10)), uint32_t(std::strtoul(n, nullptr, 10)),
                RuntimeConfig::from_env());
}

RankContext RankContext::init(uint32_t rank, uint32_t nranks, RuntimeConfig cfg) {
    if (nranks == 0 || nranks > kMaxRanks)
        raise(Errc::bad_config, "nranks must be in [1, " + std::to_string(kMaxRanks) + "]");
    if (rank >= nranks) raise(Errc::invalid_rank, "rank " + std::to_string(rank));

    RankContext ctx;
    ctx.cfg_ = cfg;
    ctx.rank_ = rank;
    ctx.nranks_ = nranks;
    ctx.dev_ = std::make_unique<DeviceRegion>(DeviceRegion::open(cfg.device));
    const uint64_t deadline = monotonic_ns() + cfg.init_timeout_ms * 1000000ull;

    ObjHandle barrier_obj;
    if (rank == 0) {
        if (Arena::formatted(*ctx.dev_)) {
            ctx.arena_ = std::make_unique<Arena>(Arena::attach(*ctx.dev_, rank));
            if (ctx.arena_->header().geometry != cfg.geometry)
                raise(Errc::geometry_mismatch, "device is formatted with a different geometry");
        } else {
            ctx.arena_ = std::make_unique<Arena>(Arena::format(*ctx.dev_, cfg.geometry, rank));
        }
        Arena& arena = *ctx.arena_;

        // Invalidate the previous run's bootstrap before replacing its
        // objects, so late ranks of this run cannot latch onto stale handles.
        arena.set_boot_word(0);
        arena.device().fence();
        for (const std::string& name :
             {std::string(kBarrierObject), "qm." + std::string(kWorldComm),
              "qm." + std::string(kWorldComm) + ".cfg"}) {
            if (object_exists(arena, name)) arena.unlink(name);
        }

        barrier_obj = arena.create(kBarrierObject, BarrierArray::bytes_for(kMaxRanks));
        ctx.qm_ = QueueMatrix::create(arena, kWorldComm, nranks, cfg.queue);

        arena.device().fence();
        arena.set_boot_word(cfg.boot_id);
    } else {
        Backoff backoff;
        while (!Arena::formatted(*ctx.dev_)) {
            if (monotonic_ns() > deadline)
                raise(Errc::timeout, "device was never formatted by rank 0");
            backoff.pause();
        }
        ctx.arena_ = std::make_unique<Arena>(Arena::attach(*ctx.dev_, rank));
        if (ctx.arena_->header().geometry != cfg.geometry)
            raise(Errc::geometry_mismatch, "device is formatted with a different geometry");

        Backoff boot_backoff;
        while (ctx.arena_->boot_word() != cfg.boot_id) {
            if (monotonic_ns() > deadline)
                raise(Errc::timeout, "rank 0 never published boot id " +
                                         std::to_string(cfg.boot_id));
            boot_backoff.pause();
        }
        barrier_obj = ctx.arena_->open(kBarrierObject);
        ctx.qm_ = QueueMatrix::open_existing(*ctx.arena_, kWorldComm, nranks, cfg.queue, deadline);
    }

    ctx.chan_.emplace(*ctx.qm_, rank);
    ctx.barrier_.emplace(*ctx.dev_, ctx.arena_->device_offset(barrier_obj), nranks, rank);
    ctx.barrier_->wait(deadline);
    ctx.live_ = true;
    return ctx;
}

void RankContext::barrier() {
    if (!live_) raise(Errc::bad_state, "barrier on a finalized context");
    barrier_->wait();
}

Channel& RankContext::channel() {
    if (!live_) raise(Errc::bad_state, "channel access on a finalized context");
    return *chan_;
}

Window RankContext::win_allocate_shared(const std::string& name, uint64_t seg_size) {
    if (!live_) raise(Errc::bad_state, "window allocation on a finalized context");
    return Window::allocate_shared(*arena_, name, seg_size, nranks_, rank_, deadline_ns());
}

void RankContext::finalize() {
    if (finalized_) raise(Errc::bad_state, "finalize called twice");
    if (!live_) raise(Errc::bad_state, "finalize without init");
    try {
        barrier_->wait(deadline_ns());
    } catch (const Error& e) {
        if (e.code() != Errc::timeout) throw; // a dead peer must not wedge shutdown
    }
    chan_.reset();
    qm_.reset();
    barrier_.reset();
    arena_.reset();
    dev_.reset();
    finalized_ = true;
    live_ = false;
}

std::string default_device_path() {
    static std::atomic<unsigned> counter{0};
    struct stat st{};
    const char* dir = (stat("/dev/shm", &st) == 0 && S_ISDIR(st.st_mode)) ? "/dev/shm" : "/tmp";
    return std::string(dir) + "/cmpi-" + std::to_string(getpid()) + "-" +
           std::to_string(counter.fetch_add(1)) + ".img";
}

namespace {

std::string self_exe_dir() {
    char buf[4096];
    ssize_t n = readlink("/proc/self/exe", buf, sizeof buf - 1);
    if (n <= 0) return {};
    buf[n] = '\0';
    std::string p(buf);
    size_t slash = p.rfind('/');
    return slash == std::string::npos ? std::string() : p.substr(0, slash);
}

std::string resolve_command(const std::string& cmd) {
    if (cmd.find('/') != std::string::npos) return cmd;
    std::string dir = self_exe_dir();
    if (!dir.empty()) {
        for (const std::string& candidate : {dir + "/cmpi-" + cmd, dir + "/" + cmd}) {
            if (access(candidate.c_str(), X_OK) == 0) return candidate;
        }
    }
    return cmd; // leave PATH resolution to execvp
}

} // namespace

LaunchResult launch(const LaunchConfig& cfg) {
    if (cfg.nranks == 0) raise(Errc::bad_config, "need at least one rank");
    if (cfg.nranks > kMaxRanks)
        raise(Errc::bad_config, "at most " + std::to_string(kMaxRanks) + " ranks");
    if (cfg.command.empty()) raise(Errc::bad_config, "no command to launch");

    LaunchResult result;
    result.device_path = cfg.device_path.empty() ? default_device_path() : cfg.device_path;
    const uint64_t boot_id = (monotonic_ns() ^ (uint64_t(getpid()) << 32)) | 1;

    std::string argv0 = resolve_command(cfg.command[0]);
    std::vector<char*> argv;
    argv.push_back(const_cast<char*>(argv0.c_str()));
    for (size_t i = 1; i < cfg.command.size(); ++i)
        argv.push_back(const_cast<char*>(cfg.command[i].c_str()));
    argv.push_back(nullptr);

    std::vector<pid_t> pids(cfg.nranks, -1);
    for (uint32_t r = 0; r < cfg.nranks; ++r) {
        pid_t pid = fork();
        if (pid < 0) {
            for (pid_t p : pids)
                if (p > 0) kill(p, SIGKILL);
            raise(Errc::spawn_failed, std::string("fork: ") + std::strerror(errno));
        }
        if (pid == 0) {
            setenv("CMPI_RANK", std::to_string(r).c_str(), 1);
            setenv("CMPI_NRANKS", std::to_string(cfg.nranks).c_str(), 1);
            setenv("CMPI_DEVICE", result.device_path.c_str(), 1);
            setenv("CMPI_DEVICE_SIZE", std::to_string(cfg.device_size).c_str(), 1);
            setenv("CMPI_INCOHERENT", cfg.incoherent ? "1" : "0", 1);
            setenv("CMPI_CELL_SIZE", std::to_string(cfg.cell_size).c_str(), 1);
            setenv("CMPI_QUEUE_DEPTH", std::to_string(cfg.queue_depth).c_str(), 1);
            setenv("CMPI_TIMEOUT_MS", std::to_string(cfg.timeout_ms).c_str(), 1);
            setenv("CMPI_BOOT_ID", std::to_string(boot_id).c_str(), 1);
            for (const auto& [k, v] : cfg.extra_env) setenv(k.c_str(), v.c_str(), 1);
            execvp(argv[0], argv.data());
            fprintf(stderr, "cmpi: exec %s: %s\n", argv[0], std::strerror(errno));
            _exit(127);
        }
        pids[r] = pid;
    }

    result.rank_status.assign(cfg.nranks, 0);
    for (uint32_t r = 0; r < cfg.nranks; ++r) {
        int status = 0;
        if (waitpid(pids[r], &status, 0) < 0) {
            result.rank_status[r] = 128;
        } else if (WIFEXITED(status)) {
            result.rank_status[r] = WEXITSTATUS(status);
        } else if (WIFSIGNALED(status)) {
            result.rank_status[r] = 128 + WTERMSIG(status);
        }
        if (result.rank_status[r] != 0 && result.exit_code == 0)
            result.exit_code = result.rank_status[r];
    }

    if (cfg.cleanup) ::unlink(result.device_path.c_str());
    return result;
}

} // namespace cmpi
