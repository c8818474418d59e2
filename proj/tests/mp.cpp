#include "mp.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <sys/stat.h>
#include <unistd.h>

#include "cmpi/error.hpp"
#include "cmpi/runtime.hpp"

namespace mptest {

namespace {

std::map<std::string, RoleFn>& registry() {
    static std::map<std::string, RoleFn> r;
    return r;
}

} // namespace

void register_role(const std::string& name, RoleFn fn) { registry()[name] = std::move(fn); }

int run_role_if_child() {
    const char* role = std::getenv("CMPI_TEST_ROLE");
    if (!role || !*role) return -1;
    auto it = registry().find(role);
    if (it == registry().end()) {
        std::fprintf(stderr, "mp: unknown role %s\n", role);
        return 3;
    }
    try {
        return it->second();
    } catch (const cmpi::Error& e) {
        std::fprintf(stderr, "mp: rank %s role %s: %s\n",
                     std::getenv("CMPI_RANK") ? std::getenv("CMPI_RANK") : "?", role, e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "mp: role %s: %s\n", role, e.what());
        return 1;
    }
}

SpawnResult mp_spawn(const std::string& role, const SpawnOpts& opts) {
    cmpi::LaunchConfig cfg;
    cfg.nranks = opts.nranks;
    cfg.command = {"/proc/self/exe"};
    cfg.device_path = opts.device;
    cfg.device_size = opts.device_size;
    cfg.incoherent = opts.incoherent;
    cfg.cell_size = opts.cell_size;
    cfg.queue_depth = opts.queue_depth;
    cfg.timeout_ms = opts.timeout_ms;
    cfg.extra_env = opts.extra_env;
    cfg.extra_env.emplace_back("CMPI_TEST_ROLE", role);
    cfg.extra_env.emplace_back("CMPI_HASH_CAP", std::to_string(opts.hash_cap));
    cfg.extra_env.emplace_back("CMPI_HASH_LEVELS", std::to_string(opts.hash_levels));
    if (opts.cell_checksum) cfg.extra_env.emplace_back("CMPI_CELL_CHECKSUM", "1");

    cmpi::LaunchResult lr = cmpi::launch(cfg);
    return SpawnResult{lr.exit_code, lr.rank_status, lr.device_path};
}

TempFile::TempFile() : path_(cmpi::default_device_path()) {}

TempFile::~TempFile() { ::unlink(path_.c_str()); }

std::string rank_out_path(const std::string& scratch_base, uint32_t rank) {
    return scratch_base + ".r" + std::to_string(rank);
}

std::string env_scratch_base() {
    const char* s = std::getenv("CMPI_TEST_SCRATCH");
    return s ? s : "";
}

uint32_t env_rank() {
    const char* r = std::getenv("CMPI_RANK");
    return r ? uint32_t(std::strtoul(r, nullptr, 10)) : 0;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
}

} // namespace mptest
