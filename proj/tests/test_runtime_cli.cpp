#include <cstdlib>
#include <fstream>

#include "cmpi/error.hpp"
#include "cmpi/runtime.hpp"
#include "mp_main.hpp"

using namespace cmpi;

#ifndef CMPI_RUN_BIN
#define CMPI_RUN_BIN "cmpi-run"
#endif
#ifndef CMPI_ARENA_BIN
#define CMPI_ARENA_BIN "cmpi-arena"
#endif

namespace {

int shell(const std::string& cmd) { return std::system(cmd.c_str()); }

} // namespace

MP_ROLE(rt_init_finalize) {
    RankContext ctx = RankContext::init_from_env();
    ctx.barrier();
    ctx.finalize();
    return 0;
}

TEST_CASE("init + finalize across one and four ranks") {
    for (uint32_t n : {1u, 4u}) {
        mptest::SpawnOpts opts;
        opts.nranks = n;
        auto res = mptest::mp_spawn("rt_init_finalize", opts);
        CHECK(res.exit_code == 0);
        ::unlink(res.device_path.c_str());
    }
}

MP_ROLE(rt_header_bytes) {
    RankContext ctx = RankContext::init_from_env();
    std::vector<std::byte> hdr(Arena::kHeaderBytes);
    ctx.device().read_bytes(0, hdr, true);
    std::string out(reinterpret_cast<const char*>(hdr.data()), hdr.size());
    mptest::write_file(mptest::rank_out_path(mptest::env_scratch_base(), ctx.rank()), out);
    ctx.finalize();
    return 0;
}

TEST_CASE("all ranks observe identical arena header bytes after init") {
    mptest::TempFile scratch;
    mptest::SpawnOpts opts;
    opts.nranks = 4;
    opts.incoherent = true;
    opts.extra_env = {{"CMPI_TEST_SCRATCH", scratch.path()}};
    auto res = mptest::mp_spawn("rt_header_bytes", opts);
    REQUIRE(res.exit_code == 0);

    std::string first = mptest::read_file(mptest::rank_out_path(scratch.path(), 0));
    CHECK(first.size() == Arena::kHeaderBytes);
    for (uint32_t r = 1; r < 4; ++r) {
        CHECK(mptest::read_file(mptest::rank_out_path(scratch.path(), r)) == first);
        ::unlink(mptest::rank_out_path(scratch.path(), r).c_str());
    }
    ::unlink(mptest::rank_out_path(scratch.path(), 0).c_str());
    ::unlink(res.device_path.c_str());
}

TEST_CASE("missing peer turns init into a timeout error") {
    // two processes, each told the world has three ranks
    mptest::SpawnOpts opts;
    opts.nranks = 2;
    opts.timeout_ms = 1500;
    opts.extra_env = {{"CMPI_NRANKS", "3"}};
    auto res = mptest::mp_spawn("rt_init_finalize", opts);
    CHECK(res.exit_code != 0);
    ::unlink(res.device_path.c_str());
}

MP_ROLE(rt_double_finalize) {
    RankContext ctx = RankContext::init_from_env();
    ctx.finalize();
    try {
        ctx.finalize();
        return 1; // second finalize must fail
    } catch (const Error& e) {
        return e.code() == Errc::bad_state ? 0 : 1;
    }
}

TEST_CASE("double finalize is an error") {
    mptest::SpawnOpts opts;
    opts.nranks = 1;
    auto res = mptest::mp_spawn("rt_double_finalize", opts);
    CHECK(res.exit_code == 0);
    ::unlink(res.device_path.c_str());
}

MP_ROLE(rt_geometry_mismatch) {
    RuntimeConfig cfg = RuntimeConfig::from_env();
    DeviceRegion dev = DeviceRegion::open(cfg.device);
    if (mptest::env_rank() == 0) {
        Arena::format(dev, HashGeometry::with(50, 2)); // not what init expects
    }
    try {
        RankContext ctx = RankContext::init(mptest::env_rank(), 1, cfg);
        return 1;
    } catch (const Error& e) {
        return e.code() == Errc::geometry_mismatch ? 0 : 1;
    }
}

TEST_CASE("init rejects a device formatted with a different geometry") {
    mptest::SpawnOpts opts;
    opts.nranks = 1;
    auto res = mptest::mp_spawn("rt_geometry_mismatch", opts);
    CHECK(res.exit_code == 0);
    ::unlink(res.device_path.c_str());
}

MP_ROLE(rt_sendrecv) {
    RankContext ctx = RankContext::init_from_env();
    std::vector<std::byte> buf(1 << 20);
    if (ctx.rank() == 0) {
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = std::byte(i * 31 + 7);
        ctx.send(1, 42, buf);
    } else {
        size_t n = ctx.recv(0, 42, buf);
        if (n != buf.size()) return 1;
        for (size_t i = 0; i < buf.size(); ++i)
            if (buf[i] != std::byte(i * 31 + 7)) return 1;
    }
    ctx.finalize();
    return 0;
}

TEST_CASE("context send/recv across processes in emulated-incoherent mode") {
    mptest::SpawnOpts opts;
    opts.nranks = 2;
    opts.incoherent = true;
    auto res = mptest::mp_spawn("rt_sendrecv", opts);
    CHECK(res.exit_code == 0);
    ::unlink(res.device_path.c_str());
}

TEST_CASE("launch validates its configuration") {
    LaunchConfig cfg;
    cfg.nranks = 0;
    cfg.command = {"true"};
    CHECK_THROWS_AS(launch(cfg), Error);
    cfg.nranks = 1;
    cfg.command = {};
    CHECK_THROWS_AS(launch(cfg), Error);
}

TEST_CASE("launch reports child failures with the failing status") {
    LaunchConfig cfg;
    cfg.nranks = 2;
    cfg.command = {"sh", "-c", "exit 7"};
    cfg.cleanup = true;
    LaunchResult res = launch(cfg);
    CHECK(res.exit_code == 7);
    CHECK(res.rank_status == std::vector<int>{7, 7});

    cfg.command = {"/definitely/not/a/binary"};
    res = launch(cfg);
    CHECK(res.exit_code == 127);
}

TEST_CASE("deterministic naming: two fresh runs produce identical object listings") {
    std::string ls_out[2];
    for (int run = 0; run < 2; ++run) {
        mptest::TempFile dev;
        mptest::TempFile out;
        mptest::SpawnOpts opts;
        opts.nranks = 2;
        opts.device = dev.path();
        auto res = mptest::mp_spawn("rt_init_finalize", opts);
        REQUIRE(res.exit_code == 0);
        std::string cmd = std::string(CMPI_ARENA_BIN) + " --device " + dev.path() +
                          " --device-size 67108864 ls > " + out.path();
        REQUIRE(shell(cmd) == 0);
        ls_out[run] = mptest::read_file(out.path());
    }
    CHECK(!ls_out[0].empty());
    CHECK(ls_out[0] == ls_out[1]);
}

TEST_CASE("cmpi-run usage errors and smoke run") {
    std::string run = CMPI_RUN_BIN;
    CHECK(shell(run + " -n 0 -- true 2>/dev/null") != 0);
    CHECK(shell(run + " -n 1 2>/dev/null") != 0); // no command
    CHECK(shell(run + " -n 2 --cleanup -- sh -c 'exit 0'") == 0);
    // bench resolution through the launcher, tiny ping-pong
    CHECK(shell(run + " -n 2 --cleanup -- bench pingpong --sizes 8:64 --iters 40 --warmup 5 "
                      "> /dev/null") == 0);
    // the separator is optional: the first non-flag word starts the command
    CHECK(shell(run + " -n 2 --cleanup bench pingpong --sizes 8:8 --iters 20 --warmup 5 "
                      "> /dev/null") == 0);
}

TEST_CASE("cmpi-arena format/create/stat/ls/unlink round trip") {
    mptest::TempFile dev;
    mptest::TempFile out;
    std::string base = std::string(CMPI_ARENA_BIN) + " --device " + dev.path() +
                       " --device-size 16777216 ";
    CHECK(shell(base + "format --hash-cap 100 --hash-levels 2 > /dev/null") == 0);
    CHECK(shell(base + "format --hash-cap 100 --hash-levels 2 > /dev/null") == 0); // idempotent
    CHECK(shell(base + "create blob --size 4096 > /dev/null") == 0);
    CHECK(shell(base + "stat blob > " + out.path()) == 0);
    CHECK(mptest::read_file(out.path()).find("offset=0") != std::string::npos);
    CHECK(shell(base + "ls > " + out.path()) == 0);
    CHECK(mptest::read_file(out.path()).find("blob") != std::string::npos);
    CHECK(shell(base + "unlink blob") == 0);
    CHECK(shell(base + "stat blob 2>/dev/null") != 0);
    CHECK(shell(base + "ls > " + out.path()) == 0);
    CHECK(mptest::read_file(out.path()).empty());
}
