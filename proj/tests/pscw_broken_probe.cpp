// Fault-injection probe: linked against the library variant whose put skips
// the data flush. Running it must FAIL (nonzero exit) in emulated-incoherent
// mode: the target reads stale bytes after wait. A zero exit from this
// binary means the missing flush went undetected.

#include <cstdio>
#include <cstdlib>

#include "cmpi/runtime.hpp"
#include "pscw_scenario.hpp"

int main() {
    if (std::getenv("CMPI_RANK")) {
        try {
            cmpi::RankContext ctx = cmpi::RankContext::init_from_env();
            uint64_t mismatches = pscw::run_scenario(ctx, 30);
            ctx.finalize();
            if (mismatches > 0) {
                std::fprintf(stderr, "probe: target observed %llu stale bytes\n",
                             (unsigned long long)mismatches);
                return 1;
            }
            return 0;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "probe: %s\n", e.what());
            return 1;
        }
    }

    cmpi::LaunchConfig cfg;
    cfg.nranks = 4;
    cfg.command = {"/proc/self/exe"};
    cfg.incoherent = true;
    cfg.cleanup = true;
    cfg.device_size = 64ull << 20;
    cfg.timeout_ms = 60000;
    cfg.extra_env = {{"CMPI_HASH_CAP", "1009"}, {"CMPI_HASH_LEVELS", "4"}};
    cmpi::LaunchResult res = cmpi::launch(cfg);
    return res.exit_code;
}
