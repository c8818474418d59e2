// cmpi-run: local process launcher. Each rank becomes one OS process with
// CMPI_RANK / CMPI_NRANKS / CMPI_DEVICE (and the rest of the runtime
// environment) set; exit status aggregates the children.
//
//   cmpi-run -n <ranks> [--device P] [--device-size N] [--incoherent]
//            [--cell-size S] [--queue-depth D] [--timeout MS] [--cleanup]
//            -- <cmd> [args...]

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "cmpi/error.hpp"
#include "cmpi/runtime.hpp"

namespace {

void usage(FILE* out) {
    std::fprintf(out,
                 "usage: cmpi-run -n <ranks> [options] [--] <cmd> [args...]\n"
                 "options:\n"
                 "  -n, --np <ranks>      number of ranks (required, >= 1)\n"
                 "  --device <path>       backing file (default: fresh file in /dev/shm)\n"
                 "  --device-size <N>     device capacity, suffixes K/M/G (default 1G)\n"
                 "  --incoherent          run with emulated-incoherent memory\n"
                 "  --cell-size <N>       message cell size: 16K, 32K, 64K, 128K (default 16K)\n"
                 "  --queue-depth <N>     cells per ring (default 64)\n"
                 "  --timeout <ms>        init timeout (default 30000)\n"
                 "  --cleanup             remove the device file after the run\n"
                 "a bare 'bench' command resolves to cmpi-bench next to this binary\n");
}

uint64_t parse_size_arg(const char* s) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s) throw cmpi::Error(cmpi::Errc::bad_config, std::string("bad number: ") + s);
    switch (*end) {
        case '\0': return v;
        case 'k': case 'K': return v << 10;
        case 'm': case 'M': return v << 20;
        case 'g': case 'G': return v << 30;
    }
    throw cmpi::Error(cmpi::Errc::bad_config, std::string("bad size suffix: ") + s);
}

} // namespace

int main(int argc, char** argv) {
    cmpi::LaunchConfig cfg;
    bool have_n = false;

    int i = 1;
    for (; i < argc; ++i) {
        std::string a = argv[i];
        auto need_value = [&](const char* flag) -> const char* {
            if (i + 1 >= argc) {
                std::fprintf(stderr, "cmpi-run: %s needs a value\n", flag);
                std::exit(2);
            }
            return argv[++i];
        };
        if (a == "-n" || a == "--np") {
            cfg.nranks = uint32_t(std::strtoul(need_value("-n"), nullptr, 10));
            have_n = true;
        } else if (a == "--device") {
            cfg.device_path = need_value("--device");
        } else if (a == "--device-size") {
            cfg.device_size = parse_size_arg(need_value("--device-size"));
        } else if (a == "--incoherent") {
            cfg.incoherent = true;
        } else if (a == "--cell-size") {
            cfg.cell_size = uint32_t(parse_size_arg(need_value("--cell-size")));
        } else if (a == "--queue-depth") {
            cfg.queue_depth = uint32_t(parse_size_arg(need_value("--queue-depth")));
        } else if (a == "--timeout") {
            cfg.timeout_ms = std::strtoull(need_value("--timeout"), nullptr, 10);
        } else if (a == "--cleanup") {
            cfg.cleanup = true;
        } else if (a == "-h" || a == "--help") {
            usage(stdout);
            return 0;
        } else if (a == "--") {
            ++i;
            break;
        } else if (!a.empty() && a[0] == '-') {
            std::fprintf(stderr, "cmpi-run: unknown option %s\n", a.c_str());
            usage(stderr);
            return 2;
        } else {
            break; // first command word
        }
    }
    for (; i < argc; ++i) cfg.command.emplace_back(argv[i]);

    if (!have_n || cfg.nranks == 0) {
        std::fprintf(stderr, "cmpi-run: a positive rank count is required\n");
        usage(stderr);
        return 2;
    }
    if (cfg.command.empty()) {
        std::fprintf(stderr, "cmpi-run: no command given\n");
        usage(stderr);
        return 2;
    }

    try {
        cmpi::LaunchResult res = cmpi::launch(cfg);
        for (uint32_t r = 0; r < cfg.nranks; ++r) {
            int st = res.rank_status[r];
            if (st == 0) continue;
            if (st > 128)
                std::fprintf(stderr, "cmpi-run: rank %u killed by signal %d\n", r, st - 128);
            else
                std::fprintf(stderr, "cmpi-run: rank %u exited with status %d\n", r, st);
        }
        if (!cfg.cleanup && cfg.device_path.empty())
            std::fprintf(stderr, "cmpi-run: device file retained at %s\n",
                         res.device_path.c_str());
        return res.exit_code;
    } catch (const cmpi::Error& e) {
        std::fprintf(stderr, "cmpi-run: %s\n", e.what());
        return 2;
    }
}
