// cmpi-arena: format and inspect the shared-object arena on a device file.

#include <cinttypes>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "cmpi/arena.hpp"
#include "cmpi/error.hpp"

using namespace cmpi;

namespace {

DeviceRegion open_device(const std::string& path, uint64_t size, bool incoherent) {
    DeviceConfig cfg;
    cfg.path = path;
    cfg.capacity = size;
    cfg.mode = incoherent ? CoherenceMode::incoherent_emulated : CoherenceMode::coherent;
    return DeviceRegion::open(cfg);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"shared-object arena tool"};
    app.require_subcommand(1);

    std::string device;
    uint64_t device_size = 1ull << 30;
    bool incoherent = false;
    app.add_option("--device", device, "backing device file")->required();
    app.add_option("--device-size", device_size, "device capacity in bytes")
        ->transform(CLI::AsSizeValue(false));
    app.add_flag("--incoherent", incoherent, "attach in emulated-incoherent mode");

    uint64_t hash_cap = 200000;
    uint32_t hash_levels = 10;
    auto* fmt = app.add_subcommand("format", "format the arena (idempotent)");
    fmt->add_option("--hash-cap", hash_cap, "level-one bucket cap (default 200000)");
    fmt->add_option("--hash-levels", hash_levels, "hash levels (default 10)");

    auto* ls = app.add_subcommand("ls", "list live objects");

    std::string create_name;
    uint64_t create_size = 0;
    auto* create = app.add_subcommand("create", "create an object");
    create->add_option("name", create_name)->required();
    create->add_option("--size", create_size, "object size in bytes")->required();

    std::string unlink_name;
    auto* unlink = app.add_subcommand("unlink", "remove an object's metadata slot");
    unlink->add_option("name", unlink_name)->required();

    std::string stat_name;
    auto* stat = app.add_subcommand("stat", "show one object");
    stat->add_option("name", stat_name)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        DeviceRegion dev = open_device(device, device_size, incoherent);

        if (fmt->parsed()) {
            Arena arena = Arena::format(dev, HashGeometry::with(hash_cap, hash_levels));
            const ArenaHeader& h = arena.header();
            std::printf("formatted %s\n", device.c_str());
            std::printf("levels %u slots %" PRIu64 " metadata [%" PRIu64 ", %" PRIu64
                        ") objects [%" PRIu64 ", %" PRIu64 ")\n",
                        h.geometry.levels(), h.geometry.slot_total(), h.metadata_off,
                        h.metadata_off + h.metadata_len, h.objects_off,
                        h.objects_off + h.objects_len);
            return 0;
        }

        Arena arena = Arena::attach(dev);
        if (ls->parsed()) {
            for (const ObjInfo& o : arena.list())
                std::printf("%s offset=%" PRIu64 " size=%" PRIu64 "\n", o.name.c_str(), o.offset,
                            o.size);
        } else if (create->parsed()) {
            ObjHandle h = arena.create(create_name, create_size);
            std::printf("%s offset=%" PRIu64 " size=%" PRIu64 "\n", create_name.c_str(), h.offset,
                        h.size);
        } else if (unlink->parsed()) {
            arena.unlink(unlink_name);
        } else if (stat->parsed()) {
            ObjHandle h = arena.open(stat_name);
            std::printf("%s slot=%" PRIu64 " offset=%" PRIu64 " size=%" PRIu64 "\n",
                        stat_name.c_str(), h.slot_index, h.offset, h.size);
        }
        return 0;
    } catch (const Error& e) {
        std::fprintf(stderr, "cmpi-arena: %s\n", e.what());
        return 1;
    }
}
