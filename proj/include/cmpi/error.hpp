#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cmpi {

enum class Errc {
    ok = 0,
    out_of_bounds,
    misaligned,
    capacity_not_aligned,
    path_not_writable,
    file_too_small,
    io_error,
    region_too_small,
    geometry_mismatch,
    name_too_long,
    name_exists,
    not_found,
    metadata_full,
    object_region_full,
    bad_config,
    buffer_too_small,
    invalid_rank,
    no_epoch,
    epoch_misuse,
    lock_reentrant,
    lock_not_held,
    timeout,
    bad_state,
    spawn_failed,
};

const char* errc_name(Errc c);

/// Library error. `value()` carries an error-specific quantity, e.g. the
/// full message length for buffer_too_small.
class Error : public std::runtime_error {
public:
    Error(Errc c, const std::string& msg, uint64_t value = 0)
        : std::runtime_error(std::string(errc_name(c)) + ": " + msg),
          code_(c),
          value_(value) {}

    Errc code() const noexcept { return code_; }
    uint64_t value() const noexcept { return value_; }

private:
    Errc code_;
    uint64_t value_;
};

[[noreturn]] inline void raise(Errc c, const std::string& msg, uint64_t value = 0) {
    throw Error(c, msg, value);
}

} // namespace cmpi
