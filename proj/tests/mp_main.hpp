#pragma once

// Shared main for the doctest suites: dispatch to a child role when spawned
// as a rank, otherwise run the tests.

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "mp.hpp"

int main(int argc, char** argv) {
    if (int rc = mptest::run_role_if_child(); rc >= 0) return rc;
    doctest::Context ctx;
    ctx.applyCommandLine(argc, argv);
    return ctx.run();
}
