// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <malloc.h>

int main(int argc, char** argv) {
    // Same allocator tuning as the command-line tool; training-heavy tests
    // run noticeably faster with it.
    mallopt(M_MMAP_THRESHOLD, 1 << 26);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    doctest::Context ctx;
    ctx.applyCommandLine(argc, argv);
    return ctx.run();
}
