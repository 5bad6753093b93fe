// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>
#include <set>

#include "circdiff/circuit.hpp"
#include "oracles.hpp"

using namespace circdiff;

TEST_CASE("wallace_min_stages follows the 3/2 reduction recurrence") {
    CHECK(wallace_min_stages(3) == 1);
    CHECK(wallace_min_stages(8) == 4);
    CHECK(wallace_min_stages(16) == 6);
    for (int n = 2; n <= 64; ++n) CHECK(wallace_min_stages(n) == oracle::min_stages(n));
    CHECK_THROWS_AS(wallace_min_stages(1), Error);
}

TEST_CASE("initial partial-product counts") {
    CHECK(initial_pp_counts(2) == std::vector<int>{1, 2, 1, 0});
    CHECK(initial_pp_counts(4) == std::vector<int>{1, 2, 3, 4, 3, 2, 1, 0});
    for (int n : {2, 3, 5, 8}) CHECK(initial_pp_counts(n) == oracle::enumerate_pp_counts(n));
    const auto v8 = initial_pp_counts(8);
    CHECK(std::accumulate(v8.begin(), v8.end(), 0) == 64);
}

TEST_CASE("propagate_counts") {
    SUBCASE("no compressors keep the initial counts") {
        CompressorTree t(4, ct_stage_count(4));
        const auto v = propagate_counts(t);
        for (int s = 0; s <= t.stages(); ++s) CHECK(v.stage_column(s) == initial_pp_counts(4));
    }
    SUBCASE("one half adder in column 1") {
        CompressorTree t(2, ct_stage_count(2));
        t.at(kHalfAdder, 1, 0) = 1;
        const auto v = propagate_counts(t);
        CHECK(v.at(1, 1) == 1);
        CHECK(v.at(2, 1) == 2);
    }
    SUBCASE("wallace n=8 reaches two rows") {
        const auto t = wallace_tree(8);
        const auto v = propagate_counts(t);
        for (int c = 0; c < t.columns(); ++c) CHECK(v.at(c, t.stages()) <= 2);
    }
}

TEST_CASE("validate_ct examples") {
    for (int n : {4, 8, 16}) {
        CHECK(validate_ct(wallace_tree(n)).empty());
        CHECK(validate_ct(dadda_tree(n)).empty());
    }
    CompressorTree t2(2, ct_stage_count(2));
    t2.at(kFullAdder, 0, 0) = 1;
    auto e = validate_ct(t2);
    REQUIRE(!e.empty());
    CHECK(e[0].kind == ViolationKind::kOverCompression);
    CHECK(e[0].column == 0);
    CHECK(e[0].stage == 0);
    CHECK(e[0].magnitude == 2);

    CompressorTree zero4(4, ct_stage_count(4));
    std::set<int> under;
    for (const auto& v : validate_ct(zero4)) {
        CHECK(v.kind == ViolationKind::kUnderCompression);
        CHECK(v.magnitude >= 1);
        under.insert(v.column);
    }
    CHECK(under == std::set<int>{2, 3, 4});
}

TEST_CASE("reference constructions use the minimum stage count") {
    for (int n : {4, 8, 16, 32}) {
        const auto w = wallace_tree(n);
        CHECK(oracle::used_stages(w) == wallace_min_stages(n));
        const auto d = dadda_tree(n);
        CHECK(oracle::used_stages(d) <= wallace_min_stages(n));
        CHECK(d.total(kFullAdder) + d.total(kHalfAdder) <= w.total(kFullAdder) + w.total(kHalfAdder));
    }
}

TEST_CASE("validate_ct agrees with per-bit event simulation") {
    std::mt19937_64 rng(7);
    int legal = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto t = oracle::random_tree(rng, 2 + static_cast<int>(rng() % 7));
        const auto sim = oracle::simulate_bits(t);
        const bool ok = validate_ct(t).empty();
        CHECK(ok == sim.legal());
        legal += ok ? 1 : 0;
        // Count conservation: propagate_counts reproduces the event counts.
        const auto v = propagate_counts(t);
        for (int s = 0; s <= t.stages(); ++s)
            for (int c = 0; c < t.columns(); ++c) REQUIRE(v.at(c, s) == sim.counts[s][c]);
    }
    CHECK(legal > 100);
    CHECK(legal < 900);
}

TEST_CASE("validate_prefix examples") {
    CHECK(validate_prefix(serial_prefix(8)).empty());
    CHECK(validate_prefix(sklansky_prefix(8)).empty());
    CHECK(validate_prefix(kogge_stone_prefix(8)).empty());
    CHECK(validate_prefix(brent_kung_prefix(8)).empty());
    PrefixBitmap p(4);
    for (int i = 0; i < 4; ++i) p.set(i, i);
    p.set(3, 0);
    const auto v = validate_prefix(p);
    const DesignRuleViolation expected{ViolationKind::kMissingLowerParent, 3, 0, 1};
    CHECK(std::find(v.begin(), v.end(), expected) != v.end());
}

TEST_CASE("validate_prefix agrees with the brute-force parent check") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto p = oracle::random_bitmap(rng, 2 + static_cast<int>(rng() % 7));
        std::set<std::pair<int, int>> got;
        for (const auto& v : validate_prefix(p))
            if (v.kind == ViolationKind::kMissingLowerParent) got.insert({v.column, v.stage});
        REQUIRE(got == oracle::missing_parents(p));
    }
}

TEST_CASE("prefix node counts of classic adders") {
    CHECK(sklansky_prefix(8).combine_nodes() == 12);
    CHECK(kogge_stone_prefix(8).combine_nodes() == 17);
    CHECK(brent_kung_prefix(8).combine_nodes() == 11);
    CHECK(serial_prefix(8).combine_nodes() == 7);
    // n log2 n - n + 1 for Kogge-Stone.
    CHECK(kogge_stone_prefix(16).combine_nodes() == 16 * 4 - 16 + 1);
}

TEST_CASE("canonical_parents picks the smallest split") {
    PrefixBitmap p(6);
    for (int i = 0; i < 6; ++i) p.set(i, i);
    for (auto [i, j] : std::vector<std::pair<int, int>>{{1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 4}, {5, 0}}) p.set(i, j);
    const auto [hi, lo] = canonical_parents(p, 5, 0);
    CHECK(hi == PrefixNode{5, 4});
    CHECK(lo == PrefixNode{3, 0});

    const auto serial = serial_prefix(8);
    for (int i = 1; i < 8; ++i) {
        const auto [u, l] = canonical_parents(serial, i, 0);
        CHECK(u == PrefixNode{i, i});
        CHECK(l == PrefixNode{i - 1, 0});
    }
    const auto [ku, kl] = canonical_parents(kogge_stone_prefix(8), 7, 0);
    CHECK(ku == PrefixNode{7, 4});
    CHECK(kl == PrefixNode{3, 0});

    PrefixBitmap broken(4);
    for (int i = 0; i < 4; ++i) broken.set(i, i);
    broken.set(3, 0);
    try {
        canonical_parents(broken, 3, 0);
        FAIL("expected missing-parent error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kMissingParent);
    }
}

TEST_CASE("tensor codec") {
    SUBCASE("bit mapping") {
        PrefixBitmap p(2);
        p.set(0, 0);
        const auto x = to_tensor(p);
        CHECK(x.at(0, 0, 0) == 1.0);
        CHECK(x.at(0, 1, 0) == -1.0);
    }
    SUBCASE("count 5 in four digits, most significant first") {
        CHECK(ct_digits(8) == 4);
        CompressorTree t(8, ct_stage_count(8));
        t.at(kFullAdder, 3, 1) = 5;
        const auto x = to_tensor(t);
        CHECK(x.shape() == std::vector<int>{8, 16, 5});
        CHECK(x.at(0, 3, 1) == -1.0);
        CHECK(x.at(1, 3, 1) == 1.0);
        CHECK(x.at(2, 3, 1) == -1.0);
        CHECK(x.at(3, 3, 1) == 1.0);
    }
    SUBCASE("overflow") {
        CompressorTree t(8, ct_stage_count(8));
        t.at(kHalfAdder, 0, 0) = 16;
        try {
            to_tensor(t);
            FAIL("expected overflow");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::kEncodingOverflow);
        }
    }
    SUBCASE("sign quantization") {
        Tensor zero({1, 3, 3}, 0.0);
        const auto p = prefix_from_tensor(zero);
        CHECK(p.get(2, 1));
        CHECK(!p.get(1, 2));  // upper triangle stays empty
        Tensor neg({1, 4, 4}, -0.2);
        const auto q = prefix_from_tensor(neg);
        CHECK(q.popcount() == 0);
        CHECK(!validate_prefix(q).empty());
    }
    SUBCASE("round trip survives sub-half noise") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> noise(-0.499, 0.499);
        for (int trial = 0; trial < 200; ++trial) {
            const int n = 2 + static_cast<int>(rng() % 7);
            const auto t = oracle::random_tree(rng, n);
            auto x = to_tensor(t);
            CHECK(ct_from_tensor(x, n) == t);
            for (auto& v : x.values()) v += noise(rng);
            CHECK(ct_from_tensor(x, n) == t);
            const auto p = oracle::random_bitmap(rng, n);
            auto y = to_tensor(p);
            for (auto& v : y.values()) v += noise(rng);
            CHECK(prefix_from_tensor(y) == p);
        }
    }
}

TEST_CASE("design json round trip") {
    const Design d = dadda_tree(8);
    CHECK(std::get<CompressorTree>(design_from_json(design_to_json(d))) == std::get<CompressorTree>(d));
    const Design p = sklansky_prefix(16);
    CHECK(std::get<PrefixBitmap>(design_from_json(design_to_json(p))) == std::get<PrefixBitmap>(p));
    CHECK_THROWS_AS(design_from_json("{\"kind\":\"ct\"}"), Error);
    CHECK_THROWS_AS(design_from_json("not json"), Error);
    CHECK(design_hash(d) != design_hash(wallace_tree(8)));
}
