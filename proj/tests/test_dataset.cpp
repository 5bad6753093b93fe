// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <set>

#include "circdiff/dataset.hpp"
#include "circdiff/legalizer.hpp"
#include "oracles.hpp"

using namespace circdiff;

namespace {

std::vector<int> column_totals(const CompressorTree& t) {
    std::vector<int> out(t.columns(), 0);
    for (int c = 0; c < t.columns(); ++c)
        for (int s = 0; s < t.stages(); ++s) out[c] += t.fa(c, s) + 2 * t.ha(c, s);
    return out;
}

}  // namespace

TEST_CASE("seed designs") {
    const auto w = std::get<CompressorTree>(seed_design(8, "wallace"));
    CHECK(validate_ct(w).empty());
    CHECK(oracle::used_stages(w) == 4);
    CHECK(std::get<PrefixBitmap>(seed_design(8, "kogge_stone")).combine_nodes() == 17);
    const auto d = std::get<CompressorTree>(seed_design(8, "dadda"));
    CHECK(d.total(kFullAdder) + d.total(kHalfAdder) <= w.total(kFullAdder) + w.total(kHalfAdder));
    CHECK_THROWS_AS(seed_design(8, "booth"), Error);
}

TEST_CASE("mutate_ct") {
    SUBCASE("1000 mutants of Wallace n=8 are legal") {
        std::mt19937_64 rng(1);
        const auto w = wallace_tree(8);
        int changed = 0;
        for (int i = 0; i < 1000; ++i) {
            const auto m = mutate_ct(w, rng);
            REQUIRE(validate_ct(m).empty());
            CHECK(m.stages() == w.stages());
            changed += m == w ? 0 : 1;
        }
        CHECK(changed > 900);
    }
    SUBCASE("a legal stage swap keeps per-column totals") {
        // Move one full adder a stage later where the bits are still there;
        // the legalizer leaves a legal swap alone.
        const auto w = wallace_tree(8);
        bool found = false;
        for (int c = 1; c < w.columns() && !found; ++c)
            for (int s = 0; s + 1 < w.stages() && !found; ++s) {
                if (w.fa(c, s) == 0) continue;
                auto t = w;
                t.at(kFullAdder, c, s) -= 1;
                t.at(kFullAdder, c, s + 1) += 1;
                if (!validate_ct(t).empty()) continue;
                LegalizeReport report;
                CHECK(legalize_ct(t, report) == t);
                CHECK(column_totals(t) == column_totals(w));
                found = true;
            }
        CHECK(found);
    }
    SUBCASE("deleted half adder is restored to two rows") {
        auto t = wallace_tree(8);
        bool done = false;
        for (int c = 0; c < t.columns() && !done; ++c)
            for (int s = 0; s < t.stages() && !done; ++s)
                if (t.ha(c, s) > 0) {
                    t.at(kHalfAdder, c, s) -= 1;
                    done = true;
                }
        LegalizeReport report;
        const auto fixed = legalize_ct(t, report);
        const auto v = propagate_counts(fixed);
        for (int c = 0; c < fixed.columns(); ++c) CHECK(v.at(c, fixed.stages()) <= 2);
    }
    SUBCASE("deterministic for a fixed generator") {
        std::mt19937_64 a(7), b(7);
        CHECK(mutate_ct(dadda_tree(16), a) == mutate_ct(dadda_tree(16), b));
    }
}

TEST_CASE("mutate_prefix") {
    SUBCASE("1000 mutants of Sklansky n=8 are valid") {
        std::mt19937_64 rng(2);
        const auto p = sklansky_prefix(8);
        for (int i = 0; i < 1000; ++i) REQUIRE(validate_prefix(mutate_prefix(p, rng)).empty());
    }
    SUBCASE("adding an implied node leaves a valid bitmap unchanged after repair") {
        const auto k = kogge_stone_prefix(8);
        auto p = k;
        p.set(7, 0);
        CHECK(legalize_prefix(p) == k);
    }
    SUBCASE("removing an output from the serial adder restores the chain") {
        auto p = serial_prefix(8);
        p.set(5, 0, false);
        const auto q = legalize_prefix(p);
        CHECK(q == serial_prefix(8));
    }
    SUBCASE("chains of mutations stay valid and change the design") {
        std::mt19937_64 rng(3);
        auto p = serial_prefix(16);
        std::set<std::uint64_t> seen;
        for (int i = 0; i < 200; ++i) {
            p = mutate_prefix(p, rng);
            REQUIRE(validate_prefix(p).empty());
            seen.insert(design_hash(p));
        }
        CHECK(seen.size() > 50);
    }
}

TEST_CASE("generate_dataset") {
    const QoREvaluator eval(8);
    DatasetSpec spec = DatasetSpec::desk(DesignKind::kCompressorTree, 8);
    spec.unlabeled_count = 200;
    spec.labeled_count = 50;
    spec.seed = 42;
    const auto a = generate_dataset(spec, eval);
    REQUIRE(a.designs.size() == 200);
    REQUIRE(a.labeled.size() == 50);
    double lo = 1e9, hi = -1e9;
    for (const auto& d : a.designs) CHECK(validate_ct(std::get<CompressorTree>(d)).empty());
    for (const auto& l : a.labeled) {
        CHECK(l.label.y > 0);
        lo = std::min(lo, l.label.y);
        hi = std::max(hi, l.label.y);
    }
    CHECK(hi - lo > 0);
    // Seeds are labeled; Wallace is the reference.
    CHECK(a.labeled[0].index == 0);
    CHECK(a.labeled[0].label.y == 1.0);

    const auto b = generate_dataset(spec, eval, 3);
    CHECK(a.designs == b.designs);
    for (std::size_t i = 0; i < a.labeled.size(); ++i) {
        CHECK(a.labeled[i].index == b.labeled[i].index);
        CHECK(a.labeled[i].label.y == b.labeled[i].label.y);
    }
    std::set<std::uint64_t> distinct;
    for (const auto& d : a.designs) distinct.insert(design_hash(d));
    CHECK(distinct.size() > 100);

    SUBCASE("save and load round trip") {
        const auto dir = std::filesystem::temp_directory_path() / "circdiff_test_dataset";
        std::filesystem::remove_all(dir);
        save_dataset(dir.string(), a);
        const auto c = load_dataset(dir.string());
        CHECK(c.designs == a.designs);
        REQUIRE(c.labeled.size() == a.labeled.size());
        for (std::size_t i = 0; i < a.labeled.size(); ++i) {
            CHECK(c.labeled[i].index == a.labeled[i].index);
            CHECK(c.labeled[i].label.y == a.labeled[i].label.y);
            CHECK(c.labeled[i].label.delay[1] == a.labeled[i].label.delay[1]);
        }
        std::filesystem::remove_all(dir);
    }
    SUBCASE("prefix datasets score the adder inside the multiplier") {
        DatasetSpec ps = DatasetSpec::desk(DesignKind::kPrefix, 4);
        ps.unlabeled_count = 30;
        ps.labeled_count = 10;
        const auto pd = generate_dataset(ps, QoREvaluator(4));
        for (const auto& d : pd.designs) {
            CHECK(std::get<PrefixBitmap>(d).width() == 8);
            CHECK(validate_prefix(std::get<PrefixBitmap>(d)).empty());
        }
        CHECK(pd.labeled[0].label.y == 1.0);  // serial seed with the Wallace tree
    }
    SUBCASE("invalid specs") {
        DatasetSpec bad = spec;
        bad.labeled_count = 300;
        CHECK_THROWS_AS(generate_dataset(bad, eval), Error);
        CHECK_THROWS_AS(design_kind_from_string("adder"), Error);
    }
}
