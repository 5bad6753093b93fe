// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>

#include "circdiff/legalizer.hpp"
#include "oracles.hpp"

using namespace circdiff;

namespace {

bool has_action(const std::vector<LegalizeAction>& actions, ActionKind kind) {
    return std::any_of(actions.begin(), actions.end(), [kind](const LegalizeAction& a) { return a.kind == kind; });
}

}  // namespace

TEST_CASE("apply_action count deltas") {
    SUBCASE("ReplaceFA and ReplaceHA are inverse") {
        const auto t = wallace_tree(8);
        const LegalizeAction fwd{ActionKind::kReplaceFA, 5, 0};
        const LegalizeAction back{ActionKind::kReplaceHA, 5, 0};
        CHECK(apply_action(apply_action(t, fwd), back) == t);
    }
    SUBCASE("AddHA moves one bit to the next column") {
        CompressorTree t(4, ct_stage_count(4));
        const auto before = propagate_counts(t);
        const auto after = propagate_counts(apply_action(t, {ActionKind::kAddHA, 2, 0}));
        CHECK(after.at(2, 1) == before.at(2, 1) - 1);
        CHECK(after.at(3, 1) == before.at(3, 1) + 1);
    }
    SUBCASE("SplitFA keeps the column and adds a carry") {
        const auto t = wallace_tree(8);
        const auto v = propagate_counts(t);
        bool checked = false;
        for (int s = 0; s < t.stages() && !checked; ++s)
            for (int c = 0; c + 1 < t.columns() && !checked; ++c) {
                const LegalizeAction a{ActionKind::kSplitFA, c, s};
                if (!action_applicable(t, v, a)) continue;
                const auto w = propagate_counts(apply_action(t, a));
                for (int sp = s + 1; sp <= t.stages(); ++sp) CHECK(w.at(c, sp) == v.at(c, sp));
                CHECK(w.at(c + 1, s + 1) == v.at(c + 1, s + 1) + 1);
                checked = true;
            }
        CHECK(checked);
    }
    SUBCASE("precondition failure") {
        CompressorTree t(4, ct_stage_count(4));
        try {
            apply_action(t, {ActionKind::kDeleteHA, 1, 0});
            FAIL("expected inapplicable action");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::kInapplicableAction);
        }
    }
}

TEST_CASE("candidate_actions") {
    SUBCASE("under-compression in column 0 has no FuseFA branch") {
        CompressorTree t(4, ct_stage_count(4));
        t.at(kHalfAdder, 0, 0) = 0;
        const DesignRuleViolation e{ViolationKind::kUnderCompression, 0, t.stages(), 1};
        for (const auto& a : candidate_actions(t, e)) {
            CHECK(a.kind != ActionKind::kFuseFA);
            CHECK(a.column == 0);
        }
    }
    SUBCASE("over-compression at the first stage offers no SplitFA") {
        CompressorTree t(2, ct_stage_count(2));
        t.at(kFullAdder, 1, 0) = 1;
        const auto errors = validate_ct(t);
        REQUIRE(!errors.empty());
        CHECK(!has_action(candidate_actions(t, errors[0]), ActionKind::kSplitFA));
        CHECK(has_action(candidate_actions(t, errors[0]), ActionKind::kReplaceFA));
    }
    SUBCASE("AddHA for every stage with two spare bits") {
        CompressorTree t(4, ct_stage_count(4));
        const auto v = propagate_counts(t);
        const auto actions = candidate_actions(t, {ViolationKind::kUnderCompression, 3, t.stages(), 2});
        for (int s = 0; s < t.stages(); ++s) {
            const bool expected = v.at(3, s) >= 2;
            const LegalizeAction add{ActionKind::kAddHA, 3, s};
            CHECK((std::find(actions.begin(), actions.end(), add) != actions.end()) == expected);
        }
    }
}

TEST_CASE("legalize_ct") {
    SUBCASE("legal input is untouched") {
        LegalizeReport report;
        const auto t = wallace_tree(8);
        CHECK(legalize_ct(t, report) == t);
        CHECK(report.steps_taken == 0);
        CHECK(report.success);
    }
    SUBCASE("one deleted full adder") {
        auto t = wallace_tree(8);
        REQUIRE(t.fa(8, 2) > 0);
        t.at(kFullAdder, 8, 2) -= 1;
        REQUIRE(!validate_ct(t).empty());
        LegalizeReport report;
        const auto fixed = legalize_ct(t, report);
        CHECK(validate_ct(fixed).empty());
        CHECK(report.steps_taken <= 10);
        CHECK(report.final_violations == 0);
    }
    SUBCASE("single injected faults repair within 50 steps") {
        std::mt19937_64 rng(5);
        int repaired = 0;
        for (int n : {4, 8, 16}) {
            for (const auto& base : {wallace_tree(n), dadda_tree(n)}) {
                for (int trial = 0; trial < 100; ++trial) {
                    auto t = base;
                    const int k = static_cast<int>(rng() % 2);
                    const int c = static_cast<int>(rng() % t.columns());
                    const int s = static_cast<int>(rng() % t.stages());
                    int& cell = t.at(k, c, s);
                    cell = (rng() % 2 || cell == 0) ? cell + 1 : cell - 1;
                    if (validate_ct(t).empty()) continue;
                    LegalizeReport report;
                    const auto fixed = legalize_ct(t, report);
                    CHECK(validate_ct(fixed).empty());
                    CHECK(report.steps_taken <= 50);
                    ++repaired;
                }
            }
        }
        CHECK(repaired > 300);
    }
    SUBCASE("random count tensors legalize within the cap") {
        std::mt19937_64 rng(9);
        for (int n : {8, 16}) {
            int worst = 0;
            for (int trial = 0; trial < 60; ++trial) {
                Tensor x(ct_tensor_shape(n, ct_stage_count(n)));
                std::normal_distribution<double> g(0.0, 1.0);
                for (auto& v : x.values()) v = g(rng) - 0.8;
                const auto t = ct_from_tensor(x, n);
                LegalizeReport report;
                const auto fixed = legalize_ct(t, report);
                CHECK(validate_ct(fixed).empty());
                worst = std::max(worst, report.steps_taken);
            }
            MESSAGE("n=" << n << " worst steps " << worst);
            CHECK(worst < kDefaultLegalizeSteps);
        }
    }
    SUBCASE("deterministic trace") {
        std::mt19937_64 rng(21);
        const auto t = oracle::random_tree(rng, 8);
        LegalizeReport a, b;
        CHECK(legalize_ct(t, a) == legalize_ct(t, b));
        CHECK(a.trace == b.trace);
    }
    SUBCASE("budget exhaustion reports failure") {
        CompressorTree t(8, ct_stage_count(8));
        try {
            LegalizeReport report;
            legalize_ct(t, report, 3);
            FAIL("expected failure");
        } catch (const LegalizationError& e) {
            CHECK(e.code() == ErrorCode::kLegalizationFailure);
            CHECK(e.report().steps_taken == 3);
            CHECK(e.report().final_violations > 0);
        }
    }
}

TEST_CASE("legalize_prefix") {
    SUBCASE("valid bitmap is a fixpoint") {
        for (const auto& p : {serial_prefix(8), sklansky_prefix(8), kogge_stone_prefix(8), brent_kung_prefix(8)})
            CHECK(legalize_prefix(p) == p);
    }
    SUBCASE("missing chain below (3,0)") {
        PrefixBitmap p(4);
        for (int i = 0; i < 4; ++i) p.set(i, i);
        p.set(3, 0);
        const auto q = legalize_prefix(p);
        CHECK(q.get(2, 0));
        CHECK(q.get(1, 0));
        CHECK(validate_prefix(q).empty());
    }
    SUBCASE("random bitmaps: valid, idempotent, only adds nodes") {
        std::mt19937_64 rng(13);
        for (int trial = 0; trial < 1000; ++trial) {
            const auto p = oracle::random_bitmap(rng, 8);
            const auto q = legalize_prefix(p);
            REQUIRE(validate_prefix(q).empty());
            CHECK(legalize_prefix(q) == q);
            for (int i = 0; i < 8; ++i)
                for (int j = 0; j <= i; ++j)
                    if (p.get(i, j)) CHECK(q.get(i, j));
        }
    }
}
