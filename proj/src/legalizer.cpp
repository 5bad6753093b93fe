// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "circdiff/legalizer.hpp"

#include <cstdlib>
#include <optional>
#include <tuple>
#include <unordered_set>

#include <json.hpp>

namespace circdiff {

const char* to_string(ActionKind kind) {
    switch (kind) {
        case ActionKind::kSplitFA: return "SplitFA";
        case ActionKind::kReplaceFA: return "ReplaceFA";
        case ActionKind::kDeleteHA: return "DeleteHA";
        case ActionKind::kFuseFA: return "FuseFA";
        case ActionKind::kReplaceHA: return "ReplaceHA";
        case ActionKind::kAddHA: return "AddHA";
    }
    return "unknown";
}

std::string report_to_json(const LegalizeReport& report) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["success"] = report.success;
    j["steps_taken"] = report.steps_taken;
    j["detours"] = report.detours;
    j["initial_violations"] = report.initial_violations;
    j["final_violations"] = report.final_violations;
    auto& trace = j["trace"] = nlohmann::json::array();
    for (const auto& a : report.trace) trace.push_back({{"kind", to_string(a.kind)}, {"column", a.column}, {"stage", a.stage}});
    return j.dump();
}

namespace {

int spare_bits(const CompressorTree& t, const ColumnCounts& v, int c, int s) {
    return v.at(c, s) - 3 * t.fa(c, s) - 2 * t.ha(c, s);
}

bool in_range(const CompressorTree& t, const LegalizeAction& a) {
    return a.column >= 0 && a.column < t.columns() && a.stage >= 0 && a.stage < t.stages();
}

}  // namespace

bool action_applicable(const CompressorTree& t, const ColumnCounts& v, const LegalizeAction& a) {
    if (!in_range(t, a)) return false;
    const int c = a.column;
    const int s = a.stage;
    switch (a.kind) {
        case ActionKind::kSplitFA: return t.fa(c, s) >= 1 && spare_bits(t, v, c, s) >= 1;
        case ActionKind::kReplaceFA: return t.fa(c, s) >= 1;
        case ActionKind::kDeleteHA: return t.ha(c, s) >= 1;
        case ActionKind::kFuseFA: return t.ha(c, s) >= 2;
        case ActionKind::kReplaceHA: return t.ha(c, s) >= 1 && spare_bits(t, v, c, s) >= 1;
        case ActionKind::kAddHA: return spare_bits(t, v, c, s) >= 2;
    }
    return false;
}

CompressorTree apply_action(const CompressorTree& t, const LegalizeAction& a) {
    if (!action_applicable(t, propagate_counts(t), a))
        fail(ErrorCode::kInapplicableAction, std::string(to_string(a.kind)) + " is not applicable at column " +
                                                 std::to_string(a.column) + " stage " + std::to_string(a.stage));
    CompressorTree out = t;
    int& fa = out.at(kFullAdder, a.column, a.stage);
    int& ha = out.at(kHalfAdder, a.column, a.stage);
    switch (a.kind) {
        case ActionKind::kSplitFA: fa -= 1; ha += 2; break;
        case ActionKind::kReplaceFA: fa -= 1; ha += 1; break;
        case ActionKind::kDeleteHA: ha -= 1; break;
        case ActionKind::kFuseFA: ha -= 2; fa += 1; break;
        case ActionKind::kReplaceHA: ha -= 1; fa += 1; break;
        case ActionKind::kAddHA: ha += 1; break;
    }
    return out;
}

std::vector<LegalizeAction> candidate_actions(const CompressorTree& t, const DesignRuleViolation& e) {
    std::vector<LegalizeAction> all;
    const int c = e.column;
    if (e.kind == ViolationKind::kOverCompression) {
        const int s = e.stage;
        if (c >= 1)
            for (int sp = 0; sp < s; ++sp) all.push_back({ActionKind::kSplitFA, c - 1, sp});
        for (int sp = 0; sp <= s; ++sp) all.push_back({ActionKind::kReplaceFA, c, sp});
        all.push_back({ActionKind::kDeleteHA, c, s});
    } else if (e.kind == ViolationKind::kUnderCompression) {
        if (c >= 1)
            for (int sp = 0; sp < t.stages(); ++sp) all.push_back({ActionKind::kFuseFA, c - 1, sp});
        for (int sp = 0; sp < t.stages(); ++sp) all.push_back({ActionKind::kReplaceHA, c, sp});
        for (int sp = 0; sp < t.stages(); ++sp) all.push_back({ActionKind::kAddHA, c, sp});
    }
    const auto v = propagate_counts(t);
    std::vector<LegalizeAction> out;
    for (const auto& a : all)
        if (action_applicable(t, v, a)) out.push_back(a);
    return out;
}

namespace {

int total_magnitude(const std::vector<DesignRuleViolation>& errors) {
    int m = 0;
    for (const auto& e : errors) m += e.magnitude;
    return m;
}

std::vector<LegalizeAction> neighborhood_actions(const CompressorTree& t, const std::vector<DesignRuleViolation>& errors) {
    const auto v = propagate_counts(t);
    std::vector<LegalizeAction> out;
    std::vector<bool> seen(static_cast<std::size_t>(t.columns()), false);
    for (const auto& e : errors)
        for (int c = std::max(0, e.column - 1); c <= std::min(t.columns() - 1, e.column + 1); ++c) seen[c] = true;
    for (int kind = 0; kind <= static_cast<int>(ActionKind::kAddHA); ++kind)
        for (int c = 0; c < t.columns(); ++c) {
            if (!seen[c]) continue;
            for (int s = 0; s < t.stages(); ++s) {
                const LegalizeAction a{static_cast<ActionKind>(kind), c, s};
                if (action_applicable(t, v, a)) out.push_back(a);
            }
        }
    return out;
}

}  // namespace

namespace {

// Height targets 2, 3, 4, 6, 9, ... counted back from the last stage.
int stage_target(int stages, int s) {
    int target = 2;
    for (int i = 0; i < stages - 1 - s; ++i) target = 3 * target / 2;
    return target;
}

// Keeps stages before `keep` and rebuilds the rest by reducing every column
// to the height target of its stage. Returns nullopt when the kept prefix
// already over-compresses or the rebuilt tree is still illegal.
std::optional<CompressorTree> complete_from(const CompressorTree& t, int keep) {
    CompressorTree out = t;
    for (int s = keep; s < t.stages(); ++s)
        for (int c = 0; c < t.columns(); ++c) out.at(kFullAdder, c, s) = out.at(kHalfAdder, c, s) = 0;
    const auto v0 = propagate_counts(out);
    for (int s = 0; s < keep; ++s)
        for (int c = 0; c < t.columns(); ++c)
            if (spare_bits(out, v0, c, s) < 0) return std::nullopt;
    std::vector<int> v = v0.stage_column(keep);
    for (int s = keep; s < t.stages(); ++s) {
        const int target = stage_target(t.stages(), s);
        std::vector<int> next(v.size(), 0);
        int carry_in = 0;
        for (int c = 0; c < t.columns(); ++c) {
            int fa = 0;
            int ha = 0;
            auto left = [&] { return v[c] - 2 * fa - ha + carry_in; };
            while (left() > target && 3 * (fa + 1) + 2 * ha <= v[c]) {
                if (left() == target + 1) break;
                ++fa;
            }
            if (left() > target && 3 * fa + 2 * (ha + 1) <= v[c]) ++ha;
            out.at(kFullAdder, c, s) = fa;
            out.at(kHalfAdder, c, s) = ha;
            next[c] = left();
            carry_in = fa + ha;
        }
        v = std::move(next);
    }
    if (!validate_ct(out).empty()) return std::nullopt;
    return out;
}

// Action sequence that turns (c, s) of `t` into the counts of `goal`. Stages
// must be rewritten in increasing order so the spare-bit preconditions hold.
void rewrite_cell(CompressorTree& t, const CompressorTree& goal, int c, int s, LegalizeReport& report) {
    const int want_fa = goal.fa(c, s);
    const int want_ha = goal.ha(c, s);
    auto step = [&](ActionKind kind) {
        const LegalizeAction a{kind, c, s};
        t = apply_action(t, a);
        report.trace.push_back(a);
        ++report.steps_taken;
    };
    while (t.fa(c, s) > want_fa) step(ActionKind::kReplaceFA);
    while (t.ha(c, s) > want_ha + (want_fa - t.fa(c, s))) step(ActionKind::kDeleteHA);
    while (t.fa(c, s) < want_fa && t.ha(c, s) > want_ha) step(ActionKind::kReplaceHA);
    while (t.ha(c, s) < want_ha) step(ActionKind::kAddHA);
    while (t.fa(c, s) < want_fa) {
        step(ActionKind::kAddHA);
        step(ActionKind::kReplaceHA);
    }
}

int rewrite_cost(const CompressorTree& t, const CompressorTree& goal) {
    int cost = 0;
    for (int s = 0; s < t.stages(); ++s)
        for (int c = 0; c < t.columns(); ++c)
            cost += 2 * std::abs(t.fa(c, s) - goal.fa(c, s)) + std::abs(t.ha(c, s) - goal.ha(c, s));
    return cost;
}

constexpr int kStallWindow = 50;

}  // namespace

CompressorTree legalize_ct(const CompressorTree& input, LegalizeReport& report, int max_steps) {
    report = LegalizeReport{};
    CompressorTree t = input;
    auto errors = validate_ct(t);
    report.initial_violations = static_cast<int>(errors.size());
    std::unordered_set<std::uint64_t> visited{design_hash(t)};
    std::size_t fewest = errors.size();
    int since_best = 0;

    auto exhausted = [&] {
        report.final_violations = static_cast<int>(errors.size());
        throw LegalizationError("legalization step budget of " + std::to_string(max_steps) + " exhausted", report);
    };

    while (!errors.empty() && since_best < kStallWindow) {
        if (report.steps_taken >= max_steps) exhausted();
        bool found = false;
        LegalizeAction best{};
        CompressorTree best_tree;
        std::vector<DesignRuleViolation> best_errors;
        std::tuple<int, int, int, int, int> best_key{};
        auto consider = [&](const LegalizeAction& a, bool allow_revisit) {
            CompressorTree next = apply_action(t, a);
            if (!allow_revisit && visited.contains(design_hash(next))) return;
            auto next_errors = validate_ct(next);
            std::tuple<int, int, int, int, int> key{static_cast<int>(next_errors.size()), total_magnitude(next_errors),
                                                    static_cast<int>(a.kind), a.column, a.stage};
            if (!found || key < best_key) {
                found = true;
                best_key = key;
                best = a;
                best_tree = std::move(next);
                best_errors = std::move(next_errors);
            }
        };
        for (const auto& e : errors) {
            for (const auto& a : candidate_actions(t, e)) consider(a, false);
            if (found) break;
        }
        if (!found) {
            // Every listed candidate is inapplicable or already visited: widen
            // to all applicable actions next to any violation.
            for (const auto& a : neighborhood_actions(t, errors)) consider(a, false);
        }
        if (!found) break;
        if (best_errors.size() >= errors.size()) ++report.detours;
        visited.insert(design_hash(best_tree));
        t = std::move(best_tree);
        errors = std::move(best_errors);
        report.trace.push_back(best);
        ++report.steps_taken;
        if (errors.size() < fewest) {
            fewest = errors.size();
            since_best = 0;
        } else {
            ++since_best;
        }
    }

    if (!errors.empty()) {
        // Local repair stalled. Keep a stage prefix and rebuild the remaining
        // stages, choosing the cheapest rewrite; keeping nothing always works.
        std::optional<CompressorTree> goal;
        for (int keep = t.stages(); keep >= 0; --keep) {
            auto candidate = complete_from(t, keep);
            if (candidate && (!goal || rewrite_cost(t, *candidate) < rewrite_cost(t, *goal))) goal = std::move(candidate);
        }
        if (!goal) fail(ErrorCode::kInternal, "stage rebuild found no legal completion");
        if (report.steps_taken + rewrite_cost(t, *goal) > max_steps) exhausted();
        for (int s = 0; s < t.stages(); ++s)
            for (int c = 0; c < t.columns(); ++c) rewrite_cell(t, *goal, c, s, report);
        errors = validate_ct(t);
        if (!errors.empty()) fail(ErrorCode::kInternal, "stage rebuild left violations");
    }
    report.final_violations = 0;
    report.success = true;
    return t;
}

namespace {

void fill_lower_parent(PrefixBitmap& p, int i, int j) {
    while (i > j && !smallest_split(p, i, j)) {
        int k = j + 1;
        while (!p.get(i, k)) ++k;  // terminates at k = i
        p.set(k - 1, j);
        i = k - 1;
    }
}

}  // namespace

PrefixBitmap legalize_prefix(const PrefixBitmap& input) {
    PrefixBitmap p = input;
    const int n = p.width();
    for (int i = 0; i < n; ++i) {
        p.set(i, i);
        p.set(i, 0);
        for (int j = i + 1; j < n; ++j) p.set(i, j, false);
    }
    for (int i = 1; i < n; ++i)
        for (int j = i - 1; j >= 0; --j)
            if (p.get(i, j)) fill_lower_parent(p, i, j);
    return p;
}

}  // namespace circdiff
