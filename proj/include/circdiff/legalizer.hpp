// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "circdiff/circuit.hpp"

namespace circdiff {

// Listed in tie-break order.
enum class ActionKind { kSplitFA, kReplaceFA, kDeleteHA, kFuseFA, kReplaceHA, kAddHA };

const char* to_string(ActionKind kind);

struct LegalizeAction {
    ActionKind kind;
    int column = 0;
    int stage = 0;

    friend bool operator==(const LegalizeAction&, const LegalizeAction&) = default;
};

struct LegalizeReport {
    int steps_taken = 0;
    int detours = 0;
    int initial_violations = 0;
    int final_violations = 0;
    bool success = false;
    std::vector<LegalizeAction> trace;
};

std::string report_to_json(const LegalizeReport& report);

class LegalizationError : public Error {
public:
    LegalizationError(const std::string& what, LegalizeReport report)
        : Error(ErrorCode::kLegalizationFailure, what), report_(std::move(report)) {}
    const LegalizeReport& report() const noexcept { return report_; }

private:
    LegalizeReport report_;
};

inline constexpr int kDefaultLegalizeSteps = 5000;

bool action_applicable(const CompressorTree& t, const ColumnCounts& v, const LegalizeAction& a);

/// Throws kInapplicableAction when the action's precondition fails.
CompressorTree apply_action(const CompressorTree& t, const LegalizeAction& a);

std::vector<LegalizeAction> candidate_actions(const CompressorTree& t, const DesignRuleViolation& e);

/// Greedy repair. Each step picks, among the candidates of the first
/// violation that has any, the action leaving the fewest violations
/// (then the smallest total magnitude, then kind/column/stage order). States
/// already visited are not revisited. When the violation count stops
/// improving, the later stages are rebuilt to per-stage height targets with
/// the same action kinds. Throws LegalizationError when the step budget runs
/// out.
CompressorTree legalize_ct(const CompressorTree& t, LegalizeReport& report, int max_steps = kDefaultLegalizeSteps);

/// Forces inputs P[i,i] and outputs P[i,0], then fills missing lower parents
/// scanning rows upward and columns right to left.
PrefixBitmap legalize_prefix(const PrefixBitmap& p);

}  // namespace circdiff
