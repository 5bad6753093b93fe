// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace circdiff {

// Mirrors cd_status in the C API; values must stay in sync.
enum class ErrorCode : int {
    kInvalidArgument = 1,
    kParse = 2,
    kIo = 3,
    kIllegalDesign = 4,
    kEncodingOverflow = 5,
    kInapplicableAction = 6,
    kLegalizationFailure = 7,
    kMissingParent = 8,
    kVerificationFailure = 9,
    kDivergence = 10,
    kSamplingFailure = 11,
    kMustComputeReference = 12,
    kRoundFailure = 13,
    kUnsupported = 14,
    kInternal = 99,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

}  // namespace circdiff
