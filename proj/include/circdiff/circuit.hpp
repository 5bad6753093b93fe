// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

// Circuit representations shared by every stage of the pipeline:
//
//   CompressorTree  T[k, c, s]  count of compressor type k (0 = full adder,
//                               1 = half adder) in column c at stage s.
//   ColumnCounts    V[c, s]     partial-product bits present in column c
//                               before stage s; V[., 0] comes from the AND
//                               array and V[., S] feeds the final adder.
//   PrefixBitmap    P[i, j]     presence of prefix node spanning bits j..i.
//
// Columns are indexed from the least significant bit; stage 0 is the first
// reduction stage.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "circdiff/error.hpp"
#include "circdiff/tensor.hpp"

namespace circdiff {

inline constexpr int kFullAdder = 0;
inline constexpr int kHalfAdder = 1;
inline constexpr int kCompressorKinds = 2;
inline constexpr int kDefaultExtraStages = 1;

/// Smallest stage count that reduces n rows to two with 3:2 counters.
int wallace_min_stages(int n);

/// Stage count S = wallace_min_stages(n) + extra_stages.
int ct_stage_count(int n, int extra_stages = kDefaultExtraStages);

class CompressorTree {
public:
    CompressorTree() = default;
    CompressorTree(int n, int stages);

    int bit_width() const noexcept { return n_; }
    int columns() const noexcept { return 2 * n_; }
    int stages() const noexcept { return stages_; }

    int& at(int kind, int column, int stage) { return counts_[index(kind, column, stage)]; }
    int at(int kind, int column, int stage) const { return counts_[index(kind, column, stage)]; }
    int fa(int column, int stage) const { return at(kFullAdder, column, stage); }
    int ha(int column, int stage) const { return at(kHalfAdder, column, stage); }

    const std::vector<int>& counts() const noexcept { return counts_; }
    int total(int kind) const;

    friend bool operator==(const CompressorTree&, const CompressorTree&) = default;

private:
    std::size_t index(int kind, int column, int stage) const {
        return (static_cast<std::size_t>(kind) * columns() + column) * stages_ + stage;
    }

    int n_ = 0;
    int stages_ = 0;
    std::vector<int> counts_;
};

class ColumnCounts {
public:
    ColumnCounts(int columns, int stages) : columns_(columns), stages_(stages), v_(columns * (stages + 1), 0) {}

    int columns() const noexcept { return columns_; }
    int stages() const noexcept { return stages_; }
    int& at(int column, int stage) { return v_[column * (stages_ + 1) + stage]; }
    int at(int column, int stage) const { return v_[column * (stages_ + 1) + stage]; }
    std::vector<int> stage_column(int stage) const;

private:
    int columns_;
    int stages_;
    std::vector<int> v_;
};

class PrefixBitmap {
public:
    PrefixBitmap() = default;
    explicit PrefixBitmap(int n) : n_(n), bits_(static_cast<std::size_t>(n) * n, 0) {}

    int width() const noexcept { return n_; }
    bool get(int i, int j) const { return bits_[static_cast<std::size_t>(i) * n_ + j] != 0; }
    void set(int i, int j, bool v = true) { bits_[static_cast<std::size_t>(i) * n_ + j] = v ? 1 : 0; }
    const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

    /// Present nodes off the diagonal; each one is one combine cell.
    int combine_nodes() const;
    int popcount() const;

    friend bool operator==(const PrefixBitmap&, const PrefixBitmap&) = default;

private:
    int n_ = 0;
    std::vector<std::uint8_t> bits_;
};

using Design = std::variant<CompressorTree, PrefixBitmap>;

enum class ViolationKind {
    kOverCompression,
    kUnderCompression,
    kMissingLowerParent,
    kMissingInput,   // P[i,i] absent
    kMissingOutput,  // P[i,0] absent; the adder cannot produce carry i
};

struct DesignRuleViolation {
    ViolationKind kind;
    int column = 0;  // CT column, or prefix row i
    int stage = 0;   // CT stage, or prefix column j
    int magnitude = 1;

    friend bool operator==(const DesignRuleViolation&, const DesignRuleViolation&) = default;
};

const char* to_string(ViolationKind kind);

std::vector<int> initial_pp_counts(int n);
ColumnCounts propagate_counts(const CompressorTree& t);

/// Over-compression entries ordered by (stage, column), then
/// under-compression entries by column.
std::vector<DesignRuleViolation> validate_ct(const CompressorTree& t);
std::vector<DesignRuleViolation> validate_prefix(const PrefixBitmap& p);

struct PrefixNode {
    int i;
    int j;
    friend bool operator==(const PrefixNode&, const PrefixNode&) = default;
};

/// Upper and lower parent of node (i, j) chosen with the smallest split k.
std::pair<PrefixNode, PrefixNode> canonical_parents(const PrefixBitmap& p, int i, int j);
std::optional<int> smallest_split(const PrefixBitmap& p, int i, int j);

// Reference constructions.
CompressorTree wallace_tree(int n, int extra_stages = kDefaultExtraStages);
CompressorTree dadda_tree(int n, int extra_stages = kDefaultExtraStages);
PrefixBitmap serial_prefix(int n);
PrefixBitmap sklansky_prefix(int n);
PrefixBitmap kogge_stone_prefix(int n);
PrefixBitmap brent_kung_prefix(int n);

// Tensor codecs.

/// Binary digits per compressor-count cell.
int ct_digits(int n);
Tensor to_tensor(const CompressorTree& t);
Tensor to_tensor(const PrefixBitmap& p);
Tensor to_tensor(const Design& d);
CompressorTree ct_from_tensor(const Tensor& x, int n);
PrefixBitmap prefix_from_tensor(const Tensor& x);
std::vector<int> ct_tensor_shape(int n, int stages);

// JSON interchange. format_version 1.
inline constexpr int kFormatVersion = 1;
std::string design_to_json(const Design& d);
Design design_from_json(const std::string& text);
Design load_design(const std::string& path);
void save_design(const std::string& path, const Design& d);

/// FNV-1a over the tensor cells; used for exact-duplicate detection.
std::uint64_t design_hash(const Design& d);

}  // namespace circdiff
