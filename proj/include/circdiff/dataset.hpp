// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "circdiff/circuit.hpp"
#include "circdiff/netlist.hpp"

namespace circdiff {

enum class DesignKind { kCompressorTree, kPrefix };

const char* to_string(DesignKind kind);
DesignKind design_kind_from_string(const std::string& s);
DesignKind kind_of(const Design& d);

/// Canonical construction by name: wallace, dadda (compressor trees);
/// serial, sklansky, kogge_stone, brent_kung (prefix adders of width n).
Design seed_design(int n, const std::string& name);

/// Labels designs with the unit-gate QoR model. Prefix designs are the final
/// adder of an n-bit multiplier (width 2n) and are scored together with
/// `frozen_ct`, which defaults to the Wallace tree.
struct QoREvaluator {
    int n = 0;
    TimingModel timing;
    double tradeoff = kDefaultTradeoff;
    QoRReference reference;
    std::optional<CompressorTree> frozen_ct;

    QoREvaluator() = default;
    QoREvaluator(int n, TimingModel tm = {}, double w = kDefaultTradeoff, std::optional<CompressorTree> ct = {});
    QoRLabel operator()(const Design& d) const;
};

inline constexpr int kDefaultMutationRetries = 16;

/// One random edit (stage swap, add, delete or replace) followed by
/// legalization. Retries with a fresh edit when legalization fails or the
/// result cannot be encoded; throws kLegalizationFailure after `retries`.
CompressorTree mutate_ct(const CompressorTree& t, std::mt19937_64& rng, int retries = kDefaultMutationRetries);

/// Flips one off-diagonal bit. A removal also drops dependents left without
/// parents; the result is then legalized.
PrefixBitmap mutate_prefix(const PrefixBitmap& p, std::mt19937_64& rng);

struct DatasetSpec {
    DesignKind kind = DesignKind::kCompressorTree;
    int n = 8;  // multiplier width; prefix designs have width 2n
    int unlabeled_count = 2000;
    int labeled_count = 200;
    std::vector<std::string> seeds;  // empty: every construction of the kind
    double mean_mutations = 8.0;
    bool greedy = false;  // keep an edit only if it does not raise y
    std::uint64_t seed = 1;

    static DatasetSpec desk(DesignKind kind, int n);
    static DatasetSpec paper_scale(DesignKind kind, int n);
    void validate() const;
};

struct LabeledDesign {
    int index = 0;  // position in the unlabeled list
    QoRLabel label;
};

struct Dataset {
    DesignKind kind = DesignKind::kCompressorTree;
    int n = 0;
    std::vector<Design> designs;
    std::vector<LabeledDesign> labeled;
};

/// Pure function of (spec, evaluator); `jobs` only changes speed. Seed
/// constructions are always part of the labeled subset.
Dataset generate_dataset(const DatasetSpec& spec, const QoREvaluator& eval, int jobs = 1);

/// Directory layout: dataset.json, designs/NNNNNN.json, labels.csv.
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

std::string label_csv_header();
std::string label_csv_row(const std::string& id, const QoRLabel& q);

}  // namespace circdiff
