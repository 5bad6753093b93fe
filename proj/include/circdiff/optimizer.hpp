// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

// Explore, label and fine-tune loop with a Pareto archive over normalized
// (delay, area). Phase 1 searches compressor trees with a serial final
// adder; phase 2 keeps the best tree and searches the prefix adder.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "circdiff/dataset.hpp"
#include "circdiff/neural.hpp"
#include "circdiff/sampler.hpp"

namespace circdiff {

struct ParetoPoint {
    std::string id;
    double delay = 0;  // mean normalized delay over both scenarios
    double area = 0;
    double y = 0;
};

/// True when `a` is no worse on both axes and strictly better on one.
bool dominates(const ParetoPoint& a, const ParetoPoint& b);

class ParetoArchive {
public:
    /// Inserts `p` unless an archived point dominates or equals it; evicts
    /// the points it dominates. Returns whether `p` was inserted.
    bool update(const ParetoPoint& p);
    const std::vector<ParetoPoint>& points() const noexcept { return points_; }
    /// Archived points ordered by delay, then area, then id.
    std::vector<ParetoPoint> sorted() const;

    std::string to_csv() const;
    static ParetoArchive from_csv(const std::string& text);

private:
    std::vector<ParetoPoint> points_;
};

ParetoPoint pareto_point(const std::string& id, const QoRLabel& q);

/// Reads points from an archive CSV (id,delay,area,y) or a label CSV
/// (id,delay1,area1,delay2,area2,y). Comment lines start with '#'.
std::vector<ParetoPoint> read_points_csv(const std::string& text);

struct CampaignConfig {
    int n = 8;
    bool optimize_prefix = true;  // run phase 2

    // Initial data and models.
    int unlabeled = 2000;
    int labeled = 200;
    double mean_mutations = 8.0;
    int schedule_steps = 1000;
    std::string schedule = "cosine";
    int base_width = 16;
    int time_dim = 32;
    int diffusion_epochs = 60;
    int predictor_epochs = 100;

    // Rounds.
    int rounds = 5;
    int samples_per_round = 200;
    int labels_per_round = 25;
    int finetune_epochs = 3;
    int finetune_predictor_epochs = 20;
    std::string selection = "uniform";  // or "predicted": lowest predicted y

    // Sampler.
    int sampling_steps = 20;
    double target = 0.7;
    double strength = 10.0;
    int reflect_steps = 3;

    double tradeoff = kDefaultTradeoff;
    std::uint64_t seed = 1;
    int jobs = 1;

    void validate() const;
    /// Flat key=value text; unknown keys are rejected.
    std::string to_text() const;
    static CampaignConfig from_text(const std::string& text);
    void set(const std::string& key, const std::string& value);
};

struct RoundStats {
    int round = 0;
    int sampled = 0;
    int sampling_failures = 0;
    int legal = 0;
    int verified = 0;
    int labeled = 0;
    double median_violations = 0;
    int max_legalize_steps = 0;
    double best_of_round = 0;
    double best_so_far = 0;
};

struct PhaseReport {
    DesignKind kind = DesignKind::kCompressorTree;
    double initial_min = 0;  // best y among the initial labels
    double best_y = 0;
    std::string best_id;
    std::optional<Design> best_design;
    std::vector<RoundStats> rounds;
};

struct CampaignReport {
    std::vector<PhaseReport> phases;
    int evaluator_calls = 0;
    std::string to_json(const CampaignConfig& cfg, const ParetoArchive& archive) const;
};

struct CampaignResult {
    ParetoArchive archive;
    CampaignReport report;
};

/// Runs (or resumes) a campaign in `dir`. Each completed round is
/// checkpointed, so an interrupted run continues from the last finished
/// round and ends with the same archive. `log` receives progress lines.
CampaignResult run_campaign(const CampaignConfig& cfg, const std::string& dir,
                            const std::function<void(const std::string&)>& log = {});

/// Header of the per-sample CSV written by sampling runs.
std::string samples_csv_header();

struct PlotExport {
    int round_rows = 0;
    int pareto_rows = 0;
    int target_rows = 0;
    int strength_rows = 0;
};

/// Collects every report.json, archive.csv and samples.csv under `dir` into
/// round_best.csv, pareto.csv, target_sweep.csv and strength_sweep.csv in
/// `out_dir`. Missing inputs give header-only files.
PlotExport export_plots(const std::string& dir, const std::string& out_dir);

}  // namespace circdiff
