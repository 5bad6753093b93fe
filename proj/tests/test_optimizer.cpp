// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>
#include <string>

#include "circdiff/optimizer.hpp"

using namespace circdiff;
namespace fs = std::filesystem;

namespace {

// Quadratic filter: keep a point when nothing dominates it and no earlier
// point sits at the same coordinates.
std::vector<ParetoPoint> brute_force_front(const std::vector<ParetoPoint>& pts) {
    std::vector<ParetoPoint> out;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        bool keep = true;
        for (std::size_t j = 0; j < pts.size() && keep; ++j) {
            const auto& a = pts[j];
            const auto& b = pts[i];
            const bool better = a.delay <= b.delay && a.area <= b.area && (a.delay < b.delay || a.area < b.area);
            const bool earlier_twin = j < i && a.delay == b.delay && a.area == b.area;
            keep = !(better || earlier_twin);
        }
        if (keep) out.push_back(pts[i]);
    }
    return out;
}

std::set<std::string> ids(const std::vector<ParetoPoint>& pts) {
    std::set<std::string> s;
    for (const auto& p : pts) s.insert(p.id);
    return s;
}

CampaignConfig tiny_campaign() {
    CampaignConfig c;
    c.n = 4;
    c.unlabeled = 80;
    c.labeled = 16;
    c.base_width = 8;
    c.time_dim = 8;
    c.diffusion_epochs = 3;
    c.predictor_epochs = 5;
    c.rounds = 2;
    c.samples_per_round = 12;
    c.labels_per_round = 4;
    c.finetune_epochs = 1;
    c.finetune_predictor_epochs = 2;
    c.sampling_steps = 5;
    c.reflect_steps = 2;
    c.seed = 5;
    return c;
}

fs::path fresh_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    return d;
}

}  // namespace

TEST_CASE("pareto archive") {
    SUBCASE("basic dominance") {
        ParetoArchive a;
        CHECK(a.update({"a", 2, 10, 0}));
        CHECK(a.points().size() == 1);
        CHECK(a.update({"b", 1, 9, 0}));
        REQUIRE(a.points().size() == 1);
        CHECK(a.points()[0].id == "b");
        CHECK_FALSE(a.update({"c", 1, 9, 0}));  // ties keep the incumbent
        CHECK(a.points()[0].id == "b");
        CHECK(a.update({"d", 0.5, 12, 0}));
        CHECK(a.points().size() == 2);
        CHECK_THROWS_AS(a.update({"e", NAN, 1, 0}), Error);
    }
    SUBCASE("matches the brute-force filter on random streams") {
        std::mt19937_64 rng(11);
        for (int trial = 0; trial < 5; ++trial) {
            std::uniform_int_distribution<int> coarse(0, 40);  // coarse grid forces ties
            std::vector<ParetoPoint> pts;
            ParetoArchive a;
            for (int i = 0; i < 1000; ++i) {
                ParetoPoint p{"p" + std::to_string(i), coarse(rng) / 40.0, coarse(rng) / 40.0, 0};
                pts.push_back(p);
                a.update(p);
            }
            CHECK(ids(a.points()) == ids(brute_force_front(pts)));
        }
    }
    SUBCASE("csv round trip") {
        ParetoArchive a;
        a.update({"x", 0.1, 0.7, 0.3});
        a.update({"y", 0.7, 0.1 / 3, 0.5});
        const auto b = ParetoArchive::from_csv(a.to_csv());
        CHECK(b.to_csv() == a.to_csv());
        CHECK(b.sorted()[1].area == 0.1 / 3);
        CHECK_THROWS_AS(ParetoArchive::from_csv("nope\n"), Error);
    }
}

TEST_CASE("campaign config") {
    CampaignConfig c;
    c.target = 0.85;
    c.seed = 123456789012345ULL;
    const auto back = CampaignConfig::from_text(c.to_text());
    CHECK(back.to_text() == c.to_text());
    CHECK(back.seed == c.seed);
    const auto parsed = CampaignConfig::from_text("# comment\nrounds = 3  # inline\n\nselection=predicted\n");
    CHECK(parsed.rounds == 3);
    CHECK(parsed.selection == "predicted");
    CHECK_THROWS_AS(CampaignConfig::from_text("colour = blue\n"), Error);
    CHECK_THROWS_AS(CampaignConfig::from_text("rounds = three\n"), Error);
    CHECK_THROWS_AS(CampaignConfig::from_text("rounds\n"), Error);
    CampaignConfig bad;
    bad.labels_per_round = bad.samples_per_round + 1;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = CampaignConfig{};
    bad.selection = "best";
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("desk campaign") {
    const auto cfg = tiny_campaign();
    const auto dir_a = fresh_dir("circdiff_campaign_a");
    const auto a = run_campaign(cfg, dir_a.string());

    REQUIRE(a.report.phases.size() == 2);
    for (const auto& p : a.report.phases) {
        REQUIRE(p.rounds.size() == 2);
        double prev = p.initial_min;
        for (const auto& r : p.rounds) {
            CHECK(r.best_so_far <= prev);
            CHECK(r.best_so_far <= r.best_of_round);
            CHECK(r.labeled <= cfg.labels_per_round);
            prev = r.best_so_far;
        }
        CHECK(p.best_y <= p.initial_min);
        CHECK(p.best_design.has_value());
    }
    // The serial adder seed carries the phase-1 best into phase 2.
    CHECK(a.report.phases[1].initial_min <= a.report.phases[0].best_y + 1e-12);
    CHECK(std::holds_alternative<PrefixBitmap>(*a.report.phases[1].best_design));
    int expected_calls = 0;
    for (const auto& p : a.report.phases) {
        expected_calls += cfg.labeled;
        for (const auto& r : p.rounds) expected_calls += r.labeled;
    }
    CHECK(a.report.evaluator_calls == expected_calls);
    for (const auto& p : a.archive.points())
        for (const auto& q : a.archive.points()) CHECK_FALSE(dominates(p, q));
    CHECK(fs::exists(dir_a / "report.json"));
    CHECK(fs::exists(dir_a / "phase1_ct" / "round_01" / "labels.csv"));
    CHECK(fs::exists(dir_a / "phase2_prefix" / "best.json"));

    SUBCASE("same seed gives identical outputs") {
        const auto dir_b = fresh_dir("circdiff_campaign_b");
        run_campaign(cfg, dir_b.string());
        CHECK(read_text((dir_a / "archive.csv").string()) == read_text((dir_b / "archive.csv").string()));
        CHECK(read_text((dir_a / "report.json").string()) == read_text((dir_b / "report.json").string()));
        fs::remove_all(dir_b);
    }
    SUBCASE("an interrupted campaign resumes to the same archive") {
        const auto dir_c = fresh_dir("circdiff_campaign_c");
        auto c2 = cfg;
        c2.jobs = 2;
        struct Stop {};
        CHECK_THROWS_AS(run_campaign(c2, dir_c.string(),
                                     [](const std::string& line) {
                                         if (line.find("round 1:") != std::string::npos) throw Stop{};
                                     }),
                        Stop);
        CHECK(fs::exists(dir_c / "state.json"));
        const auto c = run_campaign(c2, dir_c.string());
        CHECK(read_text((dir_a / "archive.csv").string()) == read_text((dir_c / "archive.csv").string()));
        CHECK(read_text((dir_a / "report.json").string()) == read_text((dir_c / "report.json").string()));
        // A finished campaign just reports again.
        CHECK(run_campaign(c2, dir_c.string()).archive.to_csv() == c.archive.to_csv());
        auto other = cfg;
        other.seed = 6;
        CHECK_THROWS_AS(run_campaign(other, dir_c.string()), Error);
        fs::remove_all(dir_c);
    }
    fs::remove_all(dir_a);
}
