// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "circdiff/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "circdiff/legalizer.hpp"
#include "circdiff/parallel.hpp"

namespace circdiff {

namespace fs = std::filesystem;

const char* to_string(DesignKind kind) { return kind == DesignKind::kCompressorTree ? "ct" : "prefix"; }

DesignKind design_kind_from_string(const std::string& s) {
    if (s == "ct") return DesignKind::kCompressorTree;
    if (s == "prefix") return DesignKind::kPrefix;
    fail(ErrorCode::kInvalidArgument, "unknown design kind '" + s + "' (expected ct or prefix)");
}

DesignKind kind_of(const Design& d) {
    return std::holds_alternative<CompressorTree>(d) ? DesignKind::kCompressorTree : DesignKind::kPrefix;
}

Design seed_design(int n, const std::string& name) {
    if (name == "wallace") return wallace_tree(n);
    if (name == "dadda") return dadda_tree(n);
    if (name == "serial") return serial_prefix(n);
    if (name == "sklansky") return sklansky_prefix(n);
    if (name == "kogge_stone") return kogge_stone_prefix(n);
    if (name == "brent_kung") return brent_kung_prefix(n);
    fail(ErrorCode::kInvalidArgument, "unknown seed construction '" + name + "'");
}

QoREvaluator::QoREvaluator(int n_, TimingModel tm, double w, std::optional<CompressorTree> ct)
    : n(n_), timing(tm), tradeoff(w), reference(compute_reference(n_, tm)), frozen_ct(std::move(ct)) {
    if (frozen_ct)
        require(frozen_ct->bit_width() == n, ErrorCode::kInvalidArgument, "frozen compressor tree has the wrong width");
}

QoRLabel QoREvaluator::operator()(const Design& d) const {
    if (const auto* t = std::get_if<CompressorTree>(&d)) {
        require(t->bit_width() == n, ErrorCode::kInvalidArgument, "design width does not match the evaluator");
        return evaluate_design(*t, std::nullopt, timing, tradeoff, reference);
    }
    const auto& p = std::get<PrefixBitmap>(d);
    require(p.width() == 2 * n, ErrorCode::kInvalidArgument, "final adder must be 2n bits wide");
    return evaluate_design(frozen_ct ? *frozen_ct : wallace_tree(n), p, timing, tradeoff, reference);
}

namespace {

bool encodable(const CompressorTree& t) {
    const int limit = (1 << ct_digits(t.bit_width())) - 1;
    return std::all_of(t.counts().begin(), t.counts().end(), [limit](int v) { return v <= limit; });
}

int pick(std::mt19937_64& rng, int bound) { return static_cast<int>(rng() % static_cast<std::uint64_t>(bound)); }

CompressorTree random_edit(const CompressorTree& t, std::mt19937_64& rng) {
    struct Cell {
        int k, c, s;
    };
    std::vector<Cell> used;
    for (int k = 0; k < kCompressorKinds; ++k)
        for (int c = 0; c < t.columns(); ++c)
            for (int s = 0; s < t.stages(); ++s)
                if (t.at(k, c, s) > 0) used.push_back({k, c, s});
    CompressorTree out = t;
    int op = pick(rng, 4);
    if (used.empty()) op = 1;
    switch (op) {
        case 0: {  // move one compressor to another stage of its column
            const Cell e = used[pick(rng, static_cast<int>(used.size()))];
            int s2 = pick(rng, t.stages() - 1);
            if (s2 >= e.s) ++s2;
            if (t.stages() == 1) s2 = e.s;
            out.at(e.k, e.c, e.s) -= 1;
            out.at(e.k, e.c, s2) += 1;
            break;
        }
        case 1:
            out.at(pick(rng, kCompressorKinds), pick(rng, t.columns()), pick(rng, t.stages())) += 1;
            break;
        case 2: {
            const Cell e = used[pick(rng, static_cast<int>(used.size()))];
            out.at(e.k, e.c, e.s) -= 1;
            break;
        }
        default: {
            const Cell e = used[pick(rng, static_cast<int>(used.size()))];
            out.at(e.k, e.c, e.s) -= 1;
            out.at(1 - e.k, e.c, e.s) += 1;
            break;
        }
    }
    return out;
}

bool has_parents(const PrefixBitmap& p, int i, int j) { return i == j || smallest_split(p, i, j).has_value(); }

}  // namespace

CompressorTree mutate_ct(const CompressorTree& t, std::mt19937_64& rng, int retries) {
    std::optional<CompressorTree> unchanged;
    for (int attempt = 0; attempt < retries; ++attempt) {
        LegalizeReport report;
        try {
            CompressorTree next = legalize_ct(random_edit(t, rng), report);
            if (!encodable(next)) continue;
            if (next == t) {
                unchanged = std::move(next);
                continue;
            }
            return next;
        } catch (const LegalizationError&) {
        }
    }
    if (unchanged) return *unchanged;
    fail(ErrorCode::kLegalizationFailure, "no legal mutation found in " + std::to_string(retries) + " attempts");
}

PrefixBitmap mutate_prefix(const PrefixBitmap& p, std::mt19937_64& rng) {
    const int n = p.width();
    if (n < 2) return p;
    constexpr int kAttempts = 32;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
        PrefixBitmap q = p;
        const int i = 1 + pick(rng, n - 1);
        const int j = pick(rng, i);
        if (q.get(i, j)) {
            q.set(i, j, false);
            // Drop nodes that lost their only parent pair until none remain.
            bool changed = true;
            while (changed) {
                changed = false;
                for (int a = 1; a < n; ++a)
                    for (int b = 0; b < a; ++b)
                        if (q.get(a, b) && !has_parents(q, a, b)) {
                            q.set(a, b, false);
                            changed = true;
                        }
            }
        } else {
            q.set(i, j);
        }
        q = legalize_prefix(q);
        if (!(q == p)) return q;
    }
    return p;
}

DatasetSpec DatasetSpec::desk(DesignKind kind, int n) {
    DatasetSpec s;
    s.kind = kind;
    s.n = n;
    return s;
}

DatasetSpec DatasetSpec::paper_scale(DesignKind kind, int n) {
    DatasetSpec s = desk(kind, n);
    s.unlabeled_count = 15000;
    s.labeled_count = 1000;
    return s;
}

void DatasetSpec::validate() const {
    require(n >= 2, ErrorCode::kInvalidArgument, "bit-width must be at least 2");
    require(unlabeled_count > 0 && labeled_count > 0, ErrorCode::kInvalidArgument, "dataset counts must be positive");
    require(labeled_count <= unlabeled_count, ErrorCode::kInvalidArgument,
            "labeled count cannot exceed the number of designs");
    require(mean_mutations >= 0, ErrorCode::kInvalidArgument, "mean mutation count must be non-negative");
}

namespace {

std::vector<std::string> seed_names(const DatasetSpec& spec) {
    if (!spec.seeds.empty()) return spec.seeds;
    if (spec.kind == DesignKind::kCompressorTree) return {"wallace", "dadda"};
    return {"serial", "sklansky", "kogge_stone", "brent_kung"};
}

enum Stream : std::uint64_t { kChainStream = 1, kLabelStream = 2 };

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec, const QoREvaluator& eval, int jobs) {
    spec.validate();
    require(eval.n == spec.n, ErrorCode::kInvalidArgument, "evaluator width does not match the dataset");
    const int width = spec.kind == DesignKind::kCompressorTree ? spec.n : 2 * spec.n;
    std::vector<Design> seeds;
    for (const auto& name : seed_names(spec)) {
        Design d = seed_design(width, name);
        require(kind_of(d) == spec.kind, ErrorCode::kInvalidArgument, "seed '" + name + "' has the wrong design kind");
        seeds.push_back(std::move(d));
    }
    const int count = spec.unlabeled_count;
    const int n_seeds = std::min(static_cast<int>(seeds.size()), count);

    Dataset ds;
    ds.kind = spec.kind;
    ds.n = spec.n;
    ds.designs.resize(count);
    parallel_for(count, jobs, [&](int i) {
        if (i < n_seeds) {
            ds.designs[i] = seeds[i];
            return;
        }
        auto rng = stream_rng(spec.seed, kChainStream, static_cast<std::uint64_t>(i));
        Design d = seeds[pick(rng, static_cast<int>(seeds.size()))];
        std::geometric_distribution<int> length(1.0 / (spec.mean_mutations + 1.0));
        const int steps = length(rng);
        double y = spec.greedy ? eval(d).y : 0.0;
        for (int m = 0; m < steps; ++m) {
            Design next = std::holds_alternative<CompressorTree>(d)
                              ? Design(mutate_ct(std::get<CompressorTree>(d), rng))
                              : Design(mutate_prefix(std::get<PrefixBitmap>(d), rng));
            if (spec.greedy) {
                const double y_next = eval(next).y;
                if (y_next > y) continue;
                y = y_next;
            }
            d = std::move(next);
        }
        ds.designs[i] = std::move(d);
    });

    // Seeds first, then a uniform subset of the mutants.
    std::vector<int> chosen;
    for (int i = 0; i < std::min(n_seeds, spec.labeled_count); ++i) chosen.push_back(i);
    std::vector<int> rest;
    for (int i = n_seeds; i < count; ++i) rest.push_back(i);
    auto rng = stream_rng(spec.seed, kLabelStream, 0);
    std::shuffle(rest.begin(), rest.end(), rng);
    for (int i = 0; static_cast<int>(chosen.size()) < spec.labeled_count; ++i) chosen.push_back(rest[i]);
    std::sort(chosen.begin(), chosen.end());

    ds.labeled.resize(chosen.size());
    parallel_for(static_cast<int>(chosen.size()), jobs, [&](int i) {
        ds.labeled[i] = {chosen[i], eval(ds.designs[chosen[i]])};
    });
    return ds;
}

namespace {

std::string design_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", index);
    return buf;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::string label_csv_header() { return "id,delay1,area1,delay2,area2,y"; }

std::string label_csv_row(const std::string& id, const QoRLabel& q) {
    return id + "," + fmt(q.delay[0]) + "," + fmt(q.area[0]) + "," + fmt(q.delay[1]) + "," + fmt(q.area[1]) + "," +
           fmt(q.y);
}

void save_dataset(const std::string& dir, const Dataset& ds) {
    const fs::path root(dir);
    std::error_code ec;
    fs::create_directories(root / "designs", ec);
    if (ec) fail(ErrorCode::kIo, "cannot create " + (root / "designs").string());
    nlohmann::json meta;
    meta["format_version"] = kFormatVersion;
    meta["kind"] = to_string(ds.kind);
    meta["n"] = ds.n;
    meta["count"] = ds.designs.size();
    std::vector<int> labeled;
    for (const auto& l : ds.labeled) labeled.push_back(l.index);
    meta["labeled"] = labeled;
    std::ofstream(root / "dataset.json") << meta.dump(1) << '\n';
    for (std::size_t i = 0; i < ds.designs.size(); ++i)
        save_design((root / "designs" / (design_id(static_cast<int>(i)) + ".json")).string(), ds.designs[i]);
    std::ofstream csv(root / "labels.csv");
    if (!csv) fail(ErrorCode::kIo, "cannot write " + (root / "labels.csv").string());
    csv << "# format_version=" << kFormatVersion << '\n' << label_csv_header() << '\n';
    for (const auto& l : ds.labeled) csv << label_csv_row(design_id(l.index), l.label) << '\n';
}

Dataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_file(root / "dataset.json"));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::kParse, std::string("dataset.json: ") + e.what());
    }
    Dataset ds;
    try {
        ds.kind = design_kind_from_string(meta.at("kind").get<std::string>());
        ds.n = meta.at("n").get<int>();
        const int count = meta.at("count").get<int>();
        for (int i = 0; i < count; ++i)
            ds.designs.push_back(load_design((root / "designs" / (design_id(i) + ".json")).string()));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::kParse, std::string("dataset.json: ") + e.what());
    }
    std::map<int, QoRLabel> labels;
    std::istringstream csv(read_file(root / "labels.csv"));
    std::string line;
    while (std::getline(csv, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("id,", 0) == 0) continue;
        std::istringstream row(line);
        std::string field;
        std::vector<std::string> f;
        while (std::getline(row, field, ',')) f.push_back(field);
        if (f.size() != 6) fail(ErrorCode::kParse, "labels.csv: expected 6 fields in '" + line + "'");
        QoRLabel q;
        try {
            q.delay[0] = std::stod(f[1]);
            q.area[0] = std::stod(f[2]);
            q.delay[1] = std::stod(f[3]);
            q.area[1] = std::stod(f[4]);
            q.y = std::stod(f[5]);
            const int index = std::stoi(f[0]);
            if (index < 0 || index >= static_cast<int>(ds.designs.size()))
                fail(ErrorCode::kParse, "labels.csv: unknown design id " + f[0]);
            labels[index] = q;
        } catch (const std::logic_error&) {
            fail(ErrorCode::kParse, "labels.csv: malformed row '" + line + "'");
        }
    }
    for (const auto& [index, q] : labels) ds.labeled.push_back({index, q});
    return ds;
}

}  // namespace circdiff
