// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "circdiff/circdiff.h"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <new>
#include <set>
#include <sstream>

#include <json.hpp>

#include "circdiff/dataset.hpp"
#include "circdiff/legalizer.hpp"
#include "circdiff/netlist.hpp"
#include "circdiff/optimizer.hpp"
#include "circdiff/parallel.hpp"
#include "circdiff/sampler.hpp"

struct cd_design {
    circdiff::Design design;
};

namespace {

using namespace circdiff;
namespace fs = std::filesystem;
using json = nlohmann::json;

thread_local std::string g_last_error;

template <typename F>
cd_status guard(F&& fn) {
    try {
        fn();
        g_last_error.clear();
        return CD_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return static_cast<cd_status>(e.code());
    } catch (const json::exception& e) {
        g_last_error = std::string("json: ") + e.what();
        return CD_ERR_PARSE;
    } catch (const fs::filesystem_error& e) {
        g_last_error = e.what();
        return CD_ERR_IO;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return CD_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return CD_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return CD_ERR_INTERNAL;
    }
}

char* dup(const std::string& s) {
    char* p = static_cast<char*>(std::malloc(s.size() + 1));
    if (!p) throw std::bad_alloc();
    std::memcpy(p, s.c_str(), s.size() + 1);
    return p;
}

void put(char** out, const std::string& s) {
    if (out) *out = dup(s);
}

void need(const void* p, const char* what) {
    require(p != nullptr, ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

// key=value lines; every key must be consumed.
class Options {
public:
    explicit Options(const char* text) {
        if (!text) return;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            require(eq != std::string::npos, ErrorCode::kInvalidArgument, "option '" + line + "' is not key=value");
            values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string str(const std::string& key, const std::string& fallback) {
        used_.insert(key);
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    int integer(const std::string& key, int fallback) {
        const auto v = str(key, "");
        if (v.empty()) return fallback;
        try {
            std::size_t used = 0;
            const int r = std::stoi(v, &used);
            if (used == v.size()) return r;
        } catch (const std::exception&) {
        }
        fail(ErrorCode::kInvalidArgument, "option " + key + " expects an integer, got '" + v + "'");
    }
    std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
        const auto v = str(key, "");
        if (v.empty()) return fallback;
        try {
            std::size_t used = 0;
            const auto r = std::stoull(v, &used);
            if (used == v.size() && v[0] != '-') return r;
        } catch (const std::exception&) {
        }
        fail(ErrorCode::kInvalidArgument, "option " + key + " expects an unsigned integer, got '" + v + "'");
    }
    double number(const std::string& key, double fallback) {
        const auto v = str(key, "");
        if (v.empty()) return fallback;
        try {
            std::size_t used = 0;
            const double r = std::stod(v, &used);
            if (used == v.size()) return r;
        } catch (const std::exception&) {
        }
        fail(ErrorCode::kInvalidArgument, "option " + key + " expects a number, got '" + v + "'");
    }
    bool flag(const std::string& key, bool fallback) {
        const auto v = str(key, "");
        if (v.empty()) return fallback;
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        fail(ErrorCode::kInvalidArgument, "option " + key + " expects true or false, got '" + v + "'");
    }

    void finish() const {
        for (const auto& [k, v] : values_)
            require(used_.count(k) > 0, ErrorCode::kInvalidArgument, "unknown option '" + k + "'");
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    }

    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
};

const CompressorTree& as_tree(const cd_design* d, const char* what) {
    need(d, what);
    const auto* t = std::get_if<CompressorTree>(&d->design);
    require(t != nullptr, ErrorCode::kInvalidArgument, std::string(what) + " must be a compressor tree");
    return *t;
}

const PrefixBitmap& as_prefix(const cd_design* d, const char* what) {
    need(d, what);
    const auto* p = std::get_if<PrefixBitmap>(&d->design);
    require(p != nullptr, ErrorCode::kInvalidArgument, std::string(what) + " must be a prefix bitmap");
    return *p;
}

std::string violations_json(const std::vector<DesignRuleViolation>& v) {
    json arr = json::array();
    for (const auto& e : v)
        arr.push_back({{"kind", to_string(e.kind)}, {"column", e.column}, {"stage", e.stage}, {"magnitude", e.magnitude}});
    return arr.dump();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double median_of(std::vector<double> v) {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::optional<CompressorTree> frozen_tree(Options& o) {
    const auto path = o.str("frozen_ct", "");
    if (path.empty()) return std::nullopt;
    const auto d = load_design(path);
    const auto* t = std::get_if<CompressorTree>(&d);
    require(t != nullptr, ErrorCode::kInvalidArgument, "frozen_ct must hold a compressor tree");
    return *t;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

NetConfig net_config_for(const Dataset& ds, Options& o) {
    require(!ds.designs.empty(), ErrorCode::kInvalidArgument, "dataset is empty");
    const auto shape = to_tensor(ds.designs.front()).shape();
    NetConfig nc;
    nc.in_channels = shape[0];
    nc.height = shape[1];
    nc.width = shape[2];
    nc.base_width = o.integer("base_width", nc.base_width);
    nc.time_dim = o.integer("time_dim", nc.time_dim);
    return nc;
}

TrainConfig train_config(Options& o) {
    TrainConfig tc;
    tc.epochs = o.integer("epochs", tc.epochs);
    tc.batch = o.integer("batch", tc.batch);
    tc.lr = o.number("lr", tc.lr);
    tc.seed = o.u64("seed", tc.seed);
    tc.jobs = o.integer("jobs", tc.jobs);
    tc.validation_fraction = o.number("validation_fraction", tc.validation_fraction);
    require(tc.epochs >= 0 && tc.batch >= 1 && tc.lr > 0 && tc.jobs >= 1, ErrorCode::kInvalidArgument,
            "need epochs >= 0, batch >= 1, lr > 0 and jobs >= 1");
    return tc;
}

std::string train_json(const TrainResult& r, std::size_t params) {
    return json{{"format_version", kFormatVersion},
                {"loss", r.loss},
                {"validation_mse", r.validation_mse},
                {"validation_spearman", r.validation_spearman},
                {"validation_size", r.validation_size},
                {"params", params}}
        .dump(1);
}

DesignShape shape_for(const NetConfig& nc) {
    if (nc.in_channels == 1 && nc.height == nc.width) return {DesignKind::kPrefix, nc.height};
    const DesignShape s{DesignKind::kCompressorTree, nc.height / 2};
    require(s.tensor_shape() == std::vector<int>{nc.in_channels, nc.height, nc.width}, ErrorCode::kInvalidArgument,
            "checkpoint shape matches neither a compressor tree nor a prefix bitmap");
    return s;
}

}  // namespace

extern "C" {

const char* cd_version(void) { return "0.1.0"; }

const char* cd_last_error(void) { return g_last_error.c_str(); }

const char* cd_status_name(cd_status status) {
    switch (status) {
        case CD_OK: return "ok";
        case CD_ERR_INVALID_ARGUMENT: return "invalid-argument";
        case CD_ERR_PARSE: return "parse-error";
        case CD_ERR_IO: return "io-error";
        case CD_ERR_ILLEGAL_DESIGN: return "illegal-design";
        case CD_ERR_ENCODING_OVERFLOW: return "encoding-overflow";
        case CD_ERR_INAPPLICABLE_ACTION: return "inapplicable-action";
        case CD_ERR_LEGALIZATION_FAILURE: return "legalization-failure";
        case CD_ERR_MISSING_PARENT: return "missing-parent";
        case CD_ERR_VERIFICATION_FAILURE: return "verification-failure";
        case CD_ERR_DIVERGENCE: return "divergence";
        case CD_ERR_SAMPLING_FAILURE: return "sampling-failure";
        case CD_ERR_MUST_COMPUTE_REFERENCE: return "must-compute-reference";
        case CD_ERR_ROUND_FAILURE: return "round-failure";
        case CD_ERR_UNSUPPORTED: return "unsupported";
        case CD_ERR_INTERNAL: return "internal-error";
    }
    return "unknown";
}

void cd_string_free(char* s) { std::free(s); }

cd_status cd_design_seed(int n, const char* name, cd_design** out) {
    return guard([&] {
        need(name, "name");
        need(out, "out");
        *out = new cd_design{seed_design(n, name)};
    });
}

cd_status cd_design_from_json(const char* text, cd_design** out) {
    return guard([&] {
        need(text, "json");
        need(out, "out");
        *out = new cd_design{design_from_json(text)};
    });
}

cd_status cd_design_load(const char* path, cd_design** out) {
    return guard([&] {
        need(path, "path");
        need(out, "out");
        *out = new cd_design{load_design(path)};
    });
}

cd_status cd_design_to_json(const cd_design* d, char** out) {
    return guard([&] {
        need(d, "design");
        need(out, "out");
        *out = dup(design_to_json(d->design));
    });
}

cd_status cd_design_save(const cd_design* d, const char* path) {
    return guard([&] {
        need(d, "design");
        need(path, "path");
        save_design(path, d->design);
    });
}

cd_status cd_design_kind_of(const cd_design* d, cd_design_kind* out) {
    return guard([&] {
        need(d, "design");
        need(out, "out");
        *out = std::holds_alternative<CompressorTree>(d->design) ? CD_COMPRESSOR_TREE : CD_PREFIX;
    });
}

cd_status cd_design_width(const cd_design* d, int* out) {
    return guard([&] {
        need(d, "design");
        need(out, "out");
        if (const auto* t = std::get_if<CompressorTree>(&d->design))
            *out = t->bit_width();
        else
            *out = std::get<PrefixBitmap>(d->design).width();
    });
}

void cd_design_free(cd_design* d) { delete d; }

cd_status cd_design_validate(const cd_design* d, char** violations, int* count) {
    return guard([&] {
        need(d, "design");
        const auto v = std::holds_alternative<CompressorTree>(d->design)
                           ? validate_ct(std::get<CompressorTree>(d->design))
                           : validate_prefix(std::get<PrefixBitmap>(d->design));
        if (count) *count = static_cast<int>(v.size());
        put(violations, violations_json(v));
    });
}

cd_status cd_design_legalize(const cd_design* d, int max_steps, cd_design** out, char** report_json) {
    return guard([&] {
        need(d, "design");
        need(out, "out");
        if (const auto* t = std::get_if<CompressorTree>(&d->design)) {
            LegalizeReport report;
            try {
                auto fixed = legalize_ct(*t, report, max_steps > 0 ? max_steps : kDefaultLegalizeSteps);
                put(report_json, report_to_json(report));
                *out = new cd_design{std::move(fixed)};
            } catch (const LegalizationError& e) {
                put(report_json, report_to_json(e.report()));
                throw;
            }
        } else {
            *out = new cd_design{legalize_prefix(std::get<PrefixBitmap>(d->design))};
            put(report_json, json{{"format_version", kFormatVersion}, {"success", true}}.dump());
        }
    });
}

cd_status cd_emit_hdl(const cd_design* tree, const cd_design* cpa, char** hdl) {
    return guard([&] {
        need(hdl, "hdl");
        const TimingModel tm;
        if (!tree) {
            *hdl = dup(emit_hdl(build_prefix_netlist(as_prefix(cpa, "cpa"))));
            return;
        }
        std::optional<PrefixBitmap> p;
        if (cpa) p = as_prefix(cpa, "cpa");
        *hdl = dup(emit_hdl(assemble_multiplier(as_tree(tree, "tree"), p, tm)));
    });
}

cd_status cd_verify_hdl(const char* hdl, int n, int is_adder, int* pass, char** result_json) {
    return guard([&] {
        need(hdl, "hdl");
        need(pass, "pass");
        const Netlist nl = parse_hdl(hdl);
        if (is_adder) require(n >= 1 && n <= 12, ErrorCode::kUnsupported, "exhaustive adder checks need n <= 12");
        const auto r = is_adder ? verify_adder_exhaustive(nl, n) : verify_exhaustive(nl, n);
        *pass = r.pass ? 1 : 0;
        put(result_json, verify_to_json(r));
    });
}

cd_status cd_evaluate(const cd_design* tree, const cd_design* cpa, double tradeoff, char** qor_json) {
    return guard([&] {
        need(qor_json, "qor_json");
        const auto& t = as_tree(tree, "tree");
        std::optional<PrefixBitmap> p;
        if (cpa) p = as_prefix(cpa, "cpa");
        const TimingModel tm;
        *qor_json = dup(qor_to_json(evaluate_design(t, p, tm, tradeoff, compute_reference(t.bit_width(), tm))));
    });
}

cd_status cd_dataset_generate(const char* options, const char* out_dir, char** summary_json) {
    return guard([&] {
        need(out_dir, "out_dir");
        Options o(options);
        const auto kind = design_kind_from_string(o.str("kind", "ct"));
        DatasetSpec spec = DatasetSpec::desk(kind, o.integer("n", 8));
        spec.unlabeled_count = o.integer("unlabeled", spec.unlabeled_count);
        spec.labeled_count = o.integer("labeled", spec.labeled_count);
        spec.mean_mutations = o.number("mean_mutations", spec.mean_mutations);
        spec.seed = o.u64("seed", spec.seed);
        spec.greedy = o.flag("greedy", spec.greedy);
        spec.seeds = split_list(o.str("seeds", ""));
        const int jobs = o.integer("jobs", 1);
        const double w = o.number("tradeoff", kDefaultTradeoff);
        const auto frozen = frozen_tree(o);
        o.finish();
        const QoREvaluator eval(spec.n, TimingModel{}, w, frozen);
        const auto ds = generate_dataset(spec, eval, jobs);
        save_dataset(out_dir, ds);
        std::vector<double> ys;
        for (const auto& l : ds.labeled) ys.push_back(l.label.y);
        put(summary_json, json{{"format_version", kFormatVersion},
                               {"kind", to_string(ds.kind)},
                               {"n", ds.n},
                               {"count", ds.designs.size()},
                               {"labeled", ds.labeled.size()},
                               {"min_y", *std::min_element(ys.begin(), ys.end())},
                               {"max_y", *std::max_element(ys.begin(), ys.end())}}
                              .dump(1));
    });
}

cd_status cd_train_diffusion(const char* dataset_dir, const char* options, const char* out_checkpoint,
                             char** result_json) {
    return guard([&] {
        need(dataset_dir, "dataset_dir");
        need(out_checkpoint, "out_checkpoint");
        Options o(options);
        const auto ds = load_dataset(dataset_dir);
        const auto init = o.str("init", "");
        const NetConfig nc = net_config_for(ds, o);
        const auto schedule = make_schedule(o.integer("schedule_steps", 1000), o.str("schedule", "cosine"));
        const TrainConfig tc = train_config(o);
        o.finish();
        DenoiserNet net = init.empty() ? DenoiserNet(nc, tc.seed) : denoiser_from_json(read_text(init));
        std::vector<Tensor> data;
        for (const auto& d : ds.designs) data.push_back(to_tensor(d));
        const auto r = train_diffusion(net, data, schedule, tc);
        save_checkpoint(out_checkpoint, checkpoint_to_json(net));
        put(result_json, train_json(r, net.param_count()));
    });
}

cd_status cd_train_predictor(const char* dataset_dir, const char* options, const char* out_checkpoint,
                             char** result_json) {
    return guard([&] {
        need(dataset_dir, "dataset_dir");
        need(out_checkpoint, "out_checkpoint");
        Options o(options);
        const auto ds = load_dataset(dataset_dir);
        const auto init = o.str("init", "");
        const NetConfig nc = net_config_for(ds, o);
        const TrainConfig tc = train_config(o);
        o.finish();
        PredictorNet net = init.empty() ? PredictorNet(nc, tc.seed) : predictor_from_json(read_text(init));
        std::vector<Tensor> x;
        std::vector<double> y;
        for (const auto& l : ds.labeled) {
            x.push_back(to_tensor(ds.designs.at(static_cast<std::size_t>(l.index))));
            y.push_back(l.label.y);
        }
        const auto r = train_predictor(net, x, y, tc);
        save_checkpoint(out_checkpoint, checkpoint_to_json(net));
        put(result_json, train_json(r, net.param_count()));
    });
}

cd_status cd_sample(const char* denoiser, const char* predictor, const char* options, const char* out_dir,
                    char** summary_json) {
    return guard([&] {
        need(denoiser, "denoiser");
        need(out_dir, "out_dir");
        Options o(options);
        const DenoiserNet den = denoiser_from_json(read_text(denoiser));
        std::optional<PredictorNet> pred;
        if (predictor) pred = predictor_from_json(read_text(predictor));
        const DesignShape shape = shape_for(den.config());
        const int count = o.integer("count", 16);
        SamplerConfig sc;
        sc.steps = o.integer("steps", sc.steps);
        sc.guidance.target = o.number("target", sc.guidance.target);
        sc.guidance.strength = o.number("strength", sc.guidance.strength);
        sc.guidance.reflect_steps = o.integer("reflect_steps", sc.guidance.reflect_steps);
        sc.seed = o.u64("seed", sc.seed);
        sc.jobs = o.integer("jobs", 1);
        const auto schedule = make_schedule(o.integer("schedule_steps", 1000), o.str("schedule", "cosine"));
        const bool legalize = o.flag("legalize", true);
        const bool evaluate = o.flag("evaluate", false);
        const double w = o.number("tradeoff", kDefaultTradeoff);
        const auto frozen = frozen_tree(o);
        o.finish();
        require(sc.jobs >= 1, ErrorCode::kInvalidArgument, "jobs must be positive");
        require(!evaluate || legalize, ErrorCode::kInvalidArgument, "evaluate needs legalize");

        const auto batch = pred ? sample_guided(count, shape, sc, den, *pred, schedule)
                                : sample_unconditional(count, shape, sc, den, schedule);
        const int n = shape.kind == DesignKind::kCompressorTree ? shape.width : shape.width / 2;
        std::optional<QoREvaluator> eval;
        if (evaluate) eval.emplace(n, TimingModel{}, w, frozen);

        struct Row {
            std::optional<Design> design;
            int steps = 0;
            bool ok = false;
            std::optional<double> y;
        };
        std::vector<Row> rows(static_cast<std::size_t>(count));
        parallel_for(count, sc.jobs, [&](int i) {
            auto& row = rows[static_cast<std::size_t>(i)];
            const auto& raw = batch.designs[static_cast<std::size_t>(i)];
            if (!raw) return;
            row.design = raw;
            row.ok = true;
            if (!legalize) return;
            try {
                if (const auto* t = std::get_if<CompressorTree>(&*raw)) {
                    LegalizeReport rep;
                    row.design = legalize_ct(*t, rep);
                    row.steps = rep.steps_taken;
                } else {
                    row.design = legalize_prefix(std::get<PrefixBitmap>(*raw));
                }
                if (eval) row.y = (*eval)(*row.design).y;
            } catch (const Error&) {
                row.ok = false;
            }
        });

        fs::create_directories(fs::path(out_dir) / "designs");
        std::string csv = "# format_version=" + std::to_string(kFormatVersion) + "\n" + samples_csv_header() + "\n";
        const bool guided = pred.has_value();
        int ok = 0;
        std::vector<double> drvs, ys;
        for (int i = 0; i < count; ++i) {
            const auto& row = rows[static_cast<std::size_t>(i)];
            const auto& diag = batch.diagnostics[static_cast<std::size_t>(i)];
            char name[32];
            std::snprintf(name, sizeof name, "sample_%06d.json", i);
            if (row.design) save_design((fs::path(out_dir) / "designs" / name).string(), *row.design);
            if (row.ok) ++ok;
            if (diag.ok) drvs.push_back(diag.violations);
            if (row.y) ys.push_back(*row.y);
            csv += std::to_string(i) + "," + (guided ? fmt(sc.guidance.target) : "") + "," +
                   (guided ? fmt(sc.guidance.strength) : "0") + "," + std::to_string(sc.guidance.reflect_steps) + "," +
                   (row.ok ? "1" : "0") + "," + fmt(diag.predicted_y) + "," + std::to_string(diag.violations) + "," +
                   std::to_string(row.steps) + "," + (row.y ? fmt(*row.y) : "") + "\n";
        }
        {
            std::ofstream f(fs::path(out_dir) / "samples.csv", std::ios::binary);
            require(static_cast<bool>(f << csv), ErrorCode::kIo, "cannot write samples.csv");
        }
        json summary = {{"format_version", kFormatVersion},
                        {"kind", to_string(shape.kind)},
                        {"count", count},
                        {"ok", ok},
                        {"median_violations", median_of(drvs)}};
        if (!ys.empty()) summary["median_y"] = median_of(ys);
        put(summary_json, summary.dump(1));
    });
}

cd_status cd_campaign_run(const char* config, const char* dir, cd_log_fn log, void* user, char** report_json) {
    return guard([&] {
        need(dir, "dir");
        const auto cfg = CampaignConfig::from_text(config ? config : "");
        std::function<void(const std::string&)> cb;
        if (log) cb = [log, user](const std::string& line) { log(line.c_str(), user); };
        const auto result = run_campaign(cfg, dir, cb);
        put(report_json, result.report.to_json(cfg, result.archive));
    });
}

cd_status cd_campaign_config_normalize(const char* config, char** out) {
    return guard([&] {
        need(out, "out");
        const auto cfg = CampaignConfig::from_text(config ? config : "");
        cfg.validate();
        *out = dup(cfg.to_text());
    });
}

cd_status cd_pareto_filter(const char* csv, char** out_csv) {
    return guard([&] {
        need(csv, "csv");
        need(out_csv, "out_csv");
        ParetoArchive a;
        for (const auto& p : read_points_csv(csv)) a.update(p);
        *out_csv = dup(a.to_csv());
    });
}

cd_status cd_export_plots(const char* dir, const char* out_dir, char** summary_json) {
    return guard([&] {
        need(dir, "dir");
        need(out_dir, "out_dir");
        const auto s = export_plots(dir, out_dir);
        put(summary_json, json{{"format_version", kFormatVersion},
                               {"round_rows", s.round_rows},
                               {"pareto_rows", s.pareto_rows},
                               {"target_rows", s.target_rows},
                               {"strength_rows", s.strength_rows}}
                              .dump(1));
    });
}

}  // extern "C"
