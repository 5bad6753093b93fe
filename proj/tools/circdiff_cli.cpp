// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Talks to the library only through circdiff.h.
//
// Exit status: 0 success, 1 domain failure (verification, illegal design,
// I/O), 2 usage error.

#include <malloc.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "circdiff/circdiff.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Failure {
    int exit_code;
    std::string message;
};

[[noreturn]] void usage_error(const std::string& msg) { throw Failure{kExitUsage, msg}; }

// Wrong option values are usage errors; everything else is a domain failure.
void check(cd_status s, const std::string& what) {
    if (s == CD_OK) return;
    const int code = s == CD_ERR_INVALID_ARGUMENT ? kExitUsage : kExitFailure;
    throw Failure{code, what + ": " + cd_status_name(s) + ": " + cd_last_error()};
}

struct CString {
    char* p = nullptr;
    CString() = default;
    CString(const CString&) = delete;
    CString& operator=(const CString&) = delete;
    ~CString() { cd_string_free(p); }
    std::string str() const { return p ? p : ""; }
};

struct DesignHandle {
    cd_design* p = nullptr;
    DesignHandle() = default;
    DesignHandle(DesignHandle&& o) noexcept : p(std::exchange(o.p, nullptr)) {}
    DesignHandle& operator=(DesignHandle&& o) noexcept {
        if (this != &o) {
            cd_design_free(p);
            p = std::exchange(o.p, nullptr);
        }
        return *this;
    }
    ~DesignHandle() { cd_design_free(p); }
};

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Failure{kExitFailure, "cannot read " + path};
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void make_parent(const std::string& path) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_file(const std::string& path, const std::string& text) {
    make_parent(path);
    const fs::path p(path);
    std::ofstream f(p, std::ios::binary);
    if (!(f << text)) throw Failure{kExitFailure, "cannot write " + path};
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// key=value lines, '#' comments. Dashes in keys are accepted as underscores.
std::map<std::string, std::string> read_config(const std::string& path) {
    std::map<std::string, std::string> out;
    std::istringstream in(read_file(path));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) usage_error(path + ":" + std::to_string(lineno) + ": expected key = value");
        auto key = trim(line.substr(0, eq));
        for (auto& c : key)
            if (c == '-') c = '_';
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// A subcommand whose options map onto library option keys. Values come from
// --config first and explicit flags second.
class Command {
public:
    Command(CLI::App& root, const std::string& name, const std::string& help)
        : app_(root.add_subcommand(name, help)) {
        app_->add_option("--config", config_path_, "key=value file supplying defaults for the options below")
            ->check(CLI::ExistingFile);
    }

    CLI::App* app() const { return app_; }

    CLI::Option* opt(const std::string& flag, const std::string& key, const std::string& help) {
        auto* o = app_->add_option(flag, values_[key], help);
        keyed_.emplace_back(o, key);
        return o;
    }

    CLI::Option* flag(const std::string& flag, const std::string& key, const std::string& value,
                      const std::string& help) {
        auto* o = app_->add_flag(flag, help);
        flags_.push_back({o, key, value});
        return o;
    }

    // Effective options as key=value text. Config keys this command does not
    // know are skipped with a note so one file can serve several commands.
    std::map<std::string, std::string> resolve() const {
        std::map<std::string, std::string> out;
        if (!config_path_.empty()) {
            for (const auto& [k, v] : read_config(config_path_)) {
                if (accept_all_ || known(k))
                    out[k] = v;
                else
                    std::cerr << "note: " << app_->get_name() << " ignores config key '" << k << "'\n";
            }
        }
        for (const auto& [o, key] : keyed_)
            if (o->count() > 0) out[key] = values_.at(key);
        for (const auto& f : flags_)
            if (f.option->count() > 0) out[f.key] = f.value;
        return out;
    }

    bool given(const std::string& key) const {
        for (const auto& [o, k] : keyed_)
            if (k == key && o->count() > 0) return true;
        return false;
    }

    // Forward every config key; the library rejects the ones it does not know.
    void accept_all_config() { accept_all_ = true; }

private:
    bool known(const std::string& key) const {
        for (const auto& [o, k] : keyed_)
            if (k == key) return true;
        for (const auto& f : flags_)
            if (f.key == key) return true;
        return false;
    }

    struct Flag {
        CLI::Option* option;
        std::string key;
        std::string value;
    };

    CLI::App* app_;
    std::string config_path_;
    bool accept_all_ = false;
    std::map<std::string, std::string> values_;
    std::vector<std::pair<CLI::Option*, std::string>> keyed_;
    std::vector<Flag> flags_;
};

std::string to_text(const std::map<std::string, std::string>& kv) {
    std::string s;
    for (const auto& [k, v] : kv) s += k + " = " + v + "\n";
    return s;
}

std::string take(std::map<std::string, std::string>& kv, const std::string& key, const std::string& fallback = "") {
    const auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    auto v = it->second;
    kv.erase(it);
    return v;
}

// Written next to every output: manifest.json inside an output directory,
// <file>.manifest.json beside an output file.
void write_manifest(const std::string& command, const std::string& options_text, const std::string& seed,
                    const fs::path& where, bool is_dir) {
    nlohmann::json m = {{"format_version", 1},
                        {"tool", "circdiff"},
                        {"version", cd_version()},
                        {"command", command},
                        {"seed", seed},
                        {"config", options_text}};
    const fs::path path = is_dir ? where / "manifest.json" : fs::path(where.string() + ".manifest.json");
    // Thread count does not change results, so it stays out of the hash.
    std::string hashed;
    std::istringstream in(options_text);
    for (std::string line; std::getline(in, line);)
        if (line.rfind("jobs =", 0) != 0) hashed += line + "\n";
    m["config_hash"] = hex64(fnv1a(hashed));
    write_file(path.string(), m.dump(1) + "\n");
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty())
        std::cout << text << (text.empty() || text.back() == '\n' ? "" : "\n");
    else
        write_file(out_path, text.back() == '\n' ? text : text + "\n");
}

DesignHandle load(const std::string& path) {
    DesignHandle d;
    check(cd_design_load(path.c_str(), &d.p), "load " + path);
    return d;
}

cd_design_kind kind_of(const DesignHandle& d) {
    cd_design_kind k{};
    check(cd_design_kind_of(d.p, &k), "design kind");
    return k;
}

int width_of(const DesignHandle& d) {
    int w = 0;
    check(cd_design_width(d.p, &w), "design width");
    return w;
}

void log_line(const char* line, void*) { std::cerr << line << "\n"; }

}  // namespace

int main(int argc, char** argv) {
    // Training allocates many mid-sized buffers; keep them out of mmap and
    // avoid returning memory to the OS between batches.
    mallopt(M_MMAP_THRESHOLD, 1 << 26);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);

    CLI::App app{"Diffusion-guided search over multiplier compressor trees and prefix adders"};
    app.set_version_flag("--version", std::string("circdiff ") + cd_version());
    app.require_subcommand(1);

    // gen-dataset
    Command gen(app, "gen-dataset", "Generate a design dataset by random mutation of seed designs");
    std::string gen_out;
    gen.opt("--kind", "kind", "ct or prefix")->check(CLI::IsMember({"ct", "prefix"}));
    gen.opt("--n", "n", "multiplier operand width");
    gen.opt("--unlabeled", "unlabeled", "number of designs");
    gen.opt("--labeled", "labeled", "number of designs to evaluate");
    gen.opt("--mean-mutations", "mean_mutations", "mean random edits per design");
    gen.opt("--seeds", "seeds", "comma separated seed design names");
    gen.opt("--frozen-ct", "frozen_ct", "tree JSON used to score prefix designs");
    gen.opt("--tradeoff", "tradeoff", "delay weight w in [0,1]");
    gen.opt("--seed", "seed", "RNG seed");
    gen.opt("--jobs", "jobs", "worker threads");
    gen.flag("--greedy", "greedy", "true", "legalize mutations greedily");
    gen.app()->add_option("--out", gen_out, "output directory")->required();

    // train
    Command train(app, "train", "Train a denoiser or a QoR predictor on a dataset");
    std::string train_model = "diffusion", train_dataset, train_out;
    train.app()->add_option("model", train_model, "diffusion or predictor")->check(CLI::IsMember({"diffusion", "predictor"}));
    train.app()->add_option("--dataset", train_dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
    train.opt("--epochs", "epochs", "training epochs");
    train.opt("--batch", "batch", "minibatch size");
    train.opt("--lr", "lr", "Adam learning rate");
    train.opt("--base-width", "base_width", "channel width of the first block");
    train.opt("--time-dim", "time_dim", "timestep embedding size");
    train.opt("--schedule", "schedule", "noise schedule: cosine or linear (diffusion only)");
    train.opt("--schedule-steps", "schedule_steps", "diffusion steps T (diffusion only)");
    train.opt("--validation-fraction", "validation_fraction", "held-out share for validation metrics");
    train.opt("--init", "init", "checkpoint to continue from");
    train.opt("--seed", "seed", "RNG seed");
    train.opt("--jobs", "jobs", "worker threads");
    train.app()->add_option("--out", train_out, "checkpoint path")->required();

    // sample
    Command sample(app, "sample", "Draw designs from a trained denoiser, optionally guided by a predictor");
    std::string sample_den, sample_pred, sample_out;
    sample.app()->add_option("--denoiser", sample_den, "denoiser checkpoint")->required()->check(CLI::ExistingFile);
    sample.app()->add_option("--predictor", sample_pred, "predictor checkpoint (enables guidance)")->check(CLI::ExistingFile);
    sample.opt("--count", "count", "number of samples");
    sample.opt("--steps", "steps", "denoising steps");
    sample.opt("--target", "target", "target QoR y*");
    sample.opt("--strength", "strength", "guidance strength c_g");
    sample.opt("--reflect-steps", "reflect_steps", "guided denoises per timestep");
    sample.opt("--schedule", "schedule", "noise schedule used in training");
    sample.opt("--schedule-steps", "schedule_steps", "diffusion steps T used in training");
    sample.opt("--tradeoff", "tradeoff", "delay weight w for --evaluate");
    sample.opt("--frozen-ct", "frozen_ct", "tree JSON used to score prefix samples");
    sample.opt("--seed", "seed", "RNG seed");
    sample.opt("--jobs", "jobs", "worker threads");
    sample.flag("--no-legalize", "legalize", "false", "keep raw decoded samples");
    sample.flag("--evaluate", "evaluate", "true", "score legalized samples");
    sample.app()->add_option("--out", sample_out, "output directory")->required();

    // legalize
    Command leg(app, "legalize", "Repair a design so that it passes the design rules");
    std::string leg_in, leg_out, leg_report;
    leg.app()->add_option("design", leg_in, "design JSON")->required()->check(CLI::ExistingFile);
    leg.opt("--max-steps", "max_steps", "step budget for trees");
    leg.app()->add_option("--out", leg_out, "output design (default: stdout)");
    leg.app()->add_option("--report", leg_report, "write the repair report here");

    // verify
    Command ver(app, "verify", "Exhaustively check a design or a structural netlist");
    std::string ver_design, ver_cpa, ver_hdl, ver_write, ver_out;
    int ver_n = 0;
    bool ver_adder = false;
    auto* ver_d = ver.app()->add_option("--design", ver_design, "tree or prefix JSON")->check(CLI::ExistingFile);
    ver.app()->add_option("--cpa", ver_cpa, "prefix JSON for the final adder")->check(CLI::ExistingFile)->needs(ver_d);
    auto* ver_h = ver.app()->add_option("--hdl", ver_hdl, "structural Verilog netlist")->check(CLI::ExistingFile);
    ver.app()->add_option("--n", ver_n, "operand width of --hdl")->needs(ver_h);
    ver.app()->add_flag("--adder", ver_adder, "--hdl is an adder rather than a multiplier")->needs(ver_h);
    ver.app()->add_option("--write-hdl", ver_write, "also write the netlist that was checked")->needs(ver_d);
    ver_d->excludes(ver_h);
    ver.app()->add_option("--out", ver_out, "write the result here instead of stdout");

    // evaluate
    Command ev(app, "evaluate", "Unit-gate delay and area of a multiplier");
    std::string ev_design, ev_cpa, ev_tree, ev_out;
    ev.app()->add_option("design", ev_design, "tree or prefix JSON")->required()->check(CLI::ExistingFile);
    ev.app()->add_option("--cpa", ev_cpa, "prefix JSON for the final adder of a tree")->check(CLI::ExistingFile);
    ev.app()->add_option("--tree", ev_tree, "tree for a prefix design (default: Wallace)")->check(CLI::ExistingFile);
    ev.opt("--tradeoff", "tradeoff", "delay weight w in [0,1]");
    ev.app()->add_option("--out", ev_out, "write the label here instead of stdout");

    // optimize
    Command opt(app, "optimize", "Run or resume an optimization campaign");
    std::string opt_out;
    std::vector<std::string> opt_sets;
    opt.accept_all_config();
    opt.opt("--seed", "seed", "campaign seed");
    opt.opt("--jobs", "jobs", "worker threads");
    opt.opt("--n", "n", "multiplier operand width");
    opt.opt("--rounds", "rounds", "rounds per phase");
    opt.app()->add_option("--set", opt_sets, "override any campaign key (key=value)");
    opt.app()->add_option("--out", opt_out, "campaign directory")->required();

    // pareto
    Command par(app, "pareto", "Non-dominated filter over (delay, area)");
    std::string par_in, par_out;
    par.app()->add_option("input", par_in, "CSV of points or labels, or a campaign directory")->required()->check(CLI::ExistingPath);
    par.app()->add_option("--out", par_out, "output CSV (default: stdout)");

    // export-plots
    Command plots(app, "export-plots", "Collect tidy plot data from campaign and sampling runs");
    std::string plots_in, plots_out;
    plots.app()->add_option("dir", plots_in, "directory to scan")->required()->check(CLI::ExistingDirectory);
    plots.app()->add_option("--out", plots_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen.app()) {
            auto kv = gen.resolve();
            const auto text = to_text(kv);
            CString summary;
            check(cd_dataset_generate(text.c_str(), gen_out.c_str(), &summary.p), "gen-dataset");
            write_manifest("gen-dataset", text, take(kv, "seed", "1"), gen_out, true);
            std::cout << summary.str() << "\n";
        } else if (*train.app()) {
            auto kv = train.resolve();
            if (train_model == "predictor") {
                for (const char* key : {"schedule", "schedule_steps"}) {
                    if (train.given(key)) usage_error(std::string("--") + key + " applies to diffusion training only");
                    kv.erase(key);
                }
            }
            make_parent(train_out);
            const auto text = to_text(kv);
            CString result;
            const auto fn = train_model == "diffusion" ? cd_train_diffusion : cd_train_predictor;
            check(fn(train_dataset.c_str(), text.c_str(), train_out.c_str(), &result.p), "train " + train_model);
            write_manifest("train " + train_model, "dataset = " + train_dataset + "\n" + text, take(kv, "seed", "1"),
                           train_out, false);
            std::cout << result.str() << "\n";
        } else if (*sample.app()) {
            auto kv = sample.resolve();
            const auto text = to_text(kv);
            CString summary;
            check(cd_sample(sample_den.c_str(), sample_pred.empty() ? nullptr : sample_pred.c_str(), text.c_str(),
                            sample_out.c_str(), &summary.p),
                  "sample");
            write_manifest("sample",
                           "denoiser = " + sample_den + "\npredictor = " + sample_pred + "\n" + text,
                           take(kv, "seed", "1"), sample_out, true);
            std::cout << summary.str() << "\n";
        } else if (*leg.app()) {
            auto kv = leg.resolve();
            const auto steps_text = take(kv, "max_steps", "0");
            int steps = 0;
            try {
                std::size_t used = 0;
                steps = std::stoi(steps_text, &used);
                if (used != steps_text.size() || steps < 0) throw std::invalid_argument(steps_text);
            } catch (const std::exception&) {
                usage_error("--max-steps expects a non-negative integer");
            }
            const auto d = load(leg_in);
            DesignHandle fixed;
            CString report, json;
            const auto s = cd_design_legalize(d.p, steps, &fixed.p, &report.p);
            if (!leg_report.empty() && report.p) write_file(leg_report, report.str() + "\n");
            check(s, "legalize");
            check(cd_design_to_json(fixed.p, &json.p), "legalize");
            emit(json.str(), leg_out);
            if (!leg_out.empty())
                write_manifest("legalize", "design = " + leg_in + "\nmax_steps = " + steps_text + "\n", "none",
                               leg_out, false);
        } else if (*ver.app()) {
            if (ver_design.empty() && ver_hdl.empty()) usage_error("verify needs --design or --hdl");
            std::string hdl;
            int n = ver_n;
            bool adder = ver_adder;
            if (!ver_design.empty()) {
                const auto d = load(ver_design);
                DesignHandle cpa;
                if (!ver_cpa.empty()) cpa = load(ver_cpa);
                CString text;
                if (kind_of(d) == CD_COMPRESSOR_TREE) {
                    if (cpa.p && kind_of(cpa) != CD_PREFIX) usage_error("--cpa must be a prefix design");
                    check(cd_emit_hdl(d.p, cpa.p, &text.p), "emit netlist");
                    adder = false;
                } else {
                    if (cpa.p) usage_error("--cpa only applies to a tree design");
                    check(cd_emit_hdl(nullptr, d.p, &text.p), "emit netlist");
                    adder = true;
                }
                n = width_of(d);
                hdl = text.str();
                if (!ver_write.empty()) write_file(ver_write, hdl);
            } else {
                if (n <= 0) usage_error("--hdl needs --n");
                hdl = read_file(ver_hdl);
            }
            int pass = 0;
            CString result;
            check(cd_verify_hdl(hdl.c_str(), n, adder ? 1 : 0, &pass, &result.p), "verify");
            emit(result.str(), ver_out);
            if (!pass) {
                std::cerr << "verification failed\n";
                return kExitFailure;
            }
        } else if (*ev.app()) {
            auto kv = ev.resolve();
            double w = 0.66;
            if (kv.count("tradeoff")) {
                try {
                    std::size_t used = 0;
                    w = std::stod(kv["tradeoff"], &used);
                    if (used != kv["tradeoff"].size()) throw std::invalid_argument("");
                } catch (const std::exception&) {
                    usage_error("--tradeoff expects a number");
                }
            }
            auto d = load(ev_design);
            DesignHandle tree, cpa;
            if (kind_of(d) == CD_COMPRESSOR_TREE) {
                if (!ev_tree.empty()) usage_error("--tree only applies to a prefix design");
                tree = std::move(d);
                if (!ev_cpa.empty()) cpa = load(ev_cpa);
            } else {
                if (!ev_cpa.empty()) usage_error("--cpa only applies to a tree design");
                const int width = width_of(d);
                if (width % 2) usage_error("a prefix design needs an even width to pair with a multiplier");
                if (ev_tree.empty())
                    check(cd_design_seed(width / 2, "wallace", &tree.p), "wallace tree");
                else
                    tree = load(ev_tree);
                cpa = std::move(d);
            }
            CString q;
            check(cd_evaluate(tree.p, cpa.p, w, &q.p), "evaluate");
            emit(q.str(), ev_out);
        } else if (*opt.app()) {
            auto kv = opt.resolve();
            for (const auto& s : opt_sets) {
                const auto eq = s.find('=');
                if (eq == std::string::npos) usage_error("--set expects key=value, got '" + s + "'");
                kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
            }
            CString normalized;
            check(cd_campaign_config_normalize(to_text(kv).c_str(), &normalized.p), "optimize config");
            CString report;
            check(cd_campaign_run(normalized.p, opt_out.c_str(), log_line, nullptr, &report.p), "optimize");
            write_manifest("optimize", normalized.str(), take(kv, "seed", "1"), opt_out, true);
            std::cout << report.str() << "\n";
        } else if (*par.app()) {
            const fs::path in(par_in);
            const auto csv = read_file(fs::is_directory(in) ? (in / "archive.csv").string() : par_in);
            CString out;
            check(cd_pareto_filter(csv.c_str(), &out.p), "pareto");
            emit(out.str(), par_out);
        } else if (*plots.app()) {
            CString summary;
            check(cd_export_plots(plots_in.c_str(), plots_out.c_str(), &summary.p), "export-plots");
            write_manifest("export-plots", "dir = " + plots_in + "\n", "none", plots_out, true);
            std::cout << summary.str() << "\n";
        }
    } catch (const Failure& f) {
        std::cerr << "error: " << f.message << "\n";
        return f.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitOk;
}
