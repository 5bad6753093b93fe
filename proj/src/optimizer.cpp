// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "circdiff/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "circdiff/legalizer.hpp"
#include "circdiff/netlist.hpp"
#include "circdiff/parallel.hpp"

namespace circdiff {

namespace fs = std::filesystem;
using json = nlohmann::json;

bool dominates(const ParetoPoint& a, const ParetoPoint& b) {
    return a.delay <= b.delay && a.area <= b.area && (a.delay < b.delay || a.area < b.area);
}

bool ParetoArchive::update(const ParetoPoint& p) {
    require(std::isfinite(p.delay) && std::isfinite(p.area) && std::isfinite(p.y), ErrorCode::kInvalidArgument,
            "archive points need finite metrics");
    for (const auto& q : points_)
        if (dominates(q, p) || (q.delay == p.delay && q.area == p.area)) return false;
    std::erase_if(points_, [&](const ParetoPoint& q) { return dominates(p, q); });
    points_.push_back(p);
    return true;
}

std::vector<ParetoPoint> ParetoArchive::sorted() const {
    auto out = points_;
    std::sort(out.begin(), out.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
        return std::tie(a.delay, a.area, a.id) < std::tie(b.delay, b.area, b.id);
    });
    return out;
}

std::string ParetoArchive::to_csv() const {
    std::ostringstream out;
    out << "# format_version=" << kFormatVersion << "\nid,delay,area,y\n";
    char buf[128];
    for (const auto& p : sorted()) {
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g\n", p.delay, p.area, p.y);
        out << p.id << buf;
    }
    return out.str();
}

ParetoArchive ParetoArchive::from_csv(const std::string& text) {
    ParetoArchive a;
    std::istringstream in(text);
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            require(line == "id,delay,area,y", ErrorCode::kParse, "unexpected archive header: " + line);
            header = true;
            continue;
        }
        std::istringstream row(line);
        std::string id, d, ar, y;
        require(std::getline(row, id, ',') && std::getline(row, d, ',') && std::getline(row, ar, ',') &&
                    std::getline(row, y),
                ErrorCode::kParse, "malformed archive row: " + line);
        try {
            a.points_.push_back({id, std::stod(d), std::stod(ar), std::stod(y)});
        } catch (const std::exception&) {
            fail(ErrorCode::kParse, "malformed archive row: " + line);
        }
    }
    require(header, ErrorCode::kParse, "archive has no header");
    return a;
}

ParetoPoint pareto_point(const std::string& id, const QoRLabel& q) {
    return {id, 0.5 * (q.delay[0] + q.delay[1]), 0.5 * (q.area[0] + q.area[1]), q.y};
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double csv_number(const std::string& s, const std::string& line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorCode::kParse, "bad number in CSV row: " + line);
}

}  // namespace

std::vector<ParetoPoint> read_points_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> header;
    std::vector<ParetoPoint> out;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto cells = split_csv(line);
        if (header.empty()) {
            header = cells;
            const bool archive = header == std::vector<std::string>{"id", "delay", "area", "y"};
            const bool labels = header == std::vector<std::string>{"id", "delay1", "area1", "delay2", "area2", "y"};
            require(archive || labels, ErrorCode::kParse, "expected an archive or label CSV header, got: " + line);
            continue;
        }
        require(cells.size() == header.size(), ErrorCode::kParse, "wrong number of CSV cells: " + line);
        ParetoPoint p;
        p.id = cells[0];
        if (header.size() == 4) {
            p.delay = csv_number(cells[1], line);
            p.area = csv_number(cells[2], line);
            p.y = csv_number(cells[3], line);
        } else {
            p.delay = 0.5 * (csv_number(cells[1], line) + csv_number(cells[3], line));
            p.area = 0.5 * (csv_number(cells[2], line) + csv_number(cells[4], line));
            p.y = csv_number(cells[5], line);
        }
        out.push_back(p);
    }
    require(!header.empty(), ErrorCode::kParse, "CSV has no header");
    return out;
}

std::string samples_csv_header() {
    return "index,target,strength,reflect_steps,ok,predicted_y,violations,legalize_steps,achieved_y";
}

// ---------------------------------------------------------------------------
// Configuration.

namespace {

struct Field {
    const char* key;
    std::function<std::string(const CampaignConfig&)> get;
    std::function<void(CampaignConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long r = std::stoll(v, &used);
        if (used == v.size() && r >= std::numeric_limits<int>::min() && r <= std::numeric_limits<int>::max())
            return static_cast<int>(r);
    } catch (const std::exception&) {
    }
    fail(ErrorCode::kInvalidArgument, "config key " + key + " expects an integer, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double r = std::stod(v, &used);
        if (used == v.size()) return r;
    } catch (const std::exception&) {
    }
    fail(ErrorCode::kInvalidArgument, "config key " + key + " expects a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(ErrorCode::kInvalidArgument, "config key " + key + " expects true or false, got '" + v + "'");
}

#define CD_INT(name)                                                                 \
    Field {                                                                          \
        #name, [](const CampaignConfig& c) { return std::to_string(c.name); },       \
            [](CampaignConfig& c, const std::string& v) { c.name = parse_int(#name, v); } \
    }
#define CD_DOUBLE(name)                                                                 \
    Field {                                                                             \
        #name, [](const CampaignConfig& c) { return fmt_double(c.name); },              \
            [](CampaignConfig& c, const std::string& v) { c.name = parse_double(#name, v); } \
    }
#define CD_STRING(name)                                                  \
    Field {                                                              \
        #name, [](const CampaignConfig& c) { return c.name; },           \
            [](CampaignConfig& c, const std::string& v) { c.name = v; } \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        CD_INT(n),
        Field{"optimize_prefix", [](const CampaignConfig& c) { return std::string(c.optimize_prefix ? "true" : "false"); },
              [](CampaignConfig& c, const std::string& v) { c.optimize_prefix = parse_bool("optimize_prefix", v); }},
        CD_INT(unlabeled),
        CD_INT(labeled),
        CD_DOUBLE(mean_mutations),
        CD_INT(schedule_steps),
        CD_STRING(schedule),
        CD_INT(base_width),
        CD_INT(time_dim),
        CD_INT(diffusion_epochs),
        CD_INT(predictor_epochs),
        CD_INT(rounds),
        CD_INT(samples_per_round),
        CD_INT(labels_per_round),
        CD_INT(finetune_epochs),
        CD_INT(finetune_predictor_epochs),
        CD_STRING(selection),
        CD_INT(sampling_steps),
        CD_DOUBLE(target),
        CD_DOUBLE(strength),
        CD_INT(reflect_steps),
        CD_DOUBLE(tradeoff),
        Field{"seed", [](const CampaignConfig& c) { return std::to_string(c.seed); },
              [](CampaignConfig& c, const std::string& v) {
                  try {
                      std::size_t used = 0;
                      c.seed = std::stoull(v, &used);
                      if (used == v.size()) return;
                  } catch (const std::exception&) {
                  }
                  fail(ErrorCode::kInvalidArgument, "config key seed expects an unsigned integer, got '" + v + "'");
              }},
        CD_INT(jobs),
    };
    return f;
}

#undef CD_INT
#undef CD_DOUBLE
#undef CD_STRING

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void CampaignConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields())
        if (key == f.key) {
            f.set(*this, value);
            return;
        }
    fail(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
}

std::string CampaignConfig::to_text() const {
    std::string out = "# circdiff campaign config, format_version=" + std::to_string(kFormatVersion) + "\n";
    for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
    return out;
}

CampaignConfig CampaignConfig::from_text(const std::string& text) {
    CampaignConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorCode::kParse,
                "config line " + std::to_string(lineno) + " is not key = value");
        c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return c;
}

void CampaignConfig::validate() const {
    auto check = [](bool ok, const std::string& what) { require(ok, ErrorCode::kInvalidArgument, what); };
    check(n >= 2 && n <= 64, "n must be in [2, 64]");
    check(unlabeled >= 1 && labeled >= 1 && labeled <= unlabeled, "need 1 <= labeled <= unlabeled");
    check(mean_mutations >= 0, "mean_mutations must be non-negative");
    check(schedule_steps >= 1, "schedule_steps must be positive");
    check(schedule == "cosine" || schedule == "linear", "schedule must be cosine or linear");
    check(base_width >= 1 && time_dim >= 2 && time_dim % 2 == 0, "base_width >= 1 and an even time_dim >= 2");
    check(diffusion_epochs >= 0 && predictor_epochs >= 0, "epochs must be non-negative");
    check(finetune_epochs >= 0 && finetune_predictor_epochs >= 0, "fine-tune epochs must be non-negative");
    check(rounds >= 0, "rounds must be non-negative");
    check(samples_per_round >= 1, "samples_per_round must be positive");
    check(labels_per_round >= 1 && labels_per_round <= samples_per_round, "need 1 <= labels_per_round <= samples_per_round");
    check(selection == "uniform" || selection == "predicted", "selection must be uniform or predicted");
    check(sampling_steps >= 1 && sampling_steps <= schedule_steps, "sampling_steps must be in [1, schedule_steps]");
    check(std::isfinite(target), "target must be finite");
    check(strength >= 0 && std::isfinite(strength), "strength must be a non-negative number");
    check(reflect_steps >= 1, "reflect_steps must be at least 1");
    check(tradeoff >= 0 && tradeoff <= 1, "tradeoff must be in [0, 1]");
    check(jobs >= 1, "jobs must be positive");
}

// ---------------------------------------------------------------------------
// Reports.

namespace {

json round_json(const RoundStats& r) {
    return {{"round", r.round},
            {"sampled", r.sampled},
            {"sampling_failures", r.sampling_failures},
            {"legal", r.legal},
            {"verified", r.verified},
            {"labeled", r.labeled},
            {"median_violations", r.median_violations},
            {"max_legalize_steps", r.max_legalize_steps},
            {"best_of_round", r.best_of_round},
            {"best_so_far", r.best_so_far}};
}

RoundStats round_from_json(const json& j) {
    RoundStats r;
    r.round = j.at("round");
    r.sampled = j.at("sampled");
    r.sampling_failures = j.at("sampling_failures");
    r.legal = j.at("legal");
    r.verified = j.at("verified");
    r.labeled = j.at("labeled");
    r.median_violations = j.at("median_violations");
    r.max_legalize_steps = j.at("max_legalize_steps");
    r.best_of_round = j.at("best_of_round");
    r.best_so_far = j.at("best_so_far");
    return r;
}

json phase_json(const PhaseReport& p) {
    json rounds = json::array();
    json best_of_round = json::array(), best_so_far = json::array();
    for (const auto& r : p.rounds) {
        rounds.push_back(round_json(r));
        best_of_round.push_back(r.best_of_round);
        best_so_far.push_back(r.best_so_far);
    }
    json j = {{"kind", to_string(p.kind)},
              {"initial_min", p.initial_min},
              {"best_y", p.best_y},
              {"best_id", p.best_id},
              {"rounds", rounds},
              {"best_of_round", best_of_round},
              {"best_so_far", best_so_far}};
    if (p.best_design) j["best_design"] = json::parse(design_to_json(*p.best_design));
    return j;
}

PhaseReport phase_from_json(const json& j) {
    PhaseReport p;
    p.kind = design_kind_from_string(j.at("kind"));
    p.initial_min = j.at("initial_min");
    p.best_y = j.at("best_y");
    p.best_id = j.at("best_id");
    for (const auto& r : j.at("rounds")) p.rounds.push_back(round_from_json(r));
    if (j.contains("best_design")) p.best_design = design_from_json(j.at("best_design").dump());
    return p;
}

}  // namespace

std::string CampaignReport::to_json(const CampaignConfig& cfg, const ParetoArchive& archive) const {
    json config = json::object();
    for (const auto& f : fields())
        if (std::string(f.key) != "jobs") config[f.key] = f.get(cfg);  // speed only; keeps reports comparable
    json phases_j = json::array();
    for (const auto& p : phases) phases_j.push_back(phase_json(p));
    json points = json::array();
    for (const auto& p : archive.sorted())
        points.push_back({{"id", p.id}, {"delay", p.delay}, {"area", p.area}, {"y", p.y}});
    json j = {{"format_version", kFormatVersion},
              {"config", config},
              {"phases", phases_j},
              {"evaluator_calls", evaluator_calls},
              {"archive", points}};
    return j.dump(1) + "\n";
}

// ---------------------------------------------------------------------------
// Campaign.

namespace {

// Tags for derived random streams.
enum : std::uint64_t {
    kTagDataset = 1,
    kTagTrainDiffusion,
    kTagTrainPredictor,
    kTagSample,
    kTagSelect,
    kTagModelInit,
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, int phase, int round) {
    return stream_rng(seed, tag, static_cast<std::uint64_t>(phase) * 1000003u + static_cast<std::uint64_t>(round))();
}

void write_file(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + tmp.string());
        out << text;
        require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

// Config text without settings that only affect speed.
std::string identity_text(const CampaignConfig& cfg) {
    CampaignConfig c = cfg;
    c.jobs = 1;
    return c.to_text();
}

std::string design_id(DesignKind kind, int round, int index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s-r%02d-%06d", to_string(kind), round, index);
    return buf;
}

double median_of(std::vector<double> v) {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

json label_json(const QoRLabel& q) {
    return {{"delay", {q.delay[0], q.delay[1]}},
            {"area", {q.area[0], q.area[1]}},
            {"raw_delay", q.raw_delay},
            {"raw_area", q.raw_area},
            {"y", q.y}};
}

QoRLabel label_from_json(const json& j) {
    QoRLabel q;
    q.delay[0] = j.at("delay").at(0);
    q.delay[1] = j.at("delay").at(1);
    q.area[0] = j.at("area").at(0);
    q.area[1] = j.at("area").at(1);
    q.raw_delay = j.at("raw_delay");
    q.raw_area = j.at("raw_area");
    q.y = j.at("y");
    return q;
}

// Everything needed to continue a phase after a restart.
struct PhaseState {
    DesignKind kind = DesignKind::kCompressorTree;
    std::vector<Design> designs;
    std::vector<std::string> ids;
    std::vector<LabeledDesign> labeled;
    int rounds_done = 0;
};

struct Campaign {
    const CampaignConfig& cfg;
    fs::path dir;
    std::function<void(const std::string&)> log;
    TimingModel tm;
    NoiseSchedule schedule;
    ParetoArchive archive;
    CampaignReport report;
    int phase_index = 0;
    std::optional<PhaseState> state;  // the phase in progress
    bool finished = false;

    void say(const std::string& s) const {
        if (log) log(s);
    }

    fs::path phase_dir(int phase) const {
        return dir / (phase == 0 ? "phase1_ct" : "phase2_prefix");
    }

    // Models after `round` rounds of fine-tuning; round 0 is the initial fit.
    fs::path model_dir(int round) const {
        const fs::path pdir = phase_dir(phase_index);
        if (round == 0) return pdir;
        return pdir / ("round_" + std::string(round < 10 ? "0" : "") + std::to_string(round));
    }

    QoREvaluator evaluator(int phase) const {
        if (phase == 0) return QoREvaluator(cfg.n, tm, cfg.tradeoff);
        const auto& best = report.phases.at(0).best_design;
        require(best.has_value(), ErrorCode::kInternal, "phase 1 finished without a best design");
        return QoREvaluator(cfg.n, tm, cfg.tradeoff, std::get<CompressorTree>(*best));
    }

    void save_state() const {
        json j;
        j["format_version"] = kFormatVersion;
        j["config"] = identity_text(cfg);
        j["phase_index"] = phase_index;
        j["finished"] = finished;
        j["evaluator_calls"] = report.evaluator_calls;
        json phases = json::array();
        for (const auto& p : report.phases) phases.push_back(phase_json(p));
        j["phases"] = phases;
        if (state) {
            json designs = json::array();
            for (const auto& d : state->designs) designs.push_back(json::parse(design_to_json(d)));
            json labeled = json::array();
            for (const auto& l : state->labeled) labeled.push_back({{"index", l.index}, {"label", label_json(l.label)}});
            j["state"] = {{"kind", to_string(state->kind)},
                          {"designs", designs},
                          {"ids", state->ids},
                          {"labeled", labeled},
                          {"rounds_done", state->rounds_done}};
        }
        write_file(dir / "archive.csv", archive.to_csv());
        write_file(dir / "state.json", j.dump() + "\n");
    }

    bool load_state() {
        const fs::path path = dir / "state.json";
        if (!fs::exists(path)) return false;
        json j;
        try {
            j = json::parse(read_text(path.string()));
        } catch (const json::exception& e) {
            fail(ErrorCode::kParse, "campaign state: " + std::string(e.what()));
        }
        try {
            require(j.at("format_version").get<int>() == kFormatVersion, ErrorCode::kParse,
                    "unsupported campaign state version");
            require(j.at("config").get<std::string>() == identity_text(cfg), ErrorCode::kInvalidArgument,
                    dir.string() + " holds a campaign with a different configuration");
            phase_index = j.at("phase_index");
            finished = j.at("finished");
            report.evaluator_calls = j.at("evaluator_calls");
            report.phases.clear();
            for (const auto& p : j.at("phases")) report.phases.push_back(phase_from_json(p));
            if (j.contains("state")) {
                const auto& s = j.at("state");
                PhaseState ps;
                ps.kind = design_kind_from_string(s.at("kind"));
                for (const auto& d : s.at("designs")) ps.designs.push_back(design_from_json(d.dump()));
                ps.ids = s.at("ids").get<std::vector<std::string>>();
                for (const auto& l : s.at("labeled"))
                    ps.labeled.push_back({l.at("index").get<int>(), label_from_json(l.at("label"))});
                ps.rounds_done = s.at("rounds_done");
                state = std::move(ps);
            }
        } catch (const json::exception& e) {
            fail(ErrorCode::kParse, "campaign state: " + std::string(e.what()));
        }
        archive = ParetoArchive::from_csv(read_text((dir / "archive.csv").string()));
        return true;
    }

    NetConfig net_config(const Design& sample) const {
        const auto shape = to_tensor(sample).shape();
        NetConfig nc;
        nc.in_channels = shape[0];
        nc.height = shape[1];
        nc.width = shape[2];
        nc.base_width = cfg.base_width;
        nc.time_dim = cfg.time_dim;
        return nc;
    }

    void train(const PhaseState& ps, DenoiserNet& den, PredictorNet& pred, int round, int den_epochs,
               int pred_epochs) const {
        std::vector<Tensor> data;
        data.reserve(ps.designs.size());
        for (const auto& d : ps.designs) data.push_back(to_tensor(d));
        std::vector<Tensor> lx;
        std::vector<double> ly;
        for (const auto& l : ps.labeled) {
            lx.push_back(data[static_cast<std::size_t>(l.index)]);
            ly.push_back(l.label.y);
        }
        TrainConfig tc;
        tc.jobs = cfg.jobs;
        tc.epochs = den_epochs;
        tc.seed = derive_seed(cfg.seed, kTagTrainDiffusion, phase_index, round);
        if (den_epochs > 0) {
            const auto r = train_diffusion(den, data, schedule, tc);
            say("  diffusion loss " + fmt_double(r.loss.back()));
        }
        tc.epochs = pred_epochs;
        tc.seed = derive_seed(cfg.seed, kTagTrainPredictor, phase_index, round);
        if (pred_epochs > 0) {
            const auto r = train_predictor(pred, lx, ly, tc);
            say("  predictor validation spearman " + fmt_double(r.validation_spearman));
        }
    }

    void start_phase() {
        const DesignKind kind = phase_index == 0 ? DesignKind::kCompressorTree : DesignKind::kPrefix;
        const auto eval = evaluator(phase_index);
        DatasetSpec spec = DatasetSpec::desk(kind, cfg.n);
        spec.unlabeled_count = cfg.unlabeled;
        spec.labeled_count = cfg.labeled;
        spec.mean_mutations = cfg.mean_mutations;
        spec.seed = derive_seed(cfg.seed, kTagDataset, phase_index, 0);
        say(std::string("phase ") + std::to_string(phase_index + 1) + " (" + to_string(kind) + "): generating " +
            std::to_string(cfg.unlabeled) + " designs");
        Dataset ds = generate_dataset(spec, eval, cfg.jobs);
        report.evaluator_calls += static_cast<int>(ds.labeled.size());

        PhaseState ps;
        ps.kind = kind;
        ps.designs = std::move(ds.designs);
        ps.labeled = std::move(ds.labeled);
        for (std::size_t i = 0; i < ps.designs.size(); ++i) ps.ids.push_back(design_id(kind, 0, static_cast<int>(i)));

        PhaseReport pr;
        pr.kind = kind;
        pr.best_y = std::numeric_limits<double>::infinity();
        for (const auto& l : ps.labeled) {
            const auto& id = ps.ids[static_cast<std::size_t>(l.index)];
            archive.update(pareto_point(id, l.label));
            if (l.label.y < pr.best_y) {
                pr.best_y = l.label.y;
                pr.best_id = id;
                pr.best_design = ps.designs[static_cast<std::size_t>(l.index)];
            }
        }
        pr.initial_min = pr.best_y;

        const fs::path pdir = phase_dir(phase_index);
        fs::create_directories(pdir);
        std::string csv = "# format_version=" + std::to_string(kFormatVersion) + "\n" + label_csv_header() + "\n";
        for (const auto& l : ps.labeled) csv += label_csv_row(ps.ids[static_cast<std::size_t>(l.index)], l.label) + "\n";
        write_file(pdir / "labels.csv", csv);
        const NetConfig nc = net_config(ps.designs.front());
        DenoiserNet den(nc, derive_seed(cfg.seed, kTagModelInit, phase_index, 0));
        PredictorNet pred(nc, derive_seed(cfg.seed, kTagModelInit, phase_index, 1));
        say("  training on " + std::to_string(ps.designs.size()) + " designs, " + std::to_string(ps.labeled.size()) +
            " labels");
        train(ps, den, pred, 0, cfg.diffusion_epochs, cfg.predictor_epochs);
        save_checkpoint((pdir / "denoiser.json").string(), checkpoint_to_json(den));
        save_checkpoint((pdir / "predictor.json").string(), checkpoint_to_json(pred));

        report.phases.push_back(std::move(pr));
        state = std::move(ps);
        save_state();
    }

    struct Outcome {
        std::optional<Design> design;  // legal and verified
        bool legal = false;
        int steps = 0;
    };

    Outcome finish_sample(const Design& raw, const QoREvaluator& eval) const {
        Outcome o;
        try {
            if (const auto* t = std::get_if<CompressorTree>(&raw)) {
                LegalizeReport rep;
                const auto fixed = legalize_ct(*t, rep);
                o.steps = rep.steps_taken;
                if (!validate_ct(fixed).empty()) return o;
                to_tensor(fixed);  // must stay encodable to join the dataset
                o.legal = true;
                if (cfg.n <= 8 && !verify_exhaustive(assemble_multiplier(fixed, std::nullopt, tm), cfg.n).pass)
                    return o;
                o.design = fixed;
            } else {
                const auto fixed = legalize_prefix(std::get<PrefixBitmap>(raw));
                if (!validate_prefix(fixed).empty()) return o;
                o.legal = true;
                if (cfg.n <= 8 &&
                    !verify_exhaustive(assemble_multiplier(*eval.frozen_ct, fixed, tm), cfg.n).pass)
                    return o;
                o.design = fixed;
            }
        } catch (const Error&) {
            o.design.reset();
        }
        return o;
    }

    void run_round() {
        PhaseState& ps = *state;
        const int round = ps.rounds_done + 1;
        const fs::path rdir = model_dir(round);
        fs::create_directories(rdir);
        const auto eval = evaluator(phase_index);
        const fs::path mdir = model_dir(ps.rounds_done);
        DenoiserNet den = denoiser_from_json(read_text((mdir / "denoiser.json").string()));
        PredictorNet pred = predictor_from_json(read_text((mdir / "predictor.json").string()));

        SamplerConfig sc;
        sc.steps = cfg.sampling_steps;
        sc.guidance.target = cfg.target;
        sc.guidance.strength = cfg.strength;
        sc.guidance.reflect_steps = cfg.reflect_steps;
        sc.seed = derive_seed(cfg.seed, kTagSample, phase_index, round);
        sc.jobs = cfg.jobs;
        const int width = ps.kind == DesignKind::kCompressorTree ? cfg.n : 2 * cfg.n;
        const auto batch = sample_guided(cfg.samples_per_round, DesignShape{ps.kind, width}, sc, den, pred, schedule);

        RoundStats rs;
        rs.round = round;
        rs.sampled = cfg.samples_per_round;
        std::vector<Outcome> outcomes(static_cast<std::size_t>(cfg.samples_per_round));
        parallel_for(cfg.samples_per_round, cfg.jobs, [&](int i) {
            const auto& d = batch.designs[static_cast<std::size_t>(i)];
            if (d) outcomes[static_cast<std::size_t>(i)] = finish_sample(*d, eval);
        });
        std::vector<double> drvs;
        std::vector<int> ok;
        for (int i = 0; i < cfg.samples_per_round; ++i) {
            const auto& diag = batch.diagnostics[static_cast<std::size_t>(i)];
            if (!diag.ok) {
                ++rs.sampling_failures;
                continue;
            }
            drvs.push_back(diag.violations);
            const auto& o = outcomes[static_cast<std::size_t>(i)];
            rs.max_legalize_steps = std::max(rs.max_legalize_steps, o.steps);
            if (o.legal) ++rs.legal;
            if (o.design) ok.push_back(i);
        }
        rs.median_violations = median_of(drvs);
        rs.verified = static_cast<int>(ok.size());
        if (ok.empty()) {
            save_round_files(rdir, batch, outcomes, {}, {});
            fail(ErrorCode::kRoundFailure, "round " + std::to_string(round) + " produced no legal verified design");
        }

        // Choose which designs to label.
        std::vector<int> chosen = ok;
        if (cfg.selection == "predicted") {
            std::vector<Tensor> xs;
            for (int i : ok) xs.push_back(to_tensor(*outcomes[static_cast<std::size_t>(i)].design));
            const auto py = pred.forward(stack(xs));
            std::vector<int> order(ok.size());
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return py[a] < py[b]; });
            chosen.clear();
            for (int k : order) chosen.push_back(ok[static_cast<std::size_t>(k)]);
        } else {
            auto rng = stream_rng(sc.seed, kTagSelect, 0);
            std::shuffle(chosen.begin(), chosen.end(), rng);
        }
        chosen.resize(std::min<std::size_t>(chosen.size(), static_cast<std::size_t>(cfg.labels_per_round)));
        std::sort(chosen.begin(), chosen.end());
        std::vector<QoRLabel> labels(chosen.size());
        parallel_for(static_cast<int>(chosen.size()), cfg.jobs, [&](int k) {
            labels[static_cast<std::size_t>(k)] = eval(*outcomes[static_cast<std::size_t>(chosen[k])].design);
        });
        report.evaluator_calls += static_cast<int>(chosen.size());
        rs.labeled = static_cast<int>(chosen.size());

        // Merge into the phase datasets.
        std::vector<int> position(static_cast<std::size_t>(cfg.samples_per_round), -1);
        for (int i : ok) {
            position[static_cast<std::size_t>(i)] = static_cast<int>(ps.designs.size());
            ps.designs.push_back(*outcomes[static_cast<std::size_t>(i)].design);
            ps.ids.push_back(design_id(ps.kind, round, i));
        }
        PhaseReport& pr = report.phases.back();
        rs.best_of_round = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < chosen.size(); ++k) {
            const int idx = position[static_cast<std::size_t>(chosen[k])];
            ps.labeled.push_back({idx, labels[k]});
            const auto& id = ps.ids[static_cast<std::size_t>(idx)];
            archive.update(pareto_point(id, labels[k]));
            rs.best_of_round = std::min(rs.best_of_round, labels[k].y);
            if (labels[k].y < pr.best_y) {
                pr.best_y = labels[k].y;
                pr.best_id = id;
                pr.best_design = ps.designs[static_cast<std::size_t>(idx)];
            }
        }
        rs.best_so_far = pr.best_y;
        save_round_files(rdir, batch, outcomes, chosen, labels);

        train(ps, den, pred, round, cfg.finetune_epochs, cfg.finetune_predictor_epochs);
        save_checkpoint((rdir / "denoiser.json").string(), checkpoint_to_json(den));
        save_checkpoint((rdir / "predictor.json").string(), checkpoint_to_json(pred));

        pr.rounds.push_back(rs);
        ps.rounds_done = round;
        say("  round " + std::to_string(round) + ": " + std::to_string(rs.verified) + "/" +
            std::to_string(rs.sampled) + " legal, best of round " + fmt_double(rs.best_of_round) + ", best so far " +
            fmt_double(rs.best_so_far));
        save_state();
    }

    void save_round_files(const fs::path& rdir, const SampleBatch& batch, const std::vector<Outcome>& outcomes,
                          const std::vector<int>& chosen, const std::vector<QoRLabel>& labels) const {
        std::ostringstream diag;
        diag << "# format_version=" << kFormatVersion << "\nindex,ok,predicted_y,violations,legalize_steps,legal\n";
        char buf[64];
        for (std::size_t i = 0; i < batch.diagnostics.size(); ++i) {
            const auto& d = batch.diagnostics[i];
            std::snprintf(buf, sizeof buf, "%.17g", d.predicted_y);
            diag << d.index << ',' << (d.ok ? 1 : 0) << ',' << buf << ',' << d.violations << ','
                 << outcomes[i].steps << ',' << (outcomes[i].design ? 1 : 0) << '\n';
        }
        write_file(rdir / "diagnostics.csv", diag.str());
        std::string csv = "# format_version=" + std::to_string(kFormatVersion) + "\n" + label_csv_header() + "\n";
        fs::create_directories(rdir / "designs");
        for (std::size_t k = 0; k < chosen.size(); ++k) {
            const auto id = design_id(state->kind, state->rounds_done + 1, chosen[k]);
            csv += label_csv_row(id, labels[k]) + "\n";
            save_design((rdir / "designs" / (id + ".json")).string(), *outcomes[static_cast<std::size_t>(chosen[k])].design);
        }
        write_file(rdir / "labels.csv", csv);
    }

    void finish_phase() {
        const auto& pr = report.phases.back();
        if (pr.best_design) save_design((phase_dir(phase_index) / "best.json").string(), *pr.best_design);
        state.reset();
        ++phase_index;
        if (phase_index >= (cfg.optimize_prefix ? 2 : 1)) finished = true;
        save_state();
    }
};

}  // namespace

CampaignResult run_campaign(const CampaignConfig& cfg, const std::string& dir,
                            const std::function<void(const std::string&)>& log) {
    cfg.validate();
    fs::create_directories(dir);
    Campaign c{cfg, fs::path(dir), log, TimingModel{}, make_schedule(cfg.schedule_steps, cfg.schedule), {}, {}, 0, {}, false};
    if (c.load_state()) {
        c.say("resuming campaign in " + dir);
    } else {
        write_file(c.dir / "config.txt", cfg.to_text());
    }
    const int phases = cfg.optimize_prefix ? 2 : 1;
    while (!c.finished && c.phase_index < phases) {
        if (!c.state) c.start_phase();
        while (c.state->rounds_done < cfg.rounds) c.run_round();
        c.finish_phase();
    }
    write_file(c.dir / "report.json", c.report.to_json(cfg, c.archive));
    return {c.archive, c.report};
}

// ---------------------------------------------------------------------------
// Plot data.

namespace {

std::vector<fs::path> find_files(const fs::path& dir, const std::string& name) {
    std::vector<fs::path> out;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() == name) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::string run_name(const fs::path& dir, const fs::path& file) {
    auto rel = fs::relative(file.parent_path(), dir).generic_string();
    return rel.empty() ? "." : rel;
}

}  // namespace

PlotExport export_plots(const std::string& dir, const std::string& out_dir) {
    const fs::path root(dir), out(out_dir);
    require(fs::is_directory(root), ErrorCode::kIo, dir + " is not a directory");
    fs::create_directories(out);
    const std::string version = "# format_version=" + std::to_string(kFormatVersion) + "\n";
    PlotExport stats;

    std::string rounds = version + "run,phase,kind,round,best_of_round,best_so_far\n";
    for (const auto& f : find_files(root, "report.json")) {
        json j;
        try {
            j = json::parse(read_text(f.string()));
            int phase = 0;
            for (const auto& p : j.at("phases")) {
                ++phase;
                const std::string prefix = run_name(root, f) + "," + std::to_string(phase) + "," +
                                           p.at("kind").get<std::string>() + ",";
                const double init = p.at("initial_min");
                rounds += prefix + "0," + fmt_double(init) + "," + fmt_double(init) + "\n";
                ++stats.round_rows;
                for (const auto& r : p.at("rounds")) {
                    rounds += prefix + std::to_string(r.at("round").get<int>()) + "," +
                              fmt_double(r.at("best_of_round")) + "," + fmt_double(r.at("best_so_far")) + "\n";
                    ++stats.round_rows;
                }
            }
        } catch (const json::exception& e) {
            fail(ErrorCode::kParse, f.string() + ": " + e.what());
        }
    }
    write_file(out / "round_best.csv", rounds);

    std::string pareto = version + "run,id,delay,area,y\n";
    for (const auto& f : find_files(root, "archive.csv")) {
        for (const auto& p : ParetoArchive::from_csv(read_text(f.string())).sorted()) {
            pareto += run_name(root, f) + "," + p.id + "," + fmt_double(p.delay) + "," + fmt_double(p.area) + "," +
                      fmt_double(p.y) + "\n";
            ++stats.pareto_rows;
        }
    }
    write_file(out / "pareto.csv", pareto);

    std::string targets = version + "run,target,sample,achieved_y\n";
    std::string strengths = version + "run,strength,target,sample,achieved_y,violations\n";
    for (const auto& f : find_files(root, "samples.csv")) {
        std::istringstream in(read_text(f.string()));
        std::string line;
        bool header = false;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            if (!header) {
                require(line == samples_csv_header(), ErrorCode::kParse, f.string() + ": unexpected header");
                header = true;
                continue;
            }
            const auto c = split_csv(line);
            require(c.size() == 9, ErrorCode::kParse, f.string() + ": malformed row " + line);
            if (c[4] != "1" || c[8].empty()) continue;
            const std::string run = run_name(root, f);
            targets += run + "," + c[1] + "," + c[0] + "," + c[8] + "\n";
            strengths += run + "," + c[2] + "," + c[1] + "," + c[0] + "," + c[8] + "," + c[6] + "\n";
            ++stats.target_rows;
            ++stats.strength_rows;
        }
    }
    write_file(out / "target_sweep.csv", targets);
    write_file(out / "strength_sweep.csv", strengths);
    return stats;
}

}  // namespace circdiff
