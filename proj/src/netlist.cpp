// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "circdiff/netlist.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

namespace circdiff {

const char* to_string(CellKind kind) {
    switch (kind) {
        case CellKind::kTie0: return "tie0";
        case CellKind::kAnd: return "and";
        case CellKind::kXor: return "xor";
        case CellKind::kHalfAdder: return "ha";
        case CellKind::kFullAdder: return "fa";
        case CellKind::kPrefixBlack: return "black";
        case CellKind::kPrefixGray: return "gray";
    }
    return "unknown";
}

int Netlist::add_input(const std::string& port, int bits) {
    Port p{port, {}};
    for (int i = 0; i < bits; ++i) p.wires.push_back(new_wire());
    inputs.push_back(std::move(p));
    return static_cast<int>(inputs.size()) - 1;
}

const Port& Netlist::input(const std::string& port) const {
    for (const auto& p : inputs)
        if (p.name == port) return p;
    fail(ErrorCode::kInvalidArgument, "netlist has no input port '" + port + "'");
}

const Port& Netlist::output(const std::string& port) const {
    for (const auto& p : outputs)
        if (p.name == port) return p;
    fail(ErrorCode::kInvalidArgument, "netlist has no output port '" + port + "'");
}

int Netlist::count(CellKind kind) const {
    return static_cast<int>(std::count_if(cells.begin(), cells.end(), [kind](const Cell& c) { return c.kind == kind; }));
}

namespace {

std::pair<int, int> pin_counts(CellKind kind) {
    switch (kind) {
        case CellKind::kTie0: return {0, 1};
        case CellKind::kAnd:
        case CellKind::kXor: return {2, 1};
        case CellKind::kHalfAdder: return {2, 2};
        case CellKind::kFullAdder: return {3, 2};
        case CellKind::kPrefixBlack: return {4, 2};
        case CellKind::kPrefixGray: return {3, 1};
    }
    return {0, 0};
}

}  // namespace

void check_netlist(const Netlist& nl) {
    std::vector<int> driven(nl.wire_count, 0);
    for (const auto& p : nl.inputs)
        for (int w : p.wires) {
            require(w >= 0 && w < nl.wire_count, ErrorCode::kIllegalDesign, "input wire out of range");
            ++driven[w];
        }
    for (const auto& cell : nl.cells) {
        const auto [nin, nout] = pin_counts(cell.kind);
        require(static_cast<int>(cell.inputs.size()) == nin && static_cast<int>(cell.outputs.size()) == nout,
                ErrorCode::kIllegalDesign, "cell " + cell.name + " has the wrong pin count");
        for (int w : cell.inputs) {
            require(w >= 0 && w < nl.wire_count, ErrorCode::kIllegalDesign, "wire out of range in " + cell.name);
            require(driven[w] == 1, ErrorCode::kIllegalDesign, "cell " + cell.name + " reads an undriven wire");
        }
        for (int w : cell.outputs) {
            require(w >= 0 && w < nl.wire_count, ErrorCode::kIllegalDesign, "wire out of range in " + cell.name);
            require(++driven[w] == 1, ErrorCode::kIllegalDesign, "wire w" + std::to_string(w) + " has several drivers");
        }
    }
    for (const auto& p : nl.outputs)
        for (int w : p.wires)
            require(w >= 0 && w < nl.wire_count && driven[w] == 1, ErrorCode::kIllegalDesign,
                    "output port " + p.name + " reads an undriven wire");
}

double TimingModel::pin_delay(CellKind kind, int in, int out) const {
    switch (kind) {
        case CellKind::kTie0: return 0;
        case CellKind::kAnd: return and_delay;
        case CellKind::kXor: return xor_delay;
        case CellKind::kHalfAdder: return out == 0 ? ha_sum_delay : ha_carry_delay;
        case CellKind::kFullAdder:
            if (in == 2) return out == 0 ? fa_cin_sum_delay : fa_cin_carry_delay;
            return out == 0 ? fa_ab_sum_delay : fa_ab_carry_delay;
        case CellKind::kPrefixBlack:
        case CellKind::kPrefixGray: return prefix_delay;
    }
    return 0;
}

double TimingModel::area(CellKind kind) const {
    switch (kind) {
        case CellKind::kTie0: return 0;
        case CellKind::kAnd: return and_area;
        case CellKind::kXor: return xor_area;
        case CellKind::kHalfAdder: return ha_area;
        case CellKind::kFullAdder: return fa_area;
        case CellKind::kPrefixBlack:
        case CellKind::kPrefixGray: return prefix_area;
    }
    return 0;
}

void TimingModel::validate() const {
    for (double v : {and_delay, and_area, xor_delay, xor_area, ha_sum_delay, ha_carry_delay, ha_area, fa_ab_sum_delay,
                     fa_ab_carry_delay, fa_cin_sum_delay, fa_cin_carry_delay, fa_area, prefix_delay, prefix_area})
        require(v > 0, ErrorCode::kInvalidArgument, "timing model constants must be positive");
}

#define CIRCDIFF_TIMING_FIELDS(X)                                                                                  \
    X(and_delay) X(and_area) X(xor_delay) X(xor_area) X(ha_sum_delay) X(ha_carry_delay) X(ha_area) X(fa_ab_sum_delay) \
        X(fa_ab_carry_delay) X(fa_cin_sum_delay) X(fa_cin_carry_delay) X(fa_area) X(prefix_delay) X(prefix_area)

std::string timing_to_json(const TimingModel& tm) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
#define X(f) j[#f] = tm.f;
    CIRCDIFF_TIMING_FIELDS(X)
#undef X
    return j.dump();
}

TimingModel timing_from_json(const std::string& text) {
    TimingModel tm;
    try {
        const auto j = nlohmann::json::parse(text);
#define X(f) \
    if (j.contains(#f)) tm.f = j.at(#f).get<double>();
        CIRCDIFF_TIMING_FIELDS(X)
#undef X
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::kParse, std::string("timing json: ") + e.what());
    }
    tm.validate();
    return tm;
}

std::vector<double> arrival_times(const Netlist& nl, const TimingModel& tm) {
    std::vector<double> at(nl.wire_count, 0.0);
    for (const auto& cell : nl.cells) {
        for (std::size_t o = 0; o < cell.outputs.size(); ++o) {
            double t = 0.0;
            for (std::size_t i = 0; i < cell.inputs.size(); ++i)
                t = std::max(t, at[cell.inputs[i]] + tm.pin_delay(cell.kind, static_cast<int>(i), static_cast<int>(o)));
            at[cell.outputs[o]] = t;
        }
    }
    return at;
}

double critical_path(const Netlist& nl, const TimingModel& tm) {
    const auto at = arrival_times(nl, tm);
    double worst = 0.0;
    for (const auto& p : nl.outputs)
        for (int w : p.wires) worst = std::max(worst, at[w]);
    return worst;
}

double total_area(const Netlist& nl, const TimingModel& tm) {
    double a = 0.0;
    for (const auto& cell : nl.cells) a += tm.area(cell.kind);
    return a;
}

namespace {

std::string cell_name(const char* kind, int column, int stage, int ordinal) {
    return std::string(kind) + "_c" + std::to_string(column) + "_s" + std::to_string(stage) + "_" + std::to_string(ordinal);
}

struct Bit {
    int wire;
    double arrival;
};

int tie0(Netlist& nl, int& tie_wire) {
    if (tie_wire < 0) {
        tie_wire = nl.new_wire();
        nl.cells.push_back({CellKind::kTie0, {}, {tie_wire}, "tie0"});
    }
    return tie_wire;
}

}  // namespace

CtNetlist build_ct_netlist(const CompressorTree& t, const TimingModel& tm) {
    const auto errors = validate_ct(t);
    if (!errors.empty())
        fail(ErrorCode::kIllegalDesign, "compressor tree has " + std::to_string(errors.size()) + " design-rule violations");
    const int n = t.bit_width();
    const int cols = t.columns();
    CtNetlist out;
    Netlist& nl = out.netlist;
    nl.name = "multiplier_n" + std::to_string(n);
    nl.add_input("a", n);
    nl.add_input("b", n);
    const auto a = nl.inputs[0].wires;
    const auto b = nl.inputs[1].wires;

    std::vector<std::vector<Bit>> column(cols);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const int w = nl.new_wire();
            nl.cells.push_back({CellKind::kAnd, {a[i], b[j]}, {w}, "pp_a" + std::to_string(i) + "_b" + std::to_string(j)});
            column[i + j].push_back({w, tm.and_delay});
        }
    }
    auto snapshot = [&] {
        std::vector<int> counts(cols);
        for (int c = 0; c < cols; ++c) counts[c] = static_cast<int>(column[c].size());
        out.stage_counts.push_back(std::move(counts));
    };
    snapshot();

    for (int s = 0; s < t.stages(); ++s) {
        std::vector<std::vector<Bit>> next(cols);
        for (int c = 0; c < cols; ++c) {
            auto& bits = column[c];
            std::stable_sort(bits.begin(), bits.end(), [](const Bit& x, const Bit& y) { return x.arrival < y.arrival; });
            std::size_t idx = 0;
            auto emit = [&](CellKind kind, int width, int ordinal) {
                Cell cell{kind, {}, {}, cell_name(kind == CellKind::kFullAdder ? "fa" : "ha", c, s, ordinal)};
                double sum_at = 0.0;
                double carry_at = 0.0;
                for (int k = 0; k < width; ++k) {
                    const Bit& bit = bits[idx++];
                    cell.inputs.push_back(bit.wire);
                    sum_at = std::max(sum_at, bit.arrival + tm.pin_delay(kind, k, 0));
                    carry_at = std::max(carry_at, bit.arrival + tm.pin_delay(kind, k, 1));
                }
                const int sum = nl.new_wire();
                const int carry = nl.new_wire();
                cell.outputs = {sum, carry};
                nl.cells.push_back(std::move(cell));
                next[c].push_back({sum, sum_at});
                if (c + 1 < cols) next[c + 1].push_back({carry, carry_at});
            };
            for (int f = 0; f < t.fa(c, s); ++f) emit(CellKind::kFullAdder, 3, f);
            for (int h = 0; h < t.ha(c, s); ++h) emit(CellKind::kHalfAdder, 2, h);
            for (; idx < bits.size(); ++idx) next[c].push_back(bits[idx]);
        }
        column = std::move(next);
        snapshot();
    }
    out.rows.resize(cols);
    for (int c = 0; c < cols; ++c) {
        std::stable_sort(column[c].begin(), column[c].end(), [](const Bit& x, const Bit& y) { return x.arrival < y.arrival; });
        for (const auto& bit : column[c]) out.rows[c].push_back(bit.wire);
    }
    return out;
}

std::vector<int> append_prefix_adder(Netlist& nl, const PrefixBitmap& p, const std::vector<int>& a,
                                     const std::vector<int>& b, int cin) {
    const int n = p.width();
    require(static_cast<int>(a.size()) == n && static_cast<int>(b.size()) == n, ErrorCode::kInvalidArgument,
            "adder operand width does not match the prefix bitmap");
    const auto errors = validate_prefix(p);
    if (!errors.empty())
        fail(ErrorCode::kIllegalDesign, "prefix bitmap has " + std::to_string(errors.size()) + " design-rule violations");

    // g[i][j], pr[i][j]: wires of node (i, j); pr is -1 where only G is built.
    std::vector<std::vector<int>> g(n, std::vector<int>(n, -1));
    std::vector<std::vector<int>> pr(n, std::vector<int>(n, -1));
    std::vector<int> prop(n);
    for (int i = 0; i < n; ++i) {
        const int gw = nl.new_wire();
        const int pw = nl.new_wire();
        const auto idx = std::to_string(i);
        nl.cells.push_back({CellKind::kAnd, {a[i], b[i]}, {gw}, "gen_" + idx});
        nl.cells.push_back({CellKind::kXor, {a[i], b[i]}, {pw}, "prop_" + idx});
        g[i][i] = gw;
        pr[i][i] = pw;
        prop[i] = pw;
    }
    if (cin >= 0) {
        const int gw = nl.new_wire();
        nl.cells.push_back({CellKind::kPrefixGray, {g[0][0], pr[0][0], cin}, {gw}, "cin_merge"});
        g[0][0] = gw;
    }
    for (int i = 1; i < n; ++i) {
        for (int j = i - 1; j >= 0; --j) {
            if (!p.get(i, j)) continue;
            const auto [hi, lo] = canonical_parents(p, i, j);
            const auto name = "node_" + std::to_string(i) + "_" + std::to_string(j);
            const int gw = nl.new_wire();
            if (j == 0) {
                nl.cells.push_back({CellKind::kPrefixGray, {g[hi.i][hi.j], pr[hi.i][hi.j], g[lo.i][lo.j]}, {gw}, name});
            } else {
                const int pw = nl.new_wire();
                nl.cells.push_back(
                    {CellKind::kPrefixBlack, {g[hi.i][hi.j], pr[hi.i][hi.j], g[lo.i][lo.j], pr[lo.i][lo.j]}, {gw, pw}, name});
                pr[i][j] = pw;
            }
            g[i][j] = gw;
        }
    }
    std::vector<int> sum(n + 1);
    if (cin >= 0) {
        sum[0] = nl.new_wire();
        nl.cells.push_back({CellKind::kXor, {prop[0], cin}, {sum[0]}, "sum_0"});
    } else {
        sum[0] = prop[0];
    }
    for (int i = 1; i < n; ++i) {
        sum[i] = nl.new_wire();
        nl.cells.push_back({CellKind::kXor, {prop[i], g[i - 1][0]}, {sum[i]}, "sum_" + std::to_string(i)});
    }
    sum[n] = g[n - 1][0];
    return sum;
}

Netlist build_prefix_netlist(const PrefixBitmap& p, bool with_carry_in) {
    Netlist nl;
    nl.name = "adder_n" + std::to_string(p.width());
    nl.add_input("a", p.width());
    nl.add_input("b", p.width());
    int cin = -1;
    if (with_carry_in) cin = nl.inputs[nl.add_input("cin", 1)].wires[0];
    const auto sum = append_prefix_adder(nl, p, nl.inputs[0].wires, nl.inputs[1].wires, cin);
    nl.outputs.push_back({"s", sum});
    return nl;
}

Netlist assemble_multiplier(const CompressorTree& t, const std::optional<PrefixBitmap>& cpa, const TimingModel& tm) {
    const int width = t.columns();
    const PrefixBitmap adder = cpa ? *cpa : serial_prefix(width);
    require(adder.width() == width, ErrorCode::kInvalidArgument,
            "CPA width " + std::to_string(adder.width()) + " does not match 2n = " + std::to_string(width));
    CtNetlist ct = build_ct_netlist(t, tm);
    Netlist nl = std::move(ct.netlist);
    int tie = -1;
    std::vector<int> row_a(width), row_b(width);
    for (int c = 0; c < width; ++c) {
        const auto& bits = ct.rows[c];
        row_a[c] = bits.size() > 0 ? bits[0] : tie0(nl, tie);
        row_b[c] = bits.size() > 1 ? bits[1] : tie0(nl, tie);
    }
    auto sum = append_prefix_adder(nl, adder, row_a, row_b, -1);
    sum.pop_back();  // the product fits in 2n bits
    nl.outputs.push_back({"p", sum});
    return nl;
}

std::vector<std::vector<std::uint64_t>> simulate(const Netlist& nl,
                                                 const std::vector<std::vector<std::uint64_t>>& input_words) {
    require(input_words.size() == nl.inputs.size(), ErrorCode::kInvalidArgument, "input port count mismatch");
    std::vector<std::uint64_t> w(nl.wire_count, 0);
    for (std::size_t p = 0; p < nl.inputs.size(); ++p) {
        require(input_words[p].size() == nl.inputs[p].wires.size(), ErrorCode::kInvalidArgument, "input port width mismatch");
        for (std::size_t i = 0; i < input_words[p].size(); ++i) w[nl.inputs[p].wires[i]] = input_words[p][i];
    }
    for (const auto& cell : nl.cells) {
        const auto& in = cell.inputs;
        const auto& out = cell.outputs;
        switch (cell.kind) {
            case CellKind::kTie0: w[out[0]] = 0; break;
            case CellKind::kAnd: w[out[0]] = w[in[0]] & w[in[1]]; break;
            case CellKind::kXor: w[out[0]] = w[in[0]] ^ w[in[1]]; break;
            case CellKind::kHalfAdder:
                w[out[0]] = w[in[0]] ^ w[in[1]];
                w[out[1]] = w[in[0]] & w[in[1]];
                break;
            case CellKind::kFullAdder: {
                const auto x = w[in[0]], y = w[in[1]], z = w[in[2]];
                w[out[0]] = x ^ y ^ z;
                w[out[1]] = (x & y) | (x & z) | (y & z);
                break;
            }
            case CellKind::kPrefixBlack:
                w[out[0]] = w[in[0]] | (w[in[1]] & w[in[2]]);
                w[out[1]] = w[in[1]] & w[in[3]];
                break;
            case CellKind::kPrefixGray: w[out[0]] = w[in[0]] | (w[in[1]] & w[in[2]]); break;
        }
    }
    std::vector<std::vector<std::uint64_t>> result;
    for (const auto& p : nl.outputs) {
        std::vector<std::uint64_t> bits;
        for (int wire : p.wires) bits.push_back(w[wire]);
        result.push_back(std::move(bits));
    }
    return result;
}

std::string verify_to_json(const VerifyResult& r) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["pass"] = r.pass;
    j["cases"] = r.cases;
    if (!r.pass) j["counterexample"] = {{"a", r.a}, {"b", r.b}, {"got", r.got}, {"expected", r.expected}};
    return j.dump();
}

namespace {

// Runs every combination of the listed input ports (port widths summed must
// stay below 22 bits) and compares the single output port against `expect`.
template <typename Expect>
VerifyResult exhaustive(const Netlist& nl, const std::vector<int>& widths, const Port& out, Expect expect) {
    const int total_bits = std::accumulate(widths.begin(), widths.end(), 0);
    require(total_bits <= 22, ErrorCode::kInvalidArgument, "exhaustive verification limited to 22 input bits");
    const std::uint64_t cases = 1ULL << total_bits;
    VerifyResult r;
    std::vector<std::vector<std::uint64_t>> words(widths.size());
    for (std::size_t p = 0; p < widths.size(); ++p) words[p].assign(widths[p], 0);
    std::size_t out_index = 0;
    while (nl.outputs[out_index].name != out.name) ++out_index;
    for (std::uint64_t base = 0; base < cases; base += 64) {
        const int lanes = static_cast<int>(std::min<std::uint64_t>(64, cases - base));
        for (auto& port : words) std::fill(port.begin(), port.end(), 0);
        for (int lane = 0; lane < lanes; ++lane) {
            std::uint64_t v = base + lane;
            for (std::size_t p = widths.size(); p-- > 0;) {
                for (int bit = 0; bit < widths[p]; ++bit)
                    if ((v >> bit) & 1) words[p][bit] |= 1ULL << lane;
                v >>= widths[p];
            }
        }
        const auto result = simulate(nl, words)[out_index];
        for (int lane = 0; lane < lanes; ++lane) {
            std::uint64_t got = 0;
            for (std::size_t bit = 0; bit < result.size(); ++bit) got |= ((result[bit] >> lane) & 1) << bit;
            std::vector<std::uint64_t> operands(widths.size());
            std::uint64_t v = base + lane;
            for (std::size_t p = widths.size(); p-- > 0;) {
                operands[p] = v & ((1ULL << widths[p]) - 1);
                v >>= widths[p];
            }
            const std::uint64_t expected = expect(operands);
            if (got != expected && r.pass) {
                r.pass = false;
                r.a = operands[0];
                r.b = operands.size() > 1 ? operands[1] : 0;
                r.got = got;
                r.expected = expected;
            }
        }
    }
    r.cases = cases;
    return r;
}

}  // namespace

VerifyResult verify_exhaustive(const Netlist& nl, int n) {
    require(n >= 1 && n <= 10, ErrorCode::kInvalidArgument, "exhaustive multiplier verification supports 1 <= n <= 10");
    const auto& a = nl.input("a");
    const auto& b = nl.input("b");
    const auto& p = nl.output("p");
    require(nl.inputs.size() == 2 && static_cast<int>(a.wires.size()) == n && static_cast<int>(b.wires.size()) == n &&
                static_cast<int>(p.wires.size()) == 2 * n && nl.inputs[0].name == "a",
            ErrorCode::kInvalidArgument, "netlist ports do not describe an n-bit multiplier");
    return exhaustive(nl, {n, n}, p, [](const std::vector<std::uint64_t>& ops) { return ops[0] * ops[1]; });
}

VerifyResult verify_adder_exhaustive(const Netlist& nl, int n) {
    const auto& s = nl.output("s");
    require(static_cast<int>(s.wires.size()) == n + 1, ErrorCode::kInvalidArgument, "adder output must have n + 1 bits");
    std::vector<int> widths{n, n};
    if (nl.inputs.size() == 3) widths.push_back(1);
    return exhaustive(nl, widths, s, [](const std::vector<std::uint64_t>& ops) {
        std::uint64_t sum = 0;
        for (auto v : ops) sum += v;
        return sum;
    });
}

QoRReference compute_reference(int n, const TimingModel& tm) {
    const Netlist nl = assemble_multiplier(wallace_tree(n), std::nullopt, tm);
    return {n, critical_path(nl, tm), total_area(nl, tm)};
}

QoRLabel evaluate_qor(const Netlist& multiplier, const TimingModel& tm, double w,
                      const std::optional<QoRReference>& reference) {
    if (!reference || reference->delay <= 0 || reference->area <= 0)
        fail(ErrorCode::kMustComputeReference, "QoR evaluation needs the Wallace reference for this bit-width");
    require(w >= 0.0 && w <= 1.0, ErrorCode::kInvalidArgument, "trade-off weight must lie in [0, 1]");
    QoRLabel q;
    q.raw_delay = critical_path(multiplier, tm);
    q.raw_area = total_area(multiplier, tm);
    // Both scenarios share the timing model, so their metrics coincide.
    constexpr int kScenarios = 2;
    double delay_sum = 0;
    double area_sum = 0;
    for (int i = 0; i < kScenarios; ++i) {
        q.delay[i] = q.raw_delay / reference->delay;
        q.area[i] = q.raw_area / reference->area;
        delay_sum += q.delay[i];
        area_sum += q.area[i];
    }
    q.y = (w * delay_sum + (1.0 - w) * area_sum) / kScenarios;
    return q;
}

QoRLabel evaluate_design(const CompressorTree& t, const std::optional<PrefixBitmap>& cpa, const TimingModel& tm,
                         double w, const std::optional<QoRReference>& reference) {
    return evaluate_qor(assemble_multiplier(t, cpa, tm), tm, w, reference);
}

std::string qor_to_json(const QoRLabel& q) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["delay"] = {q.delay[0], q.delay[1]};
    j["area"] = {q.area[0], q.area[1]};
    j["raw_delay"] = q.raw_delay;
    j["raw_area"] = q.raw_area;
    j["y"] = q.y;
    return j.dump();
}

}  // namespace circdiff
