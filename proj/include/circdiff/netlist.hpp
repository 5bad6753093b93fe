// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "circdiff/circuit.hpp"

namespace circdiff {

enum class CellKind { kTie0, kAnd, kXor, kHalfAdder, kFullAdder, kPrefixBlack, kPrefixGray };

const char* to_string(CellKind kind);

// Pin order per kind:
//   AND, XOR     in (x, y)                    out (z)
//   HA           in (a, b)                    out (sum, carry)
//   FA           in (a, b, cin)               out (sum, carry)
//   black        in (g_hi, p_hi, g_lo, p_lo)  out (g, p)
//   gray         in (g_hi, p_hi, g_lo)        out (g)
//   tie0         in ()                        out (z)
struct Cell {
    CellKind kind;
    std::vector<int> inputs;
    std::vector<int> outputs;
    std::string name;
};

struct Port {
    std::string name;
    std::vector<int> wires;  // bit 0 first
};

/// Cells are stored in topological order; primary-input wires have no
/// driving cell.
struct Netlist {
    std::string name = "top";
    int wire_count = 0;
    std::vector<Port> inputs;
    std::vector<Port> outputs;
    std::vector<Cell> cells;

    int new_wire() { return wire_count++; }
    int add_input(const std::string& port, int bits);
    const Port& input(const std::string& port) const;
    const Port& output(const std::string& port) const;
    int count(CellKind kind) const;
};

/// Throws kIllegalDesign on multiple drivers, undriven inputs, or cells out
/// of topological order.
void check_netlist(const Netlist& nl);

/// Unit-gate delay and area table. Delays are per input-pin class to output.
struct TimingModel {
    double and_delay = 1, and_area = 1;
    double xor_delay = 2, xor_area = 2;
    double ha_sum_delay = 2, ha_carry_delay = 1, ha_area = 3;
    double fa_ab_sum_delay = 4, fa_ab_carry_delay = 4;
    double fa_cin_sum_delay = 2, fa_cin_carry_delay = 2, fa_area = 7;
    double prefix_delay = 2, prefix_area = 3;

    /// Delay from input pin `in` to output pin `out` of a cell of `kind`.
    double pin_delay(CellKind kind, int in, int out) const;
    double area(CellKind kind) const;
    void validate() const;
};

std::string timing_to_json(const TimingModel& tm);
TimingModel timing_from_json(const std::string& text);

/// Arrival time per wire; primary inputs arrive at `input_arrival`.
std::vector<double> arrival_times(const Netlist& nl, const TimingModel& tm);
double critical_path(const Netlist& nl, const TimingModel& tm);
double total_area(const Netlist& nl, const TimingModel& tm);

struct CtNetlist {
    Netlist netlist;
    /// Final-stage bits per column (at most two), as wire ids.
    std::vector<std::vector<int>> rows;
    /// Bit count per column after each stage, observed during lowering.
    std::vector<std::vector<int>> stage_counts;
};

/// AND-array plus compressor tree. Bits entering each compressor are chosen
/// by ascending arrival time: full adders take the earliest bits (the latest
/// of each triple goes to carry-in), half adders the next ones; ties keep
/// column order.
CtNetlist build_ct_netlist(const CompressorTree& t, const TimingModel& tm);

/// Standalone adder: ports a[n], b[n], optional cin, output s[n+1] (s[n] is
/// the carry out).
Netlist build_prefix_netlist(const PrefixBitmap& p, bool with_carry_in = true);

/// Appends a prefix adder over the given operand wires and returns the sum
/// wires plus the carry out (size n + 1). `cin` may be -1.
std::vector<int> append_prefix_adder(Netlist& nl, const PrefixBitmap& p, const std::vector<int>& a,
                                     const std::vector<int>& b, int cin);

/// Ports a[n], b[n], p[2n]. Without a CPA bitmap the serial 2n-bit adder is
/// used.
Netlist assemble_multiplier(const CompressorTree& t, const std::optional<PrefixBitmap>& cpa, const TimingModel& tm);

/// Bit-parallel simulation of 64 vectors. `input_words[port][bit]` holds one
/// bit of each vector; returns the same layout for the outputs.
std::vector<std::vector<std::uint64_t>> simulate(const Netlist& nl,
                                                 const std::vector<std::vector<std::uint64_t>>& input_words);

struct VerifyResult {
    bool pass = true;
    std::uint64_t cases = 0;
    std::uint64_t a = 0, b = 0, got = 0, expected = 0;  // first counterexample
};

std::string verify_to_json(const VerifyResult& r);

/// Checks p == a * b over every operand pair. Requires n <= 10.
VerifyResult verify_exhaustive(const Netlist& nl, int n);

/// Checks s == a + b + cin over every operand triple of a standalone adder.
VerifyResult verify_adder_exhaustive(const Netlist& nl, int n);

std::string emit_hdl(const Netlist& nl);
Netlist parse_hdl(const std::string& text);

struct QoRReference {
    int n = 0;
    double delay = 0;
    double area = 0;
};

struct QoRLabel {
    double delay[2] = {0, 0};  // timing-driven, area-driven; normalized
    double area[2] = {0, 0};
    double raw_delay = 0;
    double raw_area = 0;
    double y = 0;
};

inline constexpr double kDefaultTradeoff = 0.66;

/// Wallace tree with the serial CPA under `tm`.
QoRReference compute_reference(int n, const TimingModel& tm);

QoRLabel evaluate_qor(const Netlist& multiplier, const TimingModel& tm, double w,
                      const std::optional<QoRReference>& reference);
QoRLabel evaluate_design(const CompressorTree& t, const std::optional<PrefixBitmap>& cpa, const TimingModel& tm,
                         double w, const std::optional<QoRReference>& reference);

std::string qor_to_json(const QoRLabel& q);

}  // namespace circdiff
