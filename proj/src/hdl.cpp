// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

// Structural Verilog writer and a reader for the same subset.

#include <map>
#include <regex>
#include <sstream>

#include "circdiff/netlist.hpp"

namespace circdiff {

namespace {

struct PinNames {
    const char* module;
    std::vector<const char*> in;
    std::vector<const char*> out;
};

const PinNames& pins(CellKind kind) {
    static const PinNames tie{"cd_tie0", {}, {"z"}};
    static const PinNames ha{"cd_ha", {"a", "b"}, {"s", "co"}};
    static const PinNames fa{"cd_fa", {"a", "b", "ci"}, {"s", "co"}};
    static const PinNames black{"cd_black", {"gh", "ph", "gl", "pl"}, {"g", "p"}};
    static const PinNames gray{"cd_gray", {"gh", "ph", "gl"}, {"g"}};
    static const PinNames gate{"", {}, {}};
    switch (kind) {
        case CellKind::kTie0: return tie;
        case CellKind::kHalfAdder: return ha;
        case CellKind::kFullAdder: return fa;
        case CellKind::kPrefixBlack: return black;
        case CellKind::kPrefixGray: return gray;
        default: return gate;
    }
}

constexpr const char* kLeafModules = R"(
module cd_tie0 (output z);
  assign z = 1'b0;
endmodule

module cd_ha (input a, input b, output s, output co);
  assign s = a ^ b;
  assign co = a & b;
endmodule

module cd_fa (input a, input b, input ci, output s, output co);
  assign s = a ^ b ^ ci;
  assign co = (a & b) | (a & ci) | (b & ci);
endmodule

module cd_black (input gh, input ph, input gl, input pl, output g, output p);
  assign g = gh | (ph & gl);
  assign p = ph & pl;
endmodule

module cd_gray (input gh, input ph, input gl, output g);
  assign g = gh | (ph & gl);
endmodule
)";

std::string wire(int id) { return "w" + std::to_string(id); }

}  // namespace

std::string emit_hdl(const Netlist& nl) {
    std::ostringstream os;
    os << "// circdiff structural netlist\n";
    os << "module " << nl.name << " (";
    bool first = true;
    for (const auto* ports : {&nl.inputs, &nl.outputs})
        for (const auto& p : *ports) {
            os << (first ? "" : ", ") << p.name;
            first = false;
        }
    os << ");\n";
    for (const auto& p : nl.inputs) os << "  input [" << p.wires.size() - 1 << ":0] " << p.name << ";\n";
    for (const auto& p : nl.outputs) os << "  output [" << p.wires.size() - 1 << ":0] " << p.name << ";\n";
    for (int w = 0; w < nl.wire_count; ++w) os << "  wire " << wire(w) << ";\n";
    for (const auto& p : nl.inputs)
        for (std::size_t i = 0; i < p.wires.size(); ++i)
            os << "  assign " << wire(p.wires[i]) << " = " << p.name << "[" << i << "];\n";
    for (const auto& cell : nl.cells) {
        if (cell.kind == CellKind::kAnd || cell.kind == CellKind::kXor) {
            os << "  " << to_string(cell.kind) << " " << cell.name << " (" << wire(cell.outputs[0]) << ", "
               << wire(cell.inputs[0]) << ", " << wire(cell.inputs[1]) << ");\n";
            continue;
        }
        const auto& names = pins(cell.kind);
        os << "  " << names.module << " " << cell.name << " (";
        bool first_pin = true;
        for (std::size_t i = 0; i < cell.inputs.size(); ++i) {
            os << (first_pin ? "" : ", ") << "." << names.in[i] << "(" << wire(cell.inputs[i]) << ")";
            first_pin = false;
        }
        for (std::size_t i = 0; i < cell.outputs.size(); ++i) {
            os << (first_pin ? "" : ", ") << "." << names.out[i] << "(" << wire(cell.outputs[i]) << ")";
            first_pin = false;
        }
        os << ");\n";
    }
    for (const auto& p : nl.outputs)
        for (std::size_t i = 0; i < p.wires.size(); ++i)
            os << "  assign " << p.name << "[" << i << "] = " << wire(p.wires[i]) << ";\n";
    os << "endmodule\n" << kLeafModules;
    return os.str();
}

Netlist parse_hdl(const std::string& text) {
    static const std::regex module_re(R"(^\s*module\s+(\w+)\s*\()");
    static const std::regex port_re(R"(^\s*(input|output)\s*\[(\d+):0\]\s*(\w+)\s*;)");
    static const std::regex wire_re(R"(^\s*wire\s+w(\d+)\s*;)");
    static const std::regex assign_in_re(R"(^\s*assign\s+w(\d+)\s*=\s*(\w+)\[(\d+)\]\s*;)");
    static const std::regex assign_out_re(R"(^\s*assign\s+(\w+)\[(\d+)\]\s*=\s*w(\d+)\s*;)");
    static const std::regex gate_re(R"(^\s*(and|xor)\s+(\w+)\s*\(\s*w(\d+)\s*,\s*w(\d+)\s*,\s*w(\d+)\s*\)\s*;)");
    static const std::regex inst_re(R"(^\s*(cd_\w+)\s+(\w+)\s*\((.*)\)\s*;)");
    static const std::regex pin_re(R"(\.(\w+)\(\s*w(\d+)\s*\))");

    Netlist nl;
    std::istringstream in(text);
    std::string line;
    bool in_module = false;
    int line_no = 0;
    auto port_index = [](std::vector<Port>& ports, const std::string& name) -> Port& {
        for (auto& p : ports)
            if (p.name == name) return p;
        fail(ErrorCode::kParse, "unknown port '" + name + "'");
    };
    while (std::getline(in, line)) {
        ++line_no;
        std::smatch m;
        const auto where = "hdl line " + std::to_string(line_no) + ": ";
        if (!in_module) {
            if (std::regex_search(line, m, module_re)) {
                nl.name = m[1];
                in_module = true;
            }
            continue;
        }
        if (line.find("endmodule") != std::string::npos) break;
        if (std::regex_search(line, m, port_re)) {
            Port p{m[3], std::vector<int>(std::stoi(m[2]) + 1, -1)};
            (m[1] == "input" ? nl.inputs : nl.outputs).push_back(std::move(p));
        } else if (std::regex_search(line, m, wire_re)) {
            nl.wire_count = std::max(nl.wire_count, std::stoi(m[1]) + 1);
        } else if (std::regex_search(line, m, assign_in_re)) {
            auto& p = port_index(nl.inputs, m[2]);
            const auto bit = static_cast<std::size_t>(std::stoi(m[3]));
            require(bit < p.wires.size(), ErrorCode::kParse, where + "port bit out of range");
            p.wires[bit] = std::stoi(m[1]);
        } else if (std::regex_search(line, m, assign_out_re)) {
            auto& p = port_index(nl.outputs, m[1]);
            const auto bit = static_cast<std::size_t>(std::stoi(m[2]));
            require(bit < p.wires.size(), ErrorCode::kParse, where + "port bit out of range");
            p.wires[bit] = std::stoi(m[3]);
        } else if (std::regex_search(line, m, gate_re)) {
            const auto kind = m[1] == "and" ? CellKind::kAnd : CellKind::kXor;
            nl.cells.push_back({kind, {std::stoi(m[4]), std::stoi(m[5])}, {std::stoi(m[3])}, m[2]});
        } else if (std::regex_search(line, m, inst_re)) {
            const std::string module = m[1];
            std::optional<CellKind> kind;
            for (auto k : {CellKind::kTie0, CellKind::kHalfAdder, CellKind::kFullAdder, CellKind::kPrefixBlack,
                           CellKind::kPrefixGray})
                if (module == pins(k).module) kind = k;
            if (!kind) fail(ErrorCode::kParse, where + "unknown cell module '" + module + "'");
            const auto& names = pins(*kind);
            std::map<std::string, int> conn;
            const std::string body = m[3];
            for (auto it = std::sregex_iterator(body.begin(), body.end(), pin_re); it != std::sregex_iterator(); ++it)
                conn[(*it)[1]] = std::stoi((*it)[2]);
            Cell cell{*kind, {}, {}, m[2]};
            for (const char* pin : names.in) {
                require(conn.contains(pin), ErrorCode::kParse, where + "missing pin ." + pin);
                cell.inputs.push_back(conn[pin]);
            }
            for (const char* pin : names.out) {
                require(conn.contains(pin), ErrorCode::kParse, where + "missing pin ." + pin);
                cell.outputs.push_back(conn[pin]);
            }
            nl.cells.push_back(std::move(cell));
        } else if (line.find_first_not_of(" \t\r") != std::string::npos && line.find("//") == std::string::npos) {
            fail(ErrorCode::kParse, where + "unrecognized statement");
        }
    }
    require(in_module, ErrorCode::kParse, "no module found");
    for (const auto* ports : {&nl.inputs, &nl.outputs})
        for (const auto& p : *ports)
            for (int w : p.wires) require(w >= 0, ErrorCode::kParse, "port " + p.name + " has unbound bits");
    check_netlist(nl);
    return nl;
}

}  // namespace circdiff
