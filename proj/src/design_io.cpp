// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "circdiff/circuit.hpp"

namespace circdiff {

using nlohmann::json;

std::string design_to_json(const Design& d) {
    json j;
    j["format_version"] = kFormatVersion;
    if (const auto* t = std::get_if<CompressorTree>(&d)) {
        j["kind"] = "ct";
        j["n"] = t->bit_width();
        j["shape"] = {kCompressorKinds, t->columns(), t->stages()};
        j["counts"] = t->counts();
    } else {
        const auto& p = std::get<PrefixBitmap>(d);
        j["kind"] = "prefix";
        j["n"] = p.width();
        j["shape"] = {p.width(), p.width()};
        std::vector<int> bits(p.bits().begin(), p.bits().end());
        j["bits"] = bits;
    }
    return j.dump();
}

Design design_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCode::kParse, std::string("design json: ") + e.what());
    }
    try {
        const int version = j.at("format_version").get<int>();
        require(version == kFormatVersion, ErrorCode::kParse, "unsupported design format_version " + std::to_string(version));
        const auto kind = j.at("kind").get<std::string>();
        const int n = j.at("n").get<int>();
        const auto shape = j.at("shape").get<std::vector<int>>();
        if (kind == "ct") {
            require(shape.size() == 3 && shape[0] == kCompressorKinds && shape[1] == 2 * n && shape[2] >= 0,
                    ErrorCode::kParse, "ct shape does not match n");
            CompressorTree t(n, shape[2]);
            const auto counts = j.at("counts").get<std::vector<int>>();
            require(counts.size() == t.counts().size(), ErrorCode::kParse, "ct counts length does not match shape");
            for (int k = 0; k < kCompressorKinds; ++k)
                for (int c = 0; c < t.columns(); ++c)
                    for (int s = 0; s < t.stages(); ++s) {
                        const int v = counts[(static_cast<std::size_t>(k) * t.columns() + c) * t.stages() + s];
                        require(v >= 0, ErrorCode::kParse, "negative compressor count");
                        t.at(k, c, s) = v;
                    }
            return t;
        }
        if (kind == "prefix") {
            require(shape.size() == 2 && shape[0] == n && shape[1] == n, ErrorCode::kParse, "prefix shape does not match n");
            PrefixBitmap p(n);
            const auto bits = j.at("bits").get<std::vector<int>>();
            require(bits.size() == static_cast<std::size_t>(n) * n, ErrorCode::kParse, "prefix bits length does not match shape");
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < n; ++k) {
                    const int b = bits[static_cast<std::size_t>(i) * n + k];
                    require(b == 0 || b == 1, ErrorCode::kParse, "prefix bits must be 0 or 1");
                    require(b == 0 || k <= i, ErrorCode::kParse, "prefix bitmap upper triangle must be zero");
                    p.set(i, k, b == 1);
                }
            return p;
        }
        fail(ErrorCode::kParse, "unknown design kind '" + kind + "'");
    } catch (const json::exception& e) {
        fail(ErrorCode::kParse, std::string("design json: ") + e.what());
    }
}

Design load_design(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::kIo, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return design_from_json(ss.str());
}

void save_design(const std::string& path, const Design& d) {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::kIo, "cannot write " + path);
    out << design_to_json(d) << '\n';
}

}  // namespace circdiff
