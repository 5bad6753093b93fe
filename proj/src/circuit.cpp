// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "circdiff/circuit.hpp"

#include <algorithm>
#include <sstream>

namespace circdiff {

std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

int wallace_min_stages(int n) {
    require(n >= 2, ErrorCode::kInvalidArgument, "bit-width must be at least 2");
    // u(s): tallest column that s stages of 3:2 counters bring down to two rows.
    int u = 3;
    int s = 1;
    while (u < n) {
        u = 3 * u / 2;
        ++s;
    }
    return s;
}

int ct_stage_count(int n, int extra_stages) {
    require(extra_stages >= 0, ErrorCode::kInvalidArgument, "extra stages must be non-negative");
    return wallace_min_stages(n) + extra_stages;
}

CompressorTree::CompressorTree(int n, int stages) : n_(n), stages_(stages) {
    require(n >= 1 && stages >= 0, ErrorCode::kInvalidArgument, "bad compressor tree shape");
    counts_.assign(static_cast<std::size_t>(kCompressorKinds) * 2 * n * stages, 0);
}

int CompressorTree::total(int kind) const {
    int sum = 0;
    for (int c = 0; c < columns(); ++c)
        for (int s = 0; s < stages_; ++s) sum += at(kind, c, s);
    return sum;
}

std::vector<int> ColumnCounts::stage_column(int stage) const {
    std::vector<int> out(columns_);
    for (int c = 0; c < columns_; ++c) out[c] = at(c, stage);
    return out;
}

int PrefixBitmap::combine_nodes() const {
    int count = 0;
    for (int i = 0; i < n_; ++i)
        for (int j = 0; j < i; ++j) count += get(i, j) ? 1 : 0;
    return count;
}

int PrefixBitmap::popcount() const {
    return static_cast<int>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

const char* to_string(ViolationKind kind) {
    switch (kind) {
        case ViolationKind::kOverCompression: return "over_compression";
        case ViolationKind::kUnderCompression: return "under_compression";
        case ViolationKind::kMissingLowerParent: return "missing_lower_parent";
        case ViolationKind::kMissingInput: return "missing_input";
        case ViolationKind::kMissingOutput: return "missing_output";
    }
    return "unknown";
}

std::vector<int> initial_pp_counts(int n) {
    require(n >= 1, ErrorCode::kInvalidArgument, "bit-width must be positive");
    std::vector<int> v(2 * n, 0);
    for (int c = 0; c + 1 < 2 * n; ++c) v[c] = std::min({c + 1, n, 2 * n - 1 - c});
    return v;
}

ColumnCounts propagate_counts(const CompressorTree& t) {
    const int cols = t.columns();
    ColumnCounts v(cols, t.stages());
    const auto init = initial_pp_counts(t.bit_width());
    for (int c = 0; c < cols; ++c) v.at(c, 0) = init[c];
    for (int s = 0; s < t.stages(); ++s) {
        for (int c = 0; c < cols; ++c) {
            int next = v.at(c, s) - (2 * t.fa(c, s) + t.ha(c, s));
            if (c >= 1) next += t.fa(c - 1, s) + t.ha(c - 1, s);
            v.at(c, s + 1) = next;
        }
    }
    return v;
}

std::vector<DesignRuleViolation> validate_ct(const CompressorTree& t) {
    std::vector<DesignRuleViolation> out;
    const auto v = propagate_counts(t);
    for (int s = 0; s < t.stages(); ++s) {
        for (int c = 0; c < t.columns(); ++c) {
            const int used = 3 * t.fa(c, s) + 2 * t.ha(c, s);
            if (used > v.at(c, s))
                out.push_back({ViolationKind::kOverCompression, c, s, used - std::max(v.at(c, s), 0)});
        }
    }
    for (int c = 0; c < t.columns(); ++c) {
        const int final_count = v.at(c, t.stages());
        if (final_count > 2) out.push_back({ViolationKind::kUnderCompression, c, t.stages(), final_count - 2});
    }
    return out;
}

std::optional<int> smallest_split(const PrefixBitmap& p, int i, int j) {
    for (int k = j + 1; k <= i; ++k)
        if (p.get(i, k) && p.get(k - 1, j)) return k;
    return std::nullopt;
}

std::vector<DesignRuleViolation> validate_prefix(const PrefixBitmap& p) {
    std::vector<DesignRuleViolation> out;
    const int n = p.width();
    for (int i = 0; i < n; ++i) {
        if (!p.get(i, i)) out.push_back({ViolationKind::kMissingInput, i, i, 1});
        for (int j = 0; j < i; ++j) {
            if (p.get(i, j) && !smallest_split(p, i, j))
                out.push_back({ViolationKind::kMissingLowerParent, i, j, 1});
        }
        if (i > 0 && !p.get(i, 0)) out.push_back({ViolationKind::kMissingOutput, i, 0, 1});
    }
    return out;
}

std::pair<PrefixNode, PrefixNode> canonical_parents(const PrefixBitmap& p, int i, int j) {
    require(i > j && j >= 0 && i < p.width(), ErrorCode::kInvalidArgument, "node is not a combine node");
    const auto k = smallest_split(p, i, j);
    if (!k) fail(ErrorCode::kMissingParent, "node (" + std::to_string(i) + "," + std::to_string(j) + ") has no parents");
    return {PrefixNode{i, *k}, PrefixNode{*k - 1, j}};
}

CompressorTree wallace_tree(int n, int extra_stages) {
    CompressorTree t(n, ct_stage_count(n, extra_stages));
    std::vector<int> v = initial_pp_counts(n);
    for (int s = 0; s < t.stages(); ++s) {
        if (*std::max_element(v.begin(), v.end()) <= 2) break;
        std::vector<int> next(v.size(), 0);
        for (int c = 0; c < t.columns(); ++c) {
            const int fa = v[c] / 3;
            const int ha = (v[c] % 3 == 2) ? 1 : 0;
            t.at(kFullAdder, c, s) = fa;
            t.at(kHalfAdder, c, s) = ha;
            next[c] += v[c] - 2 * fa - ha;
            if (c + 1 < t.columns()) next[c + 1] += fa + ha;
        }
        v = std::move(next);
    }
    return t;
}

CompressorTree dadda_tree(int n, int extra_stages) {
    const int min_stages = wallace_min_stages(n);
    CompressorTree t(n, min_stages + extra_stages);
    std::vector<int> targets{2};
    while (static_cast<int>(targets.size()) < min_stages) targets.push_back(3 * targets.back() / 2);
    std::vector<int> v = initial_pp_counts(n);
    for (int s = 0; s < min_stages; ++s) {
        const int target = targets[min_stages - 1 - s];
        std::vector<int> next(v.size(), 0);
        int carry_in = 0;
        for (int c = 0; c < t.columns(); ++c) {
            int fa = 0;
            int ha = 0;
            while (v[c] - 2 * fa - ha + carry_in > target) {
                if (v[c] - 2 * fa - ha + carry_in == target + 1)
                    ++ha;
                else
                    ++fa;
            }
            t.at(kFullAdder, c, s) = fa;
            t.at(kHalfAdder, c, s) = ha;
            next[c] = v[c] - 2 * fa - ha + carry_in;
            carry_in = fa + ha;
        }
        v = std::move(next);
    }
    return t;
}

PrefixBitmap serial_prefix(int n) {
    require(n >= 1, ErrorCode::kInvalidArgument, "adder width must be positive");
    PrefixBitmap p(n);
    for (int i = 0; i < n; ++i) {
        p.set(i, i);
        p.set(i, 0);
    }
    return p;
}

PrefixBitmap sklansky_prefix(int n) {
    PrefixBitmap p = serial_prefix(n);
    for (int level = 0; (1 << level) < n; ++level) {
        for (int i = 0; i < n; ++i) {
            if ((i >> level) & 1) p.set(i, (i >> (level + 1)) << (level + 1));
        }
    }
    return p;
}

PrefixBitmap kogge_stone_prefix(int n) {
    PrefixBitmap p = serial_prefix(n);
    for (int span = 2; span / 2 < n; span *= 2) {
        for (int i = 1; i < n; ++i) p.set(i, std::max(0, i - span + 1));
    }
    return p;
}

PrefixBitmap brent_kung_prefix(int n) {
    PrefixBitmap p = serial_prefix(n);
    // Up-sweep: node (i, i - 2^l + 1) whenever i + 1 is a multiple of 2^l.
    for (int span = 2; span <= n; span *= 2) {
        for (int i = span - 1; i < n; i += span) p.set(i, i - span + 1);
    }
    // Down-sweep fills (i, 0); the required intermediate nodes come from the
    // up-sweep, and (i, 0) itself is already set by serial_prefix.
    return p;
}

int ct_digits(int n) {
    require(n >= 1, ErrorCode::kInvalidArgument, "bit-width must be positive");
    int bits = 0;
    while ((1 << bits) < n) ++bits;
    return bits + 1;
}

std::vector<int> ct_tensor_shape(int n, int stages) { return {kCompressorKinds * ct_digits(n), 2 * n, stages}; }

Tensor to_tensor(const CompressorTree& t) {
    const int digits = ct_digits(t.bit_width());
    Tensor x(ct_tensor_shape(t.bit_width(), t.stages()));
    for (int k = 0; k < kCompressorKinds; ++k) {
        for (int c = 0; c < t.columns(); ++c) {
            for (int s = 0; s < t.stages(); ++s) {
                const int count = t.at(k, c, s);
                if (count < 0 || count >= (1 << digits))
                    fail(ErrorCode::kEncodingOverflow, "count " + std::to_string(count) + " does not fit in " +
                                                           std::to_string(digits) + " binary digits");
                for (int b = 0; b < digits; ++b) {
                    const int bit = (count >> (digits - 1 - b)) & 1;
                    x.at(k * digits + b, c, s) = bit ? 1.0 : -1.0;
                }
            }
        }
    }
    return x;
}

Tensor to_tensor(const PrefixBitmap& p) {
    const int n = p.width();
    Tensor x({1, n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) x.at(0, i, j) = p.get(i, j) ? 1.0 : -1.0;
    return x;
}

Tensor to_tensor(const Design& d) {
    return std::visit([](const auto& v) { return to_tensor(v); }, d);
}

CompressorTree ct_from_tensor(const Tensor& x, int n) {
    const int digits = ct_digits(n);
    require(x.rank() == 3 && x.dim(0) == kCompressorKinds * digits && x.dim(1) == 2 * n, ErrorCode::kInvalidArgument,
            "tensor shape " + shape_string(x.shape()) + " is not a compressor tree of width " + std::to_string(n));
    CompressorTree t(n, x.dim(2));
    for (int k = 0; k < kCompressorKinds; ++k) {
        for (int c = 0; c < t.columns(); ++c) {
            for (int s = 0; s < t.stages(); ++s) {
                int count = 0;
                for (int b = 0; b < digits; ++b) count = (count << 1) | (x.at(k * digits + b, c, s) >= 0.0 ? 1 : 0);
                t.at(k, c, s) = count;
            }
        }
    }
    return t;
}

PrefixBitmap prefix_from_tensor(const Tensor& x) {
    require(x.rank() == 3 && x.dim(0) == 1 && x.dim(1) == x.dim(2), ErrorCode::kInvalidArgument,
            "tensor shape " + shape_string(x.shape()) + " is not a prefix bitmap");
    const int n = x.dim(1);
    PrefixBitmap p(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) p.set(i, j, x.at(0, i, j) >= 0.0);
    return p;
}

std::uint64_t design_hash(const Design& d) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ULL;
        }
    };
    if (const auto* t = std::get_if<CompressorTree>(&d)) {
        mix(1);
        mix(t->bit_width());
        mix(t->stages());
        for (int c : t->counts()) mix(static_cast<std::uint64_t>(c));
    } else {
        const auto& p = std::get<PrefixBitmap>(d);
        mix(2);
        mix(p.width());
        for (auto b : p.bits()) mix(b);
    }
    return h;
}

}  // namespace circdiff
