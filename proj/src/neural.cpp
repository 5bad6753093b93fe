// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "circdiff/neural.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Core>
#include <json.hpp>

#include "circdiff/circuit.hpp"
#include "circdiff/parallel.hpp"

namespace circdiff {

// ---------------------------------------------------------------------------
// Schedules

NoiseSchedule make_schedule(int steps, const std::string& kind) {
    require(steps >= 2, ErrorCode::kInvalidArgument, "schedule needs at least two timesteps");
    NoiseSchedule s;
    s.kind = kind;
    s.steps = steps;
    s.alpha.assign(steps + 1, 1.0);
    if (kind == "cosine") {
        constexpr double kOffset = 0.008;
        constexpr double kMaxBeta = 0.999;
        auto f = [&](int t) {
            const double u = (static_cast<double>(t) / steps + kOffset) / (1 + kOffset) * std::numbers::pi / 2;
            return std::cos(u) * std::cos(u);
        };
        for (int t = 1; t <= steps; ++t) {
            const double beta = std::min(1.0 - f(t) / f(t - 1), kMaxBeta);
            s.alpha[t] = s.alpha[t - 1] * (1.0 - beta);
        }
    } else if (kind == "linear") {
        constexpr double kFinal = 1e-3;
        for (int t = 1; t <= steps; ++t) s.alpha[t] = 1.0 - (1.0 - kFinal) * t / steps;
    } else {
        fail(ErrorCode::kInvalidArgument, "unknown schedule '" + kind + "' (expected cosine or linear)");
    }
    return s;
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
    require(x0.same_shape(eps), ErrorCode::kInvalidArgument, "noise shape does not match the data");
    require(t >= 0 && t <= schedule.steps, ErrorCode::kInvalidArgument, "timestep out of range");
    const double a = schedule[t];
    const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sa * x0[i] + sn * eps[i];
    return out;
}

Tensor stack(const std::vector<Tensor>& items) {
    require(!items.empty(), ErrorCode::kInvalidArgument, "cannot stack an empty list");
    std::vector<int> shape{static_cast<int>(items.size())};
    for (int d : items[0].shape()) shape.push_back(d);
    Tensor out(shape);
    const std::size_t each = items[0].size();
    for (std::size_t i = 0; i < items.size(); ++i) {
        require(items[i].same_shape(items[0]), ErrorCode::kInvalidArgument, "stacked tensors differ in shape");
        std::copy(items[i].storage().begin(), items[i].storage().end(), out.data() + i * each);
    }
    return out;
}

Tensor unstack(const Tensor& batch, int index) {
    std::vector<int> shape(batch.shape().begin() + 1, batch.shape().end());
    const std::size_t each = Tensor::count(shape);
    std::vector<double> v(batch.data() + index * each, batch.data() + (index + 1) * each);
    return Tensor(shape, std::move(v));
}

// ---------------------------------------------------------------------------
// Layer primitives. Activations are stored channel-major, [C][B][H][W], so a
// convolution is a single matrix product over im2col columns.

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

struct Act {
    int c = 0, b = 0, h = 0, w = 0;
    std::vector<double> v;

    Act() = default;
    Act(int c_, int b_, int h_, int w_) : c(c_), b(b_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * b_ * h_ * w_) {}
    int plane() const { return b * h * w; }
    MapM mat() { return MapM(v.data(), c, plane()); }
    CMapM mat() const { return CMapM(v.data(), c, plane()); }
};

Act from_batch(const Tensor& x) {
    require(x.rank() == 4, ErrorCode::kInvalidArgument, "network input must be [B, C, H, W]");
    Act a(x.dim(1), x.dim(0), x.dim(2), x.dim(3));
    const std::size_t hw = static_cast<std::size_t>(a.h) * a.w;
    for (int bi = 0; bi < a.b; ++bi)
        for (int ci = 0; ci < a.c; ++ci)
            std::copy_n(x.data() + (static_cast<std::size_t>(bi) * a.c + ci) * hw, hw,
                        a.v.data() + (static_cast<std::size_t>(ci) * a.b + bi) * hw);
    return a;
}

Tensor to_batch(const Act& a) {
    Tensor x({a.b, a.c, a.h, a.w});
    const std::size_t hw = static_cast<std::size_t>(a.h) * a.w;
    for (int bi = 0; bi < a.b; ++bi)
        for (int ci = 0; ci < a.c; ++ci)
            std::copy_n(a.v.data() + (static_cast<std::size_t>(ci) * a.b + bi) * hw, hw,
                        x.data() + (static_cast<std::size_t>(bi) * a.c + ci) * hw);
    return x;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Act silu(const Act& x) {
    Act y = x;
    for (auto& v : y.v) v = v * sigmoid(v);
    return y;
}

// dy scaled by silu'(x).
Act silu_backward(const Act& x, const Act& dy) {
    Act dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i) {
        const double s = sigmoid(x.v[i]);
        dx.v[i] *= s * (1.0 + x.v[i] * (1.0 - s));
    }
    return dx;
}

void add_into(Act& a, const Act& b) {
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

// Plain sequential sum: vectorized reductions may reorder additions based on
// pointer alignment, which would make results depend on the allocator.
double row_sum(const double* p, int n) {
    double s = 0;
    for (int i = 0; i < n; ++i) s += p[i];
    return s;
}

struct Conv {
    int cin = 0, cout = 0;
    std::size_t w = 0, b = 0;  // w: [cout, cin * 9]
};

struct Linear {
    int in = 0, out = 0;
    std::size_t w = 0, b = 0;  // w: [out, in]
};

void im2col(const Act& x, std::vector<double>& cols) {
    const int plane = x.plane();
    cols.assign(static_cast<std::size_t>(x.c) * 9 * plane, 0.0);
    for (int ci = 0; ci < x.c; ++ci)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                double* row = cols.data() + static_cast<std::size_t>(ci * 9 + ky * 3 + kx) * plane;
                for (int bi = 0; bi < x.b; ++bi) {
                    const double* src = x.v.data() + (static_cast<std::size_t>(ci) * x.b + bi) * x.h * x.w;
                    double* dst = row + static_cast<std::size_t>(bi) * x.h * x.w;
                    for (int yy = 0; yy < x.h; ++yy) {
                        const int sy = yy + ky - 1;
                        if (sy < 0 || sy >= x.h) continue;
                        for (int xx = 0; xx < x.w; ++xx) {
                            const int sx = xx + kx - 1;
                            if (sx >= 0 && sx < x.w) dst[yy * x.w + xx] = src[sy * x.w + sx];
                        }
                    }
                }
            }
}

void col2im(const std::vector<double>& cols, Act& dx) {
    const int plane = dx.plane();
    for (int ci = 0; ci < dx.c; ++ci)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const double* row = cols.data() + static_cast<std::size_t>(ci * 9 + ky * 3 + kx) * plane;
                for (int bi = 0; bi < dx.b; ++bi) {
                    double* dst = dx.v.data() + (static_cast<std::size_t>(ci) * dx.b + bi) * dx.h * dx.w;
                    const double* src = row + static_cast<std::size_t>(bi) * dx.h * dx.w;
                    for (int yy = 0; yy < dx.h; ++yy) {
                        const int sy = yy + ky - 1;
                        if (sy < 0 || sy >= dx.h) continue;
                        for (int xx = 0; xx < dx.w; ++xx) {
                            const int sx = xx + kx - 1;
                            if (sx >= 0 && sx < dx.w) dst[sy * dx.w + sx] += src[yy * dx.w + xx];
                        }
                    }
                }
            }
}

Act conv_forward(const Conv& L, const double* P, const Act& x, std::vector<double>& cols) {
    im2col(x, cols);
    Act y(L.cout, x.b, x.h, x.w);
    const int plane = x.plane();
    auto out = y.mat();
    out.noalias() = CMapM(P + L.w, L.cout, L.cin * 9) * CMapM(cols.data(), L.cin * 9, plane);
    for (int co = 0; co < L.cout; ++co) out.row(co).array() += P[L.b + co];
    return y;
}

// Returns dL/dx when `want_dx`; accumulates parameter gradients into G.
Act conv_backward(const Conv& L, const double* P, const std::vector<double>& cols, const Act& dy, bool want_dx,
                  double* G) {
    const int plane = dy.plane();
    const auto g = dy.mat();
    if (G) {
        MapM(G + L.w, L.cout, L.cin * 9).noalias() += g * CMapM(cols.data(), L.cin * 9, plane).transpose();
        for (int co = 0; co < L.cout; ++co) G[L.b + co] += row_sum(dy.v.data() + static_cast<std::size_t>(co) * plane, plane);
    }
    Act dx;
    if (want_dx) {
        std::vector<double> dcols(static_cast<std::size_t>(L.cin) * 9 * plane);
        MapM(dcols.data(), L.cin * 9, plane).noalias() = CMapM(P + L.w, L.cout, L.cin * 9).transpose() * g;
        dx = Act(L.cin, dy.b, dy.h, dy.w);
        col2im(dcols, dx);
    }
    return dx;
}

RowMat linear_forward(const Linear& L, const double* P, const RowMat& x) {
    RowMat y = CMapM(P + L.w, L.out, L.in) * x;
    for (int o = 0; o < L.out; ++o) y.row(o).array() += P[L.b + o];
    return y;
}

RowMat linear_backward(const Linear& L, const double* P, const RowMat& x, const RowMat& dy, double* G) {
    if (G) {
        MapM(G + L.w, L.out, L.in).noalias() += dy * x.transpose();
        for (int o = 0; o < L.out; ++o) G[L.b + o] += row_sum(dy.data() + static_cast<std::size_t>(o) * dy.cols(), static_cast<int>(dy.cols()));
    }
    return CMapM(P + L.w, L.out, L.in).transpose() * dy;
}

RowMat silu(const RowMat& x) { return x.unaryExpr([](double v) { return v * sigmoid(v); }); }

RowMat silu_backward(const RowMat& x, const RowMat& dy) {
    return dy.binaryExpr(x, [](double g, double v) {
        const double s = sigmoid(v);
        return g * s * (1.0 + v * (1.0 - s));
    });
}

Act pool_h(const Act& x) {
    Act y(x.c, x.b, x.h / 2, x.w);
    for (int cb = 0; cb < x.c * x.b; ++cb)
        for (int i = 0; i < y.h; ++i)
            for (int j = 0; j < x.w; ++j) {
                const double* src = x.v.data() + static_cast<std::size_t>(cb) * x.h * x.w;
                y.v[(static_cast<std::size_t>(cb) * y.h + i) * y.w + j] =
                    0.5 * (src[(2 * i) * x.w + j] + src[(2 * i + 1) * x.w + j]);
            }
    return y;
}

Act pool_h_backward(const Act& dy) {
    Act dx(dy.c, dy.b, dy.h * 2, dy.w);
    for (int cb = 0; cb < dy.c * dy.b; ++cb)
        for (int i = 0; i < dy.h; ++i)
            for (int j = 0; j < dy.w; ++j) {
                const double g = 0.5 * dy.v[(static_cast<std::size_t>(cb) * dy.h + i) * dy.w + j];
                double* dst = dx.v.data() + static_cast<std::size_t>(cb) * dx.h * dx.w;
                dst[(2 * i) * dx.w + j] = g;
                dst[(2 * i + 1) * dx.w + j] = g;
            }
    return dx;
}

Act upsample_h(const Act& x) {
    Act y(x.c, x.b, x.h * 2, x.w);
    for (int cb = 0; cb < x.c * x.b; ++cb)
        for (int i = 0; i < y.h; ++i)
            std::copy_n(x.v.data() + (static_cast<std::size_t>(cb) * x.h + i / 2) * x.w, x.w,
                        y.v.data() + (static_cast<std::size_t>(cb) * y.h + i) * y.w);
    return y;
}

Act upsample_h_backward(const Act& dy) {
    Act dx(dy.c, dy.b, dy.h / 2, dy.w);
    for (int cb = 0; cb < dy.c * dy.b; ++cb)
        for (int i = 0; i < dy.h; ++i)
            for (int j = 0; j < dy.w; ++j)
                dx.v[(static_cast<std::size_t>(cb) * dx.h + i / 2) * dx.w + j] +=
                    dy.v[(static_cast<std::size_t>(cb) * dy.h + i) * dy.w + j];
    return dx;
}

Act concat(const Act& a, const Act& b) {
    Act y(a.c + b.c, a.b, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), y.v.begin());
    std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
    return y;
}

std::pair<Act, Act> split(const Act& y, int first) {
    Act a(first, y.b, y.h, y.w), b(y.c - first, y.b, y.h, y.w);
    std::copy_n(y.v.begin(), a.v.size(), a.v.begin());
    std::copy(y.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()), y.v.end(), b.v.begin());
    return {a, b};
}

// Residual block: y = x + conv2(silu(conv1(silu(x)) + proj(temb))).
struct Res {
    Conv c1, c2;
    Linear proj;
    bool timed = false;
};

struct ResCache {
    Act x, h1;
    std::vector<double> cols1, cols2;
};

Act res_forward(const Res& R, const double* P, const Act& x, const RowMat* temb, ResCache& cache) {
    cache.x = x;
    Act h1 = conv_forward(R.c1, P, silu(x), cache.cols1);
    if (R.timed) {
        const RowMat pr = linear_forward(R.proj, P, *temb);  // [C, B]
        const int hw = h1.h * h1.w;
        for (int c = 0; c < h1.c; ++c)
            for (int b = 0; b < h1.b; ++b) {
                double* dst = h1.v.data() + (static_cast<std::size_t>(c) * h1.b + b) * hw;
                for (int i = 0; i < hw; ++i) dst[i] += pr(c, b);
            }
    }
    cache.h1 = h1;
    Act y = conv_forward(R.c2, P, silu(h1), cache.cols2);
    add_into(y, x);
    return y;
}

Act res_backward(const Res& R, const double* P, const ResCache& cache, const Act& dy, const RowMat* temb,
                 RowMat* dtemb, double* G) {
    Act dh1 = silu_backward(cache.h1, conv_backward(R.c2, P, cache.cols2, dy, true, G));
    if (R.timed) {
        RowMat dpr = RowMat::Zero(dh1.c, dh1.b);
        const int hw = dh1.h * dh1.w;
        for (int c = 0; c < dh1.c; ++c)
            for (int b = 0; b < dh1.b; ++b) {
                const double* src = dh1.v.data() + (static_cast<std::size_t>(c) * dh1.b + b) * hw;
                double s = 0;
                for (int i = 0; i < hw; ++i) s += src[i];
                dpr(c, b) = s;
            }
        *dtemb += linear_backward(R.proj, P, *temb, dpr, G);
    }
    Act dx = silu_backward(cache.x, conv_backward(R.c1, P, cache.cols1, dh1, true, G));
    add_into(dx, dy);
    return dx;
}

RowMat time_features(const std::vector<int>& t, int dim) {
    RowMat e(dim, static_cast<int>(t.size()));
    const int half = dim / 2;
    for (int b = 0; b < static_cast<int>(t.size()); ++b)
        for (int i = 0; i < half; ++i) {
            const double f = std::exp(-std::log(10000.0) * i / half);
            e(i, b) = std::sin(t[b] * f);
            e(half + i, b) = std::cos(t[b] * f);
        }
    return e;
}

void init_normal(std::vector<double>& p, std::size_t off, std::size_t count, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, stddev);
    for (std::size_t i = 0; i < count; ++i) p[off + i] = g(rng);
}

}  // namespace

std::size_t ConvNet::add_block(const std::string& name, std::vector<int> shape) {
    const std::size_t off = params_.size();
    params_.resize(off + Tensor::count(shape), 0.0);
    blocks_.push_back({name, std::move(shape), off});
    return off;
}

// ---------------------------------------------------------------------------
// Denoiser

struct DenoiserNet::Layout {
    Linear t1, t2;
    Conv in, merge, out;
    Res r1, r2, r3;
};

struct DenoiserNet::Pass {
    int batch = 0;
    RowMat e, m1, m2, temb;
    std::vector<double> cols_in, cols_merge, cols_out;
    ResCache c1, c2, c3;
    Act r3;
};

namespace {

Conv make_conv(const std::string& name, int cin, int cout,
               const std::function<std::size_t(const std::string&, std::vector<int>)>& add) {
    Conv c;
    c.cin = cin;
    c.cout = cout;
    c.w = add(name + ".weight", {cout, cin, 3, 3});
    c.b = add(name + ".bias", {cout});
    return c;
}

}  // namespace

DenoiserNet::DenoiserNet(NetConfig cfg, std::uint64_t seed) : ConvNet(cfg) {
    require(cfg.in_channels >= 1 && cfg.width >= 1 && cfg.base_width >= 1, ErrorCode::kInvalidArgument,
            "invalid network configuration");
    require(cfg.height >= 2 && cfg.height % 2 == 0, ErrorCode::kUnsupported,
            "denoiser needs an even tensor height for its pooled level");
    require(cfg.time_dim >= 2 && cfg.time_dim % 2 == 0, ErrorCode::kInvalidArgument, "time embedding must be even");
    auto add = [this](const std::string& n, std::vector<int> s) { return add_block(n, std::move(s)); };
    auto lin = [&](const std::string& name, int in, int out) {
        Linear l{in, out, add(name + ".weight", {out, in}), 0};
        l.b = add(name + ".bias", {out});
        return l;
    };
    const int C = cfg.base_width, D = 2 * cfg.time_dim;
    auto L = std::make_shared<Layout>();
    L->t1 = lin("time.fc1", cfg.time_dim, D);
    L->t2 = lin("time.fc2", D, D);
    L->in = make_conv("in", cfg.in_channels, C, add);
    auto res = [&](const std::string& name) {
        Res r;
        r.c1 = make_conv(name + ".conv1", C, C, add);
        r.c2 = make_conv(name + ".conv2", C, C, add);
        r.proj = lin(name + ".time", D, C);
        r.timed = true;
        return r;
    };
    L->r1 = res("down");
    L->r2 = res("mid");
    L->merge = make_conv("merge", 2 * C, C, add);
    L->r3 = res("up");
    L->out = make_conv("out", C, cfg.in_channels, add);

    std::mt19937_64 rng(seed);
    auto he_conv = [&](const Conv& c) { init_normal(params_, c.w, c.cout * c.cin * 9, std::sqrt(2.0 / (c.cin * 9)), rng); };
    auto he_lin = [&](const Linear& l) { init_normal(params_, l.w, l.out * l.in, std::sqrt(1.0 / l.in), rng); };
    he_lin(L->t1);
    he_lin(L->t2);
    he_conv(L->in);
    for (const Res* r : {&L->r1, &L->r2, &L->r3}) {
        he_conv(r->c1);
        he_lin(r->proj);
        // conv2 starts at zero so every block begins as the identity.
    }
    he_conv(L->merge);
    // The output layer starts at zero: an untrained net predicts no noise.
    layout_ = L;
}

std::shared_ptr<const DenoiserNet::Pass> DenoiserNet::trace(const Tensor& x, const std::vector<int>& t,
                                                            Tensor& out) const {
    const Layout& L = *layout_;
    const double* P = params_.data();
    require(x.rank() == 4 && x.dim(1) == cfg_.in_channels && x.dim(2) == cfg_.height && x.dim(3) == cfg_.width,
            ErrorCode::kInvalidArgument, "denoiser input has shape " + shape_string(x.shape()));
    require(static_cast<int>(t.size()) == x.dim(0), ErrorCode::kInvalidArgument, "one timestep per batch item");
    auto pass = std::make_shared<Pass>();
    pass->batch = x.dim(0);
    pass->e = time_features(t, cfg_.time_dim);
    pass->m1 = linear_forward(L.t1, P, pass->e);
    pass->m2 = linear_forward(L.t2, P, silu(pass->m1));
    pass->temb = silu(pass->m2);

    const Act h0 = conv_forward(L.in, P, from_batch(x), pass->cols_in);
    const Act r1 = res_forward(L.r1, P, h0, &pass->temb, pass->c1);
    const Act r2 = res_forward(L.r2, P, pool_h(r1), &pass->temb, pass->c2);
    const Act m = conv_forward(L.merge, P, concat(upsample_h(r2), r1), pass->cols_merge);
    pass->r3 = res_forward(L.r3, P, m, &pass->temb, pass->c3);
    out = to_batch(conv_forward(L.out, P, silu(pass->r3), pass->cols_out));
    return pass;
}

Tensor DenoiserNet::forward(const Tensor& x, const std::vector<int>& t) const {
    Tensor out;
    trace(x, t, out);
    return out;
}

Tensor DenoiserNet::backward(const Pass& pass, const Tensor& grad_out, std::vector<double>* param_grad) const {
    const Layout& L = *layout_;
    const double* P = params_.data();
    double* G = nullptr;
    if (param_grad) {
        param_grad->resize(params_.size(), 0.0);
        G = param_grad->data();
    }
    RowMat dtemb = RowMat::Zero(pass.temb.rows(), pass.temb.cols());
    const Act dout = from_batch(grad_out);
    const Act dr3 = silu_backward(pass.r3, conv_backward(L.out, P, pass.cols_out, dout, true, G));
    const Act dm = res_backward(L.r3, P, pass.c3, dr3, &pass.temb, &dtemb, G);
    auto [du, dr1_skip] = split(conv_backward(L.merge, P, pass.cols_merge, dm, true, G), cfg_.base_width);
    const Act dp = res_backward(L.r2, P, pass.c2, upsample_h_backward(du), &pass.temb, &dtemb, G);
    Act dr1 = pool_h_backward(dp);
    add_into(dr1, dr1_skip);
    const Act dh0 = res_backward(L.r1, P, pass.c1, dr1, &pass.temb, &dtemb, G);
    if (G) {
        const RowMat dm2 = silu_backward(pass.m2, dtemb);
        const RowMat ds1 = linear_backward(L.t2, P, silu(pass.m1), dm2, G);
        linear_backward(L.t1, P, pass.e, silu_backward(pass.m1, ds1), G);
    }
    return to_batch(conv_backward(L.in, P, pass.cols_in, dh0, true, G));
}

// ---------------------------------------------------------------------------
// Predictor

struct PredictorNet::Layout {
    Conv in;
    Res r[3];
    Linear head;
};

struct PredictorNet::Pass {
    std::vector<double> cols_in;
    ResCache c[3];
    Act r3;
    RowMat pooled;
    int hw = 0;
};

PredictorNet::PredictorNet(NetConfig cfg, std::uint64_t seed) : ConvNet(cfg) {
    require(cfg.in_channels >= 1 && cfg.height >= 1 && cfg.width >= 1 && cfg.base_width >= 1,
            ErrorCode::kInvalidArgument, "invalid network configuration");
    auto add = [this](const std::string& n, std::vector<int> s) { return add_block(n, std::move(s)); };
    const int C = cfg.base_width;
    auto L = std::make_shared<Layout>();
    L->in = make_conv("in", cfg.in_channels, C, add);
    for (int i = 0; i < 3; ++i) {
        L->r[i].c1 = make_conv("block" + std::to_string(i) + ".conv1", C, C, add);
        L->r[i].c2 = make_conv("block" + std::to_string(i) + ".conv2", C, C, add);
    }
    L->head = {C, 1, add("head.weight", {1, C}), 0};
    L->head.b = add("head.bias", {1});

    std::mt19937_64 rng(seed);
    auto he_conv = [&](const Conv& c) { init_normal(params_, c.w, c.cout * c.cin * 9, std::sqrt(2.0 / (c.cin * 9)), rng); };
    he_conv(L->in);
    for (const auto& r : L->r) he_conv(r.c1);
    layout_ = L;
}

std::shared_ptr<const PredictorNet::Pass> PredictorNet::trace(const Tensor& x, std::vector<double>& out) const {
    const Layout& L = *layout_;
    const double* P = params_.data();
    require(x.rank() == 4 && x.dim(1) == cfg_.in_channels && x.dim(2) == cfg_.height && x.dim(3) == cfg_.width,
            ErrorCode::kInvalidArgument, "predictor input has shape " + shape_string(x.shape()));
    auto pass = std::make_shared<Pass>();
    Act h = conv_forward(L.in, P, from_batch(x), pass->cols_in);
    for (int i = 0; i < 3; ++i) h = res_forward(L.r[i], P, h, nullptr, pass->c[i]);
    pass->r3 = h;
    const Act a = silu(h);
    pass->hw = a.h * a.w;
    pass->pooled = RowMat::Zero(a.c, a.b);
    for (int c = 0; c < a.c; ++c)
        for (int b = 0; b < a.b; ++b) {
            const double* src = a.v.data() + (static_cast<std::size_t>(c) * a.b + b) * pass->hw;
            double s = 0;
            for (int i = 0; i < pass->hw; ++i) s += src[i];
            pass->pooled(c, b) = s / pass->hw;
        }
    const RowMat y = linear_forward(L.head, P, pass->pooled);
    out.resize(a.b);
    for (int b = 0; b < a.b; ++b) out[b] = label_mean + label_scale * y(0, b);
    return pass;
}

std::vector<double> PredictorNet::forward(const Tensor& x) const {
    std::vector<double> out;
    trace(x, out);
    return out;
}

Tensor PredictorNet::backward(const Pass& pass, const std::vector<double>& grad_out,
                              std::vector<double>* param_grad) const {
    const Layout& L = *layout_;
    const double* P = params_.data();
    double* G = nullptr;
    if (param_grad) {
        param_grad->resize(params_.size(), 0.0);
        G = param_grad->data();
    }
    const int B = static_cast<int>(grad_out.size());
    RowMat dy(1, B);
    for (int b = 0; b < B; ++b) dy(0, b) = grad_out[b] * label_scale;
    const RowMat dpool = linear_backward(L.head, P, pass.pooled, dy, G);
    Act da(pass.r3.c, pass.r3.b, pass.r3.h, pass.r3.w);
    for (int c = 0; c < da.c; ++c)
        for (int b = 0; b < da.b; ++b) {
            double* dst = da.v.data() + (static_cast<std::size_t>(c) * da.b + b) * pass.hw;
            std::fill_n(dst, pass.hw, dpool(c, b) / pass.hw);
        }
    Act dh = silu_backward(pass.r3, da);
    for (int i = 2; i >= 0; --i) dh = res_backward(L.r[i], P, pass.c[i], dh, nullptr, nullptr, G);
    return to_batch(conv_backward(L.in, P, pass.cols_in, dh, true, G));
}

// ---------------------------------------------------------------------------
// Optimization

Adam::Adam(std::size_t size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad) {
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1 - beta2_) * grad[i] * grad[i];
        params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

namespace {

constexpr int kChunk = 8;
enum Stream : std::uint64_t { kEpochStream = 11, kBatchStream = 12, kSplitStream = 13, kEvalStream = 14 };

void check_config(const TrainConfig& cfg) {
    require(cfg.epochs >= 0 && cfg.batch >= 1 && cfg.lr > 0, ErrorCode::kInvalidArgument, "invalid training config");
}

// Runs fn(chunk_begin, chunk_end, grad) over fixed chunks of [0, size) and
// returns the chunk gradients summed in order.
std::vector<double> chunked_gradient(int size, std::size_t params, int jobs,
                                     const std::function<void(int, int, std::vector<double>&)>& fn) {
    const int chunks = (size + kChunk - 1) / kChunk;
    std::vector<std::vector<double>> grads(chunks, std::vector<double>(params, 0.0));
    parallel_for(chunks, jobs, [&](int c) { fn(c * kChunk, std::min(size, (c + 1) * kChunk), grads[c]); });
    for (int c = 1; c < chunks; ++c)
        for (std::size_t i = 0; i < params; ++i) grads[0][i] += grads[c][i];
    return std::move(grads[0]);
}

}  // namespace

TrainResult train_diffusion(DenoiserNet& net, const std::vector<Tensor>& data, const NoiseSchedule& schedule,
                            const TrainConfig& cfg) {
    check_config(cfg);
    require(!data.empty(), ErrorCode::kInvalidArgument, "training set is empty");
    Adam opt(net.param_count(), cfg.lr);
    TrainResult result;
    const int N = static_cast<int>(data.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order(N);
        std::iota(order.begin(), order.end(), 0);
        auto erng = stream_rng(cfg.seed, kEpochStream, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), erng);
        double total = 0;
        for (int start = 0, batch_index = 0; start < N; start += cfg.batch, ++batch_index) {
            const int B = std::min(cfg.batch, N - start);
            auto brng = stream_rng(cfg.seed, kBatchStream, (static_cast<std::uint64_t>(epoch) << 32) | batch_index);
            std::uniform_int_distribution<int> pick_t(1, schedule.steps);
            std::normal_distribution<double> gauss(0.0, 1.0);
            std::vector<Tensor> xt(B), eps(B);
            std::vector<int> ts(B);
            for (int i = 0; i < B; ++i) {
                const Tensor& x0 = data[order[start + i]];
                ts[i] = pick_t(brng);
                eps[i] = Tensor(x0.shape());
                for (auto& v : eps[i].values()) v = gauss(brng);
                xt[i] = forward_diffuse(x0, ts[i], eps[i], schedule);
            }
            const double elements = static_cast<double>(B) * data[0].size();
            std::vector<double> chunk_loss((B + kChunk - 1) / kChunk, 0.0);
            const auto grad = chunked_gradient(B, net.param_count(), cfg.jobs, [&](int lo, int hi, std::vector<double>& g) {
                const Tensor x = stack({xt.begin() + lo, xt.begin() + hi});
                const Tensor target = stack({eps.begin() + lo, eps.begin() + hi});
                Tensor out;
                const auto pass = net.trace(x, {ts.begin() + lo, ts.begin() + hi}, out);
                Tensor dout(out.shape());
                double loss = 0;
                for (std::size_t i = 0; i < out.size(); ++i) {
                    const double d = out[i] - target[i];
                    loss += d * d;
                    dout[i] = 2.0 * d / elements;
                }
                chunk_loss[lo / kChunk] = loss;
                net.backward(*pass, dout, &g);
            });
            double loss = 0;
            for (double l : chunk_loss) loss += l;
            loss /= elements;
            if (!std::isfinite(loss))
                fail(ErrorCode::kDivergence, "diffusion training diverged at epoch " + std::to_string(epoch) +
                                                 " batch " + std::to_string(batch_index));
            opt.step(net.params(), grad);
            total += loss * B;
        }
        result.loss.push_back(total / N);
    }
    return result;
}

double diffusion_loss(const DenoiserNet& net, const std::vector<Tensor>& data, const NoiseSchedule& schedule,
                      std::uint64_t seed) {
    require(!data.empty(), ErrorCode::kInvalidArgument, "evaluation set is empty");
    auto rng = stream_rng(seed, kEvalStream, 0);
    std::uniform_int_distribution<int> pick_t(1, schedule.steps);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double total = 0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < data.size(); start += kChunk) {
        const std::size_t end = std::min(data.size(), start + kChunk);
        std::vector<Tensor> xt, eps;
        std::vector<int> ts;
        for (std::size_t i = start; i < end; ++i) {
            ts.push_back(pick_t(rng));
            Tensor e(data[i].shape());
            for (auto& v : e.values()) v = gauss(rng);
            xt.push_back(forward_diffuse(data[i], ts.back(), e, schedule));
            eps.push_back(std::move(e));
        }
        const Tensor out = net.forward(stack(xt), ts);
        const Tensor target = stack(eps);
        for (std::size_t i = 0; i < out.size(); ++i) total += (out[i] - target[i]) * (out[i] - target[i]);
        count += out.size();
    }
    return total / static_cast<double>(count);
}

TrainResult train_predictor(PredictorNet& net, const std::vector<Tensor>& x, const std::vector<double>& y,
                            const TrainConfig& cfg) {
    check_config(cfg);
    require(!x.empty() && x.size() == y.size(), ErrorCode::kInvalidArgument, "need one label per design");
    for (double v : y) require(std::isfinite(v), ErrorCode::kInvalidArgument, "labels must be finite");
    require(cfg.validation_fraction >= 0 && cfg.validation_fraction < 1, ErrorCode::kInvalidArgument,
            "validation fraction must lie in [0, 1)");
    const int N = static_cast<int>(x.size());
    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    auto srng = stream_rng(cfg.seed, kSplitStream, 0);
    std::shuffle(order.begin(), order.end(), srng);
    const int n_val = std::min(N - 1, static_cast<int>(std::lround(cfg.validation_fraction * N)));
    const std::vector<int> val(order.begin(), order.begin() + n_val);
    const std::vector<int> train(order.begin() + n_val, order.end());

    if (!net.fitted) {
        double mean = 0;
        for (int i : train) mean += y[i];
        mean /= static_cast<double>(train.size());
        double var = 0;
        for (int i : train) var += (y[i] - mean) * (y[i] - mean);
        const double sd = std::sqrt(var / static_cast<double>(train.size()));
        net.label_mean = mean;
        net.label_scale = sd > 1e-12 ? sd : 1.0;
        net.fitted = true;
    }
    const double scale2 = net.label_scale * net.label_scale;

    Adam opt(net.param_count(), cfg.lr);
    TrainResult result;
    const int M = static_cast<int>(train.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> perm = train;
        auto erng = stream_rng(cfg.seed, kEpochStream, static_cast<std::uint64_t>(epoch));
        std::shuffle(perm.begin(), perm.end(), erng);
        double total = 0;
        for (int start = 0; start < M; start += cfg.batch) {
            const int B = std::min(cfg.batch, M - start);
            std::vector<double> chunk_loss((B + kChunk - 1) / kChunk, 0.0);
            const auto grad = chunked_gradient(B, net.param_count(), cfg.jobs, [&](int lo, int hi, std::vector<double>& g) {
                std::vector<Tensor> items;
                for (int i = lo; i < hi; ++i) items.push_back(x[perm[start + i]]);
                std::vector<double> out;
                const auto pass = net.trace(stack(items), out);
                std::vector<double> dout(out.size());
                double loss = 0;
                for (int i = lo; i < hi; ++i) {
                    // Loss in normalized units keeps the step size independent of the label scale.
                    const double d = (out[i - lo] - y[perm[start + i]]) / net.label_scale;
                    loss += d * d;
                    dout[i - lo] = 2.0 * d / net.label_scale / B;
                }
                chunk_loss[lo / kChunk] = loss;
                net.backward(*pass, dout, &g);
            });
            double loss = 0;
            for (double l : chunk_loss) loss += l;
            if (!std::isfinite(loss)) fail(ErrorCode::kDivergence, "predictor training diverged at epoch " + std::to_string(epoch));
            opt.step(net.params(), grad);
            total += loss;
        }
        result.loss.push_back(total / M * scale2);
    }

    result.validation_size = n_val;
    if (n_val > 0) {
        std::vector<double> pred, truth;
        for (std::size_t start = 0; start < val.size(); start += kChunk) {
            std::vector<Tensor> items;
            for (std::size_t i = start; i < std::min(val.size(), start + kChunk); ++i) {
                items.push_back(x[val[i]]);
                truth.push_back(y[val[i]]);
            }
            const auto out = net.forward(stack(items));
            pred.insert(pred.end(), out.begin(), out.end());
        }
        double mse = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) mse += (pred[i] - truth[i]) * (pred[i] - truth[i]);
        result.validation_mse = mse / static_cast<double>(pred.size());
        result.validation_spearman = spearman(pred, truth);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

nlohmann::json net_json(const ConvNet& net, const char* kind) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = kind;
    const auto& c = net.config();
    j["config"] = {{"in_channels", c.in_channels}, {"height", c.height},        {"width", c.width},
                   {"base_width", c.base_width},   {"time_dim", c.time_dim}};
    auto& blocks = j["blocks"] = nlohmann::json::array();
    for (const auto& b : net.blocks()) blocks.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", b.offset}});
    j["params"] = net.params();
    return j;
}

nlohmann::json parse_checkpoint(const std::string& text, const char* kind, NetConfig& cfg) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
        if (j.at("format_version").get<int>() != kFormatVersion)
            fail(ErrorCode::kParse, "unsupported checkpoint format_version");
        if (j.at("kind").get<std::string>() != kind) fail(ErrorCode::kParse, std::string("checkpoint is not a ") + kind);
        const auto& c = j.at("config");
        cfg.in_channels = c.at("in_channels").get<int>();
        cfg.height = c.at("height").get<int>();
        cfg.width = c.at("width").get<int>();
        cfg.base_width = c.at("base_width").get<int>();
        cfg.time_dim = c.at("time_dim").get<int>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::kParse, std::string("checkpoint: ") + e.what());
    }
    return j;
}

void load_params(ConvNet& net, const nlohmann::json& j) {
    try {
        const auto params = j.at("params").get<std::vector<double>>();
        if (params.size() != net.param_count()) fail(ErrorCode::kParse, "checkpoint parameter count mismatch");
        net.params() = params;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::kParse, std::string("checkpoint: ") + e.what());
    }
}

}  // namespace

std::string checkpoint_to_json(const DenoiserNet& net) { return net_json(net, "denoiser").dump(); }

std::string checkpoint_to_json(const PredictorNet& net) {
    auto j = net_json(net, "predictor");
    j["label_mean"] = net.label_mean;
    j["label_scale"] = net.label_scale;
    j["fitted"] = net.fitted;
    return j.dump();
}

DenoiserNet denoiser_from_json(const std::string& text) {
    NetConfig cfg;
    const auto j = parse_checkpoint(text, "denoiser", cfg);
    DenoiserNet net(cfg, 0);
    load_params(net, j);
    return net;
}

PredictorNet predictor_from_json(const std::string& text) {
    NetConfig cfg;
    const auto j = parse_checkpoint(text, "predictor", cfg);
    PredictorNet net(cfg, 0);
    load_params(net, j);
    try {
        net.label_mean = j.at("label_mean").get<double>();
        net.label_scale = j.at("label_scale").get<double>();
        net.fitted = j.at("fitted").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::kParse, std::string("checkpoint: ") + e.what());
    }
    return net;
}

void save_checkpoint(const std::string& path, const std::string& json) {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::kIo, "cannot write " + path);
    out << json << '\n';
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::kIo, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), ErrorCode::kInvalidArgument, "rank correlation needs equal-length inputs");
    const std::size_t n = a.size();
    if (n < 2) return 0.0;
    auto ranks = [n](const std::vector<double>& v) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(n);
        for (std::size_t i = 0; i < n;) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j);
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0 || sbb == 0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace circdiff
