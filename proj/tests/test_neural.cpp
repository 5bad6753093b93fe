// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "circdiff/circuit.hpp"
#include "circdiff/dataset.hpp"
#include "circdiff/neural.hpp"

using namespace circdiff;

namespace {

constexpr double kFdStep = 1e-3;
constexpr double kFdTolerance = 1e-4;

double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> g(0.0, scale);
    for (auto& v : t.values()) v = g(rng);
    return t;
}

void randomize(ConvNet& net, std::mt19937_64& rng, double scale = 0.2) {
    std::normal_distribution<double> g(0.0, scale);
    for (auto& p : net.params()) p = g(rng);
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Naive Spearman: Pearson correlation of average ranks computed by counting.
double spearman_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    auto rank = [](const std::vector<double>& v) {
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            double less = 0, equal = 0;
            for (double w : v) {
                less += w < v[i] ? 1 : 0;
                equal += w == v[i] ? 1 : 0;
            }
            r[i] = less + (equal - 1) / 2;
        }
        return r;
    };
    const auto ra = rank(a), rb = rank(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += ra[i] / n, mb += rb[i] / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

std::vector<Tensor> encoded(const Dataset& ds) {
    std::vector<Tensor> out;
    for (const auto& d : ds.designs) out.push_back(to_tensor(d));
    return out;
}

}  // namespace

TEST_CASE("noise schedules") {
    for (const char* kind : {"cosine", "linear"}) {
        const auto s = make_schedule(1000, kind);
        CHECK(s[0] == 1.0);
        for (int t = 1; t <= 1000; ++t) {
            REQUIRE(s[t] < s[t - 1]);
            REQUIRE(s[t] > 0);
        }
    }
    CHECK(make_schedule(1000)[1000] < 0.01);
    CHECK_THROWS_AS(make_schedule(1), Error);
    CHECK_THROWS_AS(make_schedule(100, "sigmoid"), Error);
}

TEST_CASE("forward diffusion") {
    std::mt19937_64 rng(1);
    const auto s = make_schedule(1000);
    const Tensor x0 = random_tensor({2, 4, 3}, rng);
    const Tensor eps = random_tensor({2, 4, 3}, rng);
    CHECK(forward_diffuse(x0, 0, eps, s).storage() == x0.storage());
    const Tensor zero({2, 4, 3}, 0.0);
    const auto xt = forward_diffuse(zero, 500, eps, s);
    for (std::size_t i = 0; i < xt.size(); ++i) CHECK(xt[i] == doctest::Approx(std::sqrt(1 - s[500]) * eps[i]));
    // Inverting with the injected noise recovers x0.
    for (int t : {1, 10, 250, 999, 1000}) {
        const auto x = forward_diffuse(x0, t, eps, s);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double back = (x[i] - std::sqrt(1 - s[t]) * eps[i]) / std::sqrt(s[t]);
            REQUIRE(std::abs(back - x0[i]) <= 1e-6);
        }
    }
}

TEST_CASE("denoiser shapes and gradients") {
    std::mt19937_64 rng(2);
    const NetConfig cfg{3, 6, 5, 4, 8};
    DenoiserNet net(cfg, 7);
    const Tensor x = random_tensor({2, 3, 6, 5}, rng);
    const std::vector<int> t{3, 700};
    const Tensor out = net.forward(x, t);
    CHECK(out.shape() == x.shape());
    for (double v : out.values()) CHECK(v == 0.0);  // zero output layer at init

    randomize(net, rng);
    const Tensor w = random_tensor(x.shape(), rng);
    Tensor y;
    const auto pass = net.trace(x, t, y);
    std::vector<double> pgrad;
    const Tensor gx = net.backward(*pass, w, &pgrad);
    auto loss = [&](const Tensor& in) { return dot(net.forward(in, t), w); };

    SUBCASE("input gradient") {
        for (int trial = 0; trial < 10; ++trial) {
            const std::size_t i = rng() % x.size();
            Tensor xp = x, xm = x;
            xp[i] += kFdStep;
            xm[i] -= kFdStep;
            const double fd = (loss(xp) - loss(xm)) / (2 * kFdStep);
            CHECK(relative_error(fd, gx[i]) <= kFdTolerance);
        }
    }
    SUBCASE("parameter gradient, every block") {
        for (const auto& block : net.blocks()) {
            const std::size_t i = block.offset + rng() % Tensor::count(block.shape);
            const double keep = net.params()[i];
            net.params()[i] = keep + kFdStep;
            const double lp = loss(x);
            net.params()[i] = keep - kFdStep;
            const double lm = loss(x);
            net.params()[i] = keep;
            const double fd = (lp - lm) / (2 * kFdStep);
            INFO(block.name);
            CHECK(relative_error(fd, pgrad[i]) <= kFdTolerance);
        }
    }
    CHECK_THROWS_AS(DenoiserNet(NetConfig{1, 5, 5, 4, 8}, 1), Error);
    CHECK_THROWS_AS(net.forward(random_tensor({1, 3, 4, 5}, rng), {1}), Error);
}

TEST_CASE("predictor gradients") {
    std::mt19937_64 rng(3);
    PredictorNet net(NetConfig{2, 5, 4, 4, 8}, 9);
    randomize(net, rng);
    net.label_mean = 0.8;
    net.label_scale = 0.3;
    const Tensor x = random_tensor({3, 2, 5, 4}, rng);
    const std::vector<double> w{0.7, -1.3, 0.4};
    std::vector<double> y;
    const auto pass = net.trace(x, y);
    REQUIRE(y.size() == 3);
    std::vector<double> pgrad;
    const Tensor gx = net.backward(*pass, w, &pgrad);
    auto loss = [&](const Tensor& in) {
        const auto o = net.forward(in);
        return w[0] * o[0] + w[1] * o[1] + w[2] * o[2];
    };
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t i = rng() % x.size();
        Tensor xp = x, xm = x;
        xp[i] += kFdStep;
        xm[i] -= kFdStep;
        CHECK(relative_error((loss(xp) - loss(xm)) / (2 * kFdStep), gx[i]) <= kFdTolerance);
    }
    for (const auto& block : net.blocks()) {
        const std::size_t i = block.offset + rng() % Tensor::count(block.shape);
        const double keep = net.params()[i];
        net.params()[i] = keep + kFdStep;
        const double lp = loss(x);
        net.params()[i] = keep - kFdStep;
        const double lm = loss(x);
        net.params()[i] = keep;
        INFO(block.name);
        CHECK(relative_error((lp - lm) / (2 * kFdStep), pgrad[i]) <= kFdTolerance);
    }
}

TEST_CASE("quadratic toy: Adam minimizes and gradients are analytic") {
    // f(p) = sum (p_i - i)^2 with gradient 2 (p_i - i).
    std::vector<double> p(5, 0.0);
    Adam opt(p.size(), 0.1);
    for (int step = 0; step < 2000; ++step) {
        std::vector<double> g(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) g[i] = 2 * (p[i] - static_cast<double>(i));
        opt.step(p, g);
    }
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(static_cast<double>(i)).epsilon(1e-3));
}

TEST_CASE("spearman") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 1, 1}, {1, 2, 3}) == 0.0);
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> small(0, 5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(20), b(20);
        for (int i = 0; i < 20; ++i) a[i] = small(rng), b[i] = small(rng) + 0.5 * a[i];
        CHECK(spearman(a, b) == doctest::Approx(spearman_oracle(a, b)));
    }
}

TEST_CASE("training") {
    const QoREvaluator eval(4);
    DatasetSpec spec = DatasetSpec::desk(DesignKind::kCompressorTree, 4);
    spec.unlabeled_count = 64;
    spec.labeled_count = 40;
    const auto ds = generate_dataset(spec, eval);
    const auto data = encoded(ds);
    const auto shape = data[0].shape();
    const NetConfig cfg{shape[0], shape[1], shape[2], 8, 8};
    const auto sched = make_schedule(1000);

    SUBCASE("diffusion loss drops from the untrained baseline") {
        DenoiserNet net(cfg, 1);
        const double before = diffusion_loss(net, data, sched, 5);
        CHECK(before == doctest::Approx(1.0).epsilon(0.1));
        TrainConfig tc;
        tc.epochs = 15;
        tc.batch = 16;
        const auto r = train_diffusion(net, data, sched, tc);
        REQUIRE(r.loss.size() == 15);
        CHECK(r.loss.back() < r.loss.front());
        CHECK(diffusion_loss(net, data, sched, 5) < before);

        DenoiserNet again(cfg, 1);
        tc.jobs = 3;
        const auto r2 = train_diffusion(again, data, sched, tc);
        CHECK(r2.loss == r.loss);
        CHECK(again.params() == net.params());
    }
    SUBCASE("predictor fits a constant label exactly") {
        PredictorNet net(cfg, 2);
        std::vector<double> y(data.size(), 0.9);
        TrainConfig tc;
        tc.epochs = 3;
        const auto r = train_predictor(net, data, y, tc);
        CHECK(r.validation_size > 0);
        CHECK(r.validation_mse < 1e-4);
    }
    SUBCASE("predictor learns the QoR ranking") {
        std::vector<Tensor> xs;
        std::vector<double> ys;
        for (const auto& l : ds.labeled) {
            xs.push_back(data[l.index]);
            ys.push_back(l.label.y);
        }
        PredictorNet net(cfg, 3);
        TrainConfig tc;
        tc.epochs = 60;
        tc.batch = 8;
        tc.validation_fraction = 0.0;
        const auto r = train_predictor(net, xs, ys, tc);
        CHECK(r.loss.back() < r.loss.front());
        CHECK(spearman(net.forward(stack(xs)), ys) > 0.7);
    }
    SUBCASE("divergence is reported") {
        PredictorNet net(cfg, 4);
        std::vector<double> y(data.size(), 1.0);
        y[3] = std::nan("");
        CHECK_THROWS_AS(train_predictor(net, data, y, TrainConfig{}), Error);
    }
}

TEST_CASE("checkpoints round trip") {
    std::mt19937_64 rng(5);
    DenoiserNet d(NetConfig{2, 4, 3, 4, 8}, 1);
    randomize(d, rng);
    const auto d2 = denoiser_from_json(checkpoint_to_json(d));
    CHECK(d2.params() == d.params());
    PredictorNet p(NetConfig{2, 4, 3, 4, 8}, 1);
    randomize(p, rng);
    p.label_mean = 0.912345678901234;
    p.label_scale = 0.1;
    p.fitted = true;
    const auto p2 = predictor_from_json(checkpoint_to_json(p));
    CHECK(p2.params() == p.params());
    CHECK(p2.label_mean == p.label_mean);
    CHECK(p2.fitted);
    CHECK_THROWS_AS(predictor_from_json(checkpoint_to_json(d)), Error);
    CHECK_THROWS_AS(denoiser_from_json("{}"), Error);
}
