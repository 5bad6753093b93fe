// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "circdiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "circdiff/parallel.hpp"

namespace circdiff {

namespace {

// Samples per network batch. Fixed so results do not depend on job count.
constexpr int kSampleChunk = 8;

constexpr std::uint64_t kStreamInit = 11;
constexpr std::uint64_t kStreamReflect = 12;

void check_step(int t, int t_prev, const NoiseSchedule& schedule) {
    require(t >= 1 && t <= schedule.steps, ErrorCode::kInvalidArgument, "timestep out of range");
    require(t_prev >= 0 && t_prev < t, ErrorCode::kInvalidArgument, "previous timestep must be below t");
}

struct Denoised {
    Tensor next;             // x_{t_prev} before guidance
    Tensor grad;             // dL/dx_t, empty without guidance
    std::vector<double> y;   // predictor on clipped x0_hat
};

// Clipped x0_hat and the noise consistent with it.
void clipped_estimate(const Tensor& xt, const Tensor& eps, double a, Tensor& x0c, Tensor& eps_c) {
    const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    x0c = Tensor(xt.shape());
    eps_c = Tensor(xt.shape());
    for (std::size_t i = 0; i < xt.size(); ++i) {
        const double x0 = (xt[i] - sn * eps[i]) / sa;
        x0c[i] = std::clamp(x0, -1.0, 1.0);
        eps_c[i] = sn > 0 ? (xt[i] - sa * x0c[i]) / sn : eps[i];
    }
}

Denoised denoise(const Tensor& xt, int t, int t_prev, const DenoiserNet& eps_net, const PredictorNet* predictor,
                 double target, const NoiseSchedule& schedule) {
    const int batch = xt.dim(0);
    const std::vector<int> ts(static_cast<std::size_t>(batch), t);
    const double a = schedule[t], ap = schedule[t_prev];
    Denoised out;
    Tensor eps;
    std::shared_ptr<const DenoiserNet::Pass> pass;
    if (predictor)
        pass = eps_net.trace(xt, ts, eps);
    else
        eps = eps_net.forward(xt, ts);

    Tensor x0c, eps_c;
    clipped_estimate(xt, eps, a, x0c, eps_c);
    out.next = Tensor(xt.shape());
    const double sap = std::sqrt(ap), snp = std::sqrt(1.0 - ap);
    for (std::size_t i = 0; i < xt.size(); ++i) out.next[i] = sap * x0c[i] + snp * eps_c[i];
    if (!predictor) return out;

    const auto ppass = predictor->trace(x0c, out.y);
    std::vector<double> gy(out.y.size());
    for (std::size_t b = 0; b < gy.size(); ++b) gy[b] = 2.0 * (out.y[b] - target);
    Tensor g = predictor->backward(*ppass, gy, nullptr);

    // x0_hat = (x_t - sn eps(x_t)) / sa, so dL/dx_t = m g / sa - (sn / sa) J^T (m g),
    // where m masks elements clipped away.
    const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    Tensor through_eps(xt.shape());
    for (std::size_t i = 0; i < xt.size(); ++i) {
        const double x0 = (xt[i] - sn * eps[i]) / sa;
        if (x0 < -1.0 || x0 > 1.0) g[i] = 0.0;
        through_eps[i] = -(sn / sa) * g[i];
    }
    out.grad = eps_net.backward(*pass, through_eps, nullptr);
    for (std::size_t i = 0; i < xt.size(); ++i) out.grad[i] += g[i] / sa;
    return out;
}

void gaussian(Tensor& x, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& v : x.values()) v = g(rng);
}

bool finite_item(const Tensor& batch, int b) {
    const std::size_t each = batch.size() / static_cast<std::size_t>(batch.dim(0));
    for (std::size_t i = 0; i < each; ++i)
        if (!std::isfinite(batch[b * each + i])) return false;
    return true;
}

SampleBatch run_chains(int count, const DesignShape& shape, const SamplerConfig& cfg, const DenoiserNet& eps_net,
                       const PredictorNet* predictor, const NoiseSchedule& schedule) {
    require(count >= 0, ErrorCode::kInvalidArgument, "sample count must be non-negative");
    require(cfg.guidance.strength >= 0, ErrorCode::kInvalidArgument, "guidance strength must be non-negative");
    require(cfg.guidance.reflect_steps >= 1, ErrorCode::kInvalidArgument, "reflect steps must be at least 1");
    const auto item_shape = shape.tensor_shape();
    const auto& nc = eps_net.config();
    require(nc.in_channels == item_shape[0] && nc.height == item_shape[1] && nc.width == item_shape[2],
            ErrorCode::kInvalidArgument, "denoiser does not match the design shape " + shape_string(item_shape));
    const auto ts = timestep_sequence(schedule.steps, cfg.steps);
    const bool guided = predictor && cfg.guidance.strength > 0;
    const int k = cfg.guidance.reflect_steps;
    const std::size_t each = Tensor::count(item_shape);

    SampleBatch result;
    result.designs.resize(static_cast<std::size_t>(count));
    result.diagnostics.resize(static_cast<std::size_t>(count));
    const int chunks = (count + kSampleChunk - 1) / kSampleChunk;

    parallel_for(chunks, cfg.jobs, [&](int chunk) {
        const int start = chunk * kSampleChunk;
        const int batch = std::min(kSampleChunk, count - start);
        std::vector<std::mt19937_64> rngs;
        std::vector<int> shape4{batch};
        shape4.insert(shape4.end(), item_shape.begin(), item_shape.end());
        Tensor x(shape4);
        std::vector<bool> alive(static_cast<std::size_t>(batch), true);
        for (int b = 0; b < batch; ++b) {
            auto init = stream_rng(cfg.seed, kStreamInit, static_cast<std::uint64_t>(start + b));
            std::normal_distribution<double> g(0.0, 1.0);
            for (std::size_t i = 0; i < each; ++i) x[b * each + i] = g(init);
            rngs.push_back(stream_rng(cfg.seed, kStreamReflect, static_cast<std::uint64_t>(start + b)));
        }
        auto mark_failures = [&](Tensor& state, const char* where) {
            for (int b = 0; b < batch; ++b) {
                if (!alive[b] || finite_item(state, b)) continue;
                alive[b] = false;
                auto& d = result.diagnostics[static_cast<std::size_t>(start + b)];
                d.ok = false;
                d.error = std::string("non-finite state ") + where;
                std::fill(state.data() + b * each, state.data() + (b + 1) * each, 0.0);
            }
        };
        Tensor noise(item_shape);
        for (std::size_t step = 0; step + 1 < ts.size(); ++step) {
            const int t = ts[step], tp = ts[step + 1];
            const double s = cfg.guidance.strength * std::sqrt(1.0 - schedule[t]);
            for (int r = 0; r < k; ++r) {
                auto d = denoise(x, t, tp, eps_net, guided ? predictor : nullptr, cfg.guidance.target, schedule);
                if (guided)
                    for (std::size_t i = 0; i < x.size(); ++i) d.next[i] -= s * d.grad[i];
                mark_failures(d.next, "after denoising");
                if (r + 1 == k) {
                    x = std::move(d.next);
                    break;
                }
                // Re-noise back to t and try again.
                for (int b = 0; b < batch; ++b) {
                    gaussian(noise, rngs[static_cast<std::size_t>(b)]);
                    const double ratio = schedule[t] / schedule[tp];
                    const double keep = std::sqrt(ratio), add = std::sqrt(std::max(0.0, 1.0 - ratio));
                    for (std::size_t i = 0; i < each; ++i)
                        x[b * each + i] = keep * d.next[b * each + i] + add * noise[i];
                }
            }
        }

        // Quantize and decode.
        for (auto& v : x.values()) v = v >= 0.0 ? 1.0 : -1.0;
        std::vector<double> y;
        if (predictor) y = predictor->forward(x);
        for (int b = 0; b < batch; ++b) {
            const auto idx = static_cast<std::size_t>(start + b);
            auto& diag = result.diagnostics[idx];
            diag.index = start + b;
            if (!alive[b]) continue;
            if (predictor) diag.predicted_y = y[static_cast<std::size_t>(b)];
            try {
                Design design = shape.decode(unstack(x, b));
                if (const auto* ct = std::get_if<CompressorTree>(&design))
                    diag.violations = static_cast<int>(validate_ct(*ct).size());
                else
                    diag.violations = static_cast<int>(validate_prefix(std::get<PrefixBitmap>(design)).size());
                result.designs[idx] = std::move(design);
            } catch (const Error& e) {
                diag.ok = false;
                diag.error = e.what();
            }
        }
    });
    return result;
}

}  // namespace

Tensor predict_x0(const Tensor& xt, const Tensor& eps, int t, const NoiseSchedule& schedule) {
    require(xt.same_shape(eps), ErrorCode::kInvalidArgument, "noise shape does not match the state");
    require(t >= 1 && t <= schedule.steps, ErrorCode::kInvalidArgument, "timestep out of range");
    const double a = schedule[t];
    const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    Tensor out(xt.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (xt[i] - sn * eps[i]) / sa;
    return out;
}

Tensor ddim_step(const Tensor& xt, const Tensor& eps, int t, int t_prev, const NoiseSchedule& schedule) {
    check_step(t, t_prev, schedule);
    const Tensor x0 = predict_x0(xt, eps, t, schedule);
    const double ap = schedule[t_prev];
    const double sap = std::sqrt(ap), snp = std::sqrt(1.0 - ap);
    Tensor out(xt.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sap * x0[i] + snp * eps[i];
    return out;
}

Tensor reflect(const Tensor& x_prev, int t, int t_prev, const NoiseSchedule& schedule, const Tensor& noise) {
    check_step(t, t_prev, schedule);
    require(x_prev.same_shape(noise), ErrorCode::kInvalidArgument, "noise shape does not match the state");
    const double ratio = schedule[t] / schedule[t_prev];
    const double keep = std::sqrt(ratio), add = std::sqrt(std::max(0.0, 1.0 - ratio));
    Tensor out(x_prev.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * x_prev[i] + add * noise[i];
    return out;
}

Tensor reflect(const Tensor& x_prev, int t, int t_prev, const NoiseSchedule& schedule, std::mt19937_64& rng) {
    Tensor noise(x_prev.shape());
    gaussian(noise, rng);
    return reflect(x_prev, t, t_prev, schedule, noise);
}

std::vector<int> timestep_sequence(int total, int steps) {
    require(total >= 1, ErrorCode::kInvalidArgument, "schedule must have at least one step");
    require(steps >= 1 && steps <= total, ErrorCode::kInvalidArgument,
            "sampling steps must be in [1, " + std::to_string(total) + "]");
    std::vector<int> out;
    for (int i = 0; i < steps; ++i)
        out.push_back(static_cast<int>(std::lround(static_cast<double>(total) * (steps - i) / steps)));
    out.push_back(0);
    return out;
}

Tensor guidance_gradient(const Tensor& xt, int t, const DenoiserNet& eps_net, const PredictorNet& predictor,
                         double target, const NoiseSchedule& schedule, std::vector<double>* predicted) {
    require(xt.rank() == 4, ErrorCode::kInvalidArgument, "guidance expects a batch");
    check_step(t, 0, schedule);
    auto d = denoise(xt, t, 0, eps_net, &predictor, target, schedule);
    if (predicted) *predicted = d.y;
    return d.grad;
}

Tensor guided_step(const Tensor& xt, int t, int t_prev, const DenoiserNet& eps_net, const PredictorNet* predictor,
                   const GuidanceConfig& cfg, const NoiseSchedule& schedule) {
    require(xt.rank() == 4, ErrorCode::kInvalidArgument, "guided step expects a batch");
    check_step(t, t_prev, schedule);
    const bool guided = predictor && cfg.strength > 0;
    auto d = denoise(xt, t, t_prev, eps_net, guided ? predictor : nullptr, cfg.target, schedule);
    if (guided) {
        const double s = cfg.strength * std::sqrt(1.0 - schedule[t]);
        for (std::size_t i = 0; i < xt.size(); ++i) d.next[i] -= s * d.grad[i];
    }
    return d.next;
}

std::vector<int> DesignShape::tensor_shape() const {
    if (kind == DesignKind::kCompressorTree) return ct_tensor_shape(width, ct_stage_count(width));
    return {1, width, width};
}

Design DesignShape::decode(const Tensor& x) const {
    if (kind == DesignKind::kCompressorTree) return ct_from_tensor(x, width);
    return prefix_from_tensor(x);
}

SampleBatch sample_guided(int count, const DesignShape& shape, const SamplerConfig& cfg, const DenoiserNet& eps_net,
                          const PredictorNet& predictor, const NoiseSchedule& schedule) {
    return run_chains(count, shape, cfg, eps_net, &predictor, schedule);
}

SampleBatch sample_unconditional(int count, const DesignShape& shape, const SamplerConfig& cfg,
                                 const DenoiserNet& eps_net, const NoiseSchedule& schedule) {
    SamplerConfig plain = cfg;
    plain.guidance.strength = 0;
    plain.guidance.reflect_steps = 1;
    return run_chains(count, shape, plain, eps_net, nullptr, schedule);
}

std::string diagnostics_csv(const SampleBatch& batch) {
    std::ostringstream out;
    out << "index,ok,predicted_y,violations,error\n";
    char buf[64];
    for (const auto& d : batch.diagnostics) {
        std::snprintf(buf, sizeof buf, "%.17g", d.predicted_y);
        std::string err = d.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out << d.index << ',' << (d.ok ? 1 : 0) << ',' << buf << ',' << d.violations << ',' << err << '\n';
    }
    return out.str();
}

}  // namespace circdiff
