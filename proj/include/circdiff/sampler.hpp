// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "circdiff/circuit.hpp"
#include "circdiff/dataset.hpp"
#include "circdiff/neural.hpp"

namespace circdiff {

/// x0_hat = (x_t - sqrt(1 - alpha_t) eps) / sqrt(alpha_t).
Tensor predict_x0(const Tensor& xt, const Tensor& eps, int t, const NoiseSchedule& schedule);

/// Deterministic DDIM update from t to t_prev < t.
Tensor ddim_step(const Tensor& xt, const Tensor& eps, int t, int t_prev, const NoiseSchedule& schedule);

/// Re-noises x_{t_prev} back to timestep t with the given unit Gaussian noise.
Tensor reflect(const Tensor& x_prev, int t, int t_prev, const NoiseSchedule& schedule, const Tensor& noise);
Tensor reflect(const Tensor& x_prev, int t, int t_prev, const NoiseSchedule& schedule, std::mt19937_64& rng);

/// Evenly strided timesteps T = t_1 > ... > t_steps > 0, followed by 0.
std::vector<int> timestep_sequence(int total, int steps);

struct GuidanceConfig {
    double target = 0.7;      // y*
    double strength = 10.0;   // c_g in s(t) = c_g sqrt(1 - alpha_t)
    int reflect_steps = 25;   // k; 1 disables self-reflection
};

/// dL/dx_t for L = (target - f(x0_hat(x_t)))^2 per batch item, through both
/// networks. x0_hat is clipped to [-1, 1] before the predictor, so clipped
/// elements carry no gradient. `predicted` receives f(x0_hat).
Tensor guidance_gradient(const Tensor& xt, int t, const DenoiserNet& eps_net, const PredictorNet& predictor,
                         double target, const NoiseSchedule& schedule, std::vector<double>* predicted = nullptr);

/// One denoising step of a batch from t to t_prev. Without a predictor, or
/// with zero strength, this is a plain DDIM step on the clipped x0_hat.
Tensor guided_step(const Tensor& xt, int t, int t_prev, const DenoiserNet& eps_net, const PredictorNet* predictor,
                   const GuidanceConfig& cfg, const NoiseSchedule& schedule);

struct DesignShape {
    DesignKind kind = DesignKind::kCompressorTree;
    int width = 8;  // multiplier width for trees, adder width for prefix bitmaps

    std::vector<int> tensor_shape() const;
    Design decode(const Tensor& x) const;
};

struct SamplerConfig {
    int steps = 50;
    GuidanceConfig guidance;
    std::uint64_t seed = 1;
    int jobs = 1;
};

struct SampleDiagnostics {
    int index = 0;
    bool ok = true;
    double predicted_y = 0.0;  // predictor on the quantized sample; 0 without one
    int violations = 0;        // design-rule violations before legalization
    std::string error;
};

struct SampleBatch {
    std::vector<std::optional<Design>> designs;  // empty where sampling failed
    std::vector<SampleDiagnostics> diagnostics;
};

/// Gradient-guided sampling with self-reflection. Chains run in fixed chunks
/// with per-sample random streams, so results do not depend on `jobs`.
SampleBatch sample_guided(int count, const DesignShape& shape, const SamplerConfig& cfg, const DenoiserNet& eps_net,
                          const PredictorNet& predictor, const NoiseSchedule& schedule);

/// Plain DDIM chains.
SampleBatch sample_unconditional(int count, const DesignShape& shape, const SamplerConfig& cfg,
                                 const DenoiserNet& eps_net, const NoiseSchedule& schedule);

std::string diagnostics_csv(const SampleBatch& batch);

}  // namespace circdiff
