// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

// Small convolutional networks with hand-written reverse-mode gradients.
// Batches are Tensors of shape [B, C, H, W]; all arithmetic is double.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "circdiff/tensor.hpp"

namespace circdiff {

struct NoiseSchedule {
    std::string kind;
    int steps = 0;               // T
    std::vector<double> alpha;   // cumulative signal level, alpha[0] = 1, size T + 1

    double operator[](int t) const { return alpha.at(static_cast<std::size_t>(t)); }
};

/// kind "cosine" (default) or "linear" (signal level falling linearly to
/// 1e-3 at T).
NoiseSchedule make_schedule(int steps = 1000, const std::string& kind = "cosine");

/// x_t = sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps.
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule);

struct NetConfig {
    int in_channels = 1;
    int height = 2;  // must be even for the denoiser
    int width = 1;
    int base_width = 32;
    int time_dim = 32;
};

/// Parameter storage shared by both networks.
class ConvNet {
public:
    struct ParamBlock {
        std::string name;
        std::vector<int> shape;
        std::size_t offset = 0;
    };

    const NetConfig& config() const noexcept { return cfg_; }
    std::vector<double>& params() noexcept { return params_; }
    const std::vector<double>& params() const noexcept { return params_; }
    std::size_t param_count() const noexcept { return params_.size(); }
    const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }

protected:
    explicit ConvNet(NetConfig cfg) : cfg_(cfg) {}
    std::size_t add_block(const std::string& name, std::vector<int> shape);

    NetConfig cfg_;
    std::vector<double> params_;
    std::vector<ParamBlock> blocks_;
};

/// Noise predictor: encoder-decoder with one pooled level, a skip
/// connection and a timestep embedding added in every residual block.
class DenoiserNet : public ConvNet {
public:
    struct Pass;

    DenoiserNet(NetConfig cfg, std::uint64_t seed);

    Tensor forward(const Tensor& x, const std::vector<int>& t) const;
    /// Forward pass that keeps what backward needs.
    std::shared_ptr<const Pass> trace(const Tensor& x, const std::vector<int>& t, Tensor& out) const;
    /// Returns dL/dx; adds dL/dparams into `param_grad` when non-null.
    Tensor backward(const Pass& pass, const Tensor& grad_out, std::vector<double>* param_grad) const;

private:
    struct Layout;
    std::shared_ptr<const Layout> layout_;
};

/// Cost predictor: three residual blocks, global average pooling and a
/// linear head. Outputs are in label units via the stored affine map.
class PredictorNet : public ConvNet {
public:
    struct Pass;

    PredictorNet(NetConfig cfg, std::uint64_t seed);

    std::vector<double> forward(const Tensor& x) const;
    std::shared_ptr<const Pass> trace(const Tensor& x, std::vector<double>& out) const;
    Tensor backward(const Pass& pass, const std::vector<double>& grad_out, std::vector<double>* param_grad) const;

    double label_mean = 0.0;
    double label_scale = 1.0;
    bool fitted = false;  // label_mean/label_scale set from data

private:
    struct Layout;
    std::shared_ptr<const Layout> layout_;
};

class Adam {
public:
    explicit Adam(std::size_t size, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(std::vector<double>& params, const std::vector<double>& grad);

private:
    double lr_, beta1_, beta2_, eps_;
    long steps_ = 0;
    std::vector<double> m_, v_;
};

struct TrainConfig {
    int epochs = 20;
    int batch = 32;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    int jobs = 1;
    double validation_fraction = 0.1;  // predictor only
};

struct TrainResult {
    std::vector<double> loss;  // mean training loss per epoch
    double validation_mse = 0.0;
    double validation_spearman = 0.0;
    int validation_size = 0;
};

/// Batches are split into fixed chunks whose gradients are summed in chunk
/// order, so results do not depend on `jobs`. Throws kDivergence on a
/// non-finite loss.
TrainResult train_diffusion(DenoiserNet& net, const std::vector<Tensor>& data, const NoiseSchedule& schedule,
                            const TrainConfig& cfg);
TrainResult train_predictor(PredictorNet& net, const std::vector<Tensor>& x, const std::vector<double>& y,
                            const TrainConfig& cfg);

/// Mean squared noise-prediction error at uniformly drawn timesteps.
double diffusion_loss(const DenoiserNet& net, const std::vector<Tensor>& data, const NoiseSchedule& schedule,
                      std::uint64_t seed);

/// Stacks [C, H, W] tensors into [B, C, H, W].
Tensor stack(const std::vector<Tensor>& items);
Tensor unstack(const Tensor& batch, int index);

std::string checkpoint_to_json(const DenoiserNet& net);
std::string checkpoint_to_json(const PredictorNet& net);
DenoiserNet denoiser_from_json(const std::string& text);
PredictorNet predictor_from_json(const std::string& text);
void save_checkpoint(const std::string& path, const std::string& json);
std::string read_text(const std::string& path);

/// Rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace circdiff
