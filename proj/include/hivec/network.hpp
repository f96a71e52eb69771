#pragma once

#include <cstddef>
#include <vector>

#include "hivec/matrix.hpp"
#include "hivec/rng.hpp"

namespace hivec {

/// One dense block: linear -> batch norm -> (optionally) ReLU.
struct DenseLayer {
    Matrix W;                          // in x out
    std::vector<double> b;             // out
    std::vector<double> gamma;         // out
    std::vector<double> beta;          // out
    std::vector<double> running_mean;  // out
    std::vector<double> running_var;   // out
    bool relu = true;

    std::size_t in_dim() const { return W.rows; }
    std::size_t out_dim() const { return W.cols; }
};

/// The trainable encoder substrate: an MLP whose final output is the
/// d-dimensional feature vector the hierarchical heads read prefixes of.
struct EncoderParams {
    std::vector<DenseLayer> layers;
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.9;

    std::size_t input_dim() const { return layers.front().in_dim(); }
    std::size_t feature_dim() const { return layers.back().out_dim(); }

    void validate() const;
};

/// Builds an MLP with the given layer widths (input first, feature dim last).
/// ReLU on every layer except the final one; weights seeded He-style.
EncoderParams make_encoder(const std::vector<std::size_t>& widths, Rng& rng);

enum class NormMode {
    TrainStats,    // normalize with batch stats, update running stats
    BatchStats,    // normalize with batch stats, leave running stats alone
    RunningStats,  // normalize with stored running stats
};

enum class ParamScope {
    NormAffineOnly,  // gamma/beta only
    FullEncoder,     // W, b, gamma, beta
};

struct LayerCache {
    Matrix input;               // batch entering the layer
    Matrix pre_norm;            // after linear
    std::vector<double> mean;   // stats used for normalization
    std::vector<double> var;
    Matrix normalized;          // (pre_norm - mean) / sqrt(var + eps)
    Matrix pre_activation;      // after affine, before ReLU
    bool batch_statistics = false;
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    std::size_t batch_size = 0;
};

struct GradientSet {
    struct LayerGrads {
        Matrix W;
        std::vector<double> b;
        std::vector<double> gamma;
        std::vector<double> beta;
    };
    std::vector<LayerGrads> layers;

    /// Per-head weight gradients; filled by the head-side backward passes.
    std::vector<Matrix> heads;
};

GradientSet zero_gradients(const EncoderParams& params);

/// Runs the encoder over a batch (rows are samples). Batch-statistic modes
/// need at least two samples; TrainStats additionally folds the batch
/// statistics into the running ones with the configured momentum.
std::pair<Matrix, ForwardCache> encoder_forward(EncoderParams& params, const Matrix& x,
                                                NormMode mode);

/// Forward without any chance of mutating running statistics.
std::pair<Matrix, ForwardCache> encoder_forward(const EncoderParams& params, const Matrix& x,
                                                NormMode mode);

/// Analytic gradients of the forward computation, including the batch-norm
/// backward through the batch statistics when those were used. Returns the
/// gradient w.r.t. the input batch alongside the parameter gradients.
Matrix encoder_backward(const EncoderParams& params, const ForwardCache& cache,
                        const Matrix& grad_z, GradientSet& grads);

struct LossResult {
    double loss = 0.0;
    Matrix grad_logits;
};

/// Mean over the batch of -ln softmax(logits)[label]; gradient is
/// (softmax - onehot) / B.
LossResult cross_entropy_loss(const Matrix& logits, const std::vector<int>& labels);

/// Mean over the batch of the softmax entropy (the Tent-style unsupervised
/// objective) with its analytic gradient.
LossResult entropy_loss(const Matrix& logits);

void sgd_step(EncoderParams& params, const GradientSet& grads, double lr, ParamScope scope);

}  // namespace hivec
