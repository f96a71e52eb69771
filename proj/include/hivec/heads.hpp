#pragma once

#include <cstddef>
#include <vector>

#include "hivec/matrix.hpp"
#include "hivec/network.hpp"
#include "hivec/rng.hpp"

namespace hivec {

/// The nested-dimension linear classifiers. Head i reads the first dims[i]
/// feature columns and maps them to class logits; heads carry no bias.
struct HeadSet {
    std::vector<std::size_t> dims;  // strictly increasing, last == feature dim
    std::vector<Matrix> weights;    // weights[i] is dims[i] x class_count
    std::size_t class_count = 0;

    std::size_t size() const { return dims.size(); }
    void validate(std::size_t feature_dim) const;
};

/// Doubling dimension schedule starting at 8 and capped by the feature dim:
/// d=64 gives {8, 16, 32, 64}, d=512 gives {8, ..., 512}.
std::vector<std::size_t> default_head_dims(std::size_t feature_dim);

HeadSet make_heads(const std::vector<std::size_t>& dims, std::size_t class_count,
                   std::size_t feature_dim, Rng& rng);

/// Logits of head i over a feature batch; only the first dims[i] columns of z
/// participate.
Matrix head_logits(const HeadSet& heads, const Matrix& z, std::size_t i);

struct MultiheadLoss {
    double loss = 0.0;
    std::vector<double> head_loss;   // per-head CE terms; loss is their sum
    std::vector<Matrix> grad_heads;  // per-head weight gradients
    Matrix grad_z;                   // accumulated feature gradient
};

/// Sum of per-head cross-entropy losses (equal weights). grad_z collects each
/// head's contribution into its prefix columns only.
MultiheadLoss multihead_ce(const HeadSet& heads, const Matrix& z, const std::vector<int>& labels);

struct Dataset;  // defined in shift.hpp

struct TrainOptions {
    std::size_t epochs = 40;
    double lr = 0.05;
    std::size_t batch_size = 128;
};

struct EpochStats {
    double mean_loss = 0.0;
    std::vector<double> head_loss;      // mean per-head CE over the epoch
    std::vector<double> head_accuracy;  // train accuracy per head at epoch end
};

/// Joint source training of encoder and heads by minibatch SGD on the summed
/// per-head cross-entropy. Deterministic for a fixed rng seed.
std::vector<EpochStats> train_source(EncoderParams& encoder, HeadSet& heads,
                                     const Dataset& dataset, const TrainOptions& opts, Rng& rng);

struct MrlEvalResult {
    std::vector<double> head_accuracy;
    std::size_t best_head = 0;  // ties resolved toward the smaller dimension
};

/// Per-head accuracy of the frozen model on a labeled set (the MRL zero-shot
/// baseline) plus the argmax head.
MrlEvalResult zero_shot_mrl_eval(const EncoderParams& encoder, const HeadSet& heads,
                                 const Dataset& eval_set, NormMode mode = NormMode::RunningStats);

}  // namespace hivec
