#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "hivec/heads.hpp"
#include "hivec/matrix.hpp"
#include "hivec/network.hpp"
#include "hivec/shift.hpp"

namespace hivec {

enum class OodScoreKind {
    NegEntropy,  // higher (less negative) = more inlier
    MaxProb,
};

/// Test-time hyperparameters. Defaults follow the reference configuration:
/// merge scaling 0.7, cosine threshold 0.6, MI gate threshold 1.2 nats.
struct AdaptConfig {
    double alpha = 0.7;
    double tau = 0.6;
    double tau_ood = 1.2;
    double lr = 1e-3;
    std::size_t batch_size = 32;
    ParamScope scope = ParamScope::NormAffineOnly;
    NormMode norm_mode = NormMode::BatchStats;
    bool enable_merge = true;  // target information sharing (TV)
    bool enable_gate = true;   // hierarchical layer agreement (HLA)
    OodScoreKind ood_score = OodScoreKind::NegEntropy;

    void validate() const;
};

struct GateDecision {
    double i_avg = 0.0;               // nats
    std::vector<double> per_head_mi;  // one entry per non-selected head
    bool skipped = false;
};

struct MergeReport {
    std::size_t selected = 0;
    std::vector<double> similarities;        // per head; the selected entry is 1
    std::vector<std::size_t> merged_into;    // heads whose prefix was overwritten
    std::vector<std::size_t> prefix_lengths; // overlap rows used, aligned with merged_into
};

struct Prediction {
    int label = 0;
    double confidence = 0.0;  // max softmax probability
    double ood_score = 0.0;
};

struct BatchReport {
    std::size_t selected = 0;
    std::vector<double> grad_norms;
    GateDecision gate;
    std::optional<MergeReport> merge;  // absent when the batch was skipped
    std::vector<Prediction> predictions;
};

/// Per-head Frobenius norm of the entropy-loss gradient w.r.t. that head's
/// weights alone (closed form, no encoder backward).
std::vector<double> head_grad_norms(const HeadSet& heads, const Matrix& z);

/// Argmin over gradient norms; ties resolve to the smaller head dimension.
std::size_t select_layer(const std::vector<double>& norms);

/// Propagates the selected head's weights into every sufficiently similar
/// head's overlap prefix: rows [0, min(m, m*)) become W* + alpha * W. The
/// selected head and all rows beyond the overlap are untouched.
MergeReport merge_task_vectors(HeadSet& heads, std::size_t selected, const AdaptConfig& cfg);

/// Plug-in mutual information (nats) between two per-sample probability
/// tables, via the batch-averaged outer-product joint. Zero cells contribute
/// zero; rows must each sum to 1 within 1e-6.
double mutual_information(const Matrix& p_star, const Matrix& p_other);

/// Average mutual information between the selected head's softmax outputs and
/// every other head's; below tau_ood the batch is flagged for skipping.
GateDecision agreement_gate(const HeadSet& heads, const Matrix& z, std::size_t selected,
                            const AdaptConfig& cfg);

/// One step of the full test-time loop: forward, gradient-norm selection,
/// agreement gate, then either inference only or an entropy-minimization
/// update on the encoder (per scope) and the selected head followed by the
/// task-vector merge. Predictions always come from the selected head.
BatchReport adapt_batch(EncoderParams& encoder, HeadSet& heads, const BatchRecord& batch,
                        const AdaptConfig& cfg);

/// The un-augmented entropy-minimization baseline: adapts the encoder (per
/// scope) and one fixed head every batch; no selection, gating, or merging.
BatchReport tent_baseline_step(EncoderParams& encoder, HeadSet& heads, std::size_t head_index,
                               const BatchRecord& batch, const AdaptConfig& cfg);

/// Predictions of one head over a feature batch (no parameter changes).
std::vector<Prediction> predict_with_head(const HeadSet& heads, const Matrix& z,
                                          std::size_t head_index, OodScoreKind score);

}  // namespace hivec
