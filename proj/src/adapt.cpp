#include "hivec/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hivec {

void AdaptConfig::validate() const {
    if (!(alpha >= 0.0) || std::isnan(alpha)) {
        throw std::invalid_argument("AdaptConfig: alpha must be >= 0");
    }
    if (std::isnan(tau)) throw std::invalid_argument("AdaptConfig: tau must not be NaN");
    if (std::isnan(tau_ood) || tau_ood < 0.0) {
        throw std::invalid_argument("AdaptConfig: tau_ood must be >= 0");
    }
    if (std::isnan(lr) || lr < 0.0 || std::isinf(lr)) {
        throw std::invalid_argument("AdaptConfig: lr must be a finite non-negative value");
    }
    if (batch_size < 1) throw std::invalid_argument("AdaptConfig: batch_size must be >= 1");
    if (norm_mode == NormMode::TrainStats) {
        throw std::invalid_argument(
            "AdaptConfig: test-time normalization must be batch-stats or running-stats");
    }
}

std::vector<double> head_grad_norms(const HeadSet& heads, const Matrix& z) {
    if (z.rows == 0) throw std::invalid_argument("head_grad_norms: empty batch");
    std::vector<double> norms;
    norms.reserve(heads.size());
    for (std::size_t i = 0; i < heads.size(); ++i) {
        const std::size_t m = heads.dims[i];
        const Matrix logits = head_logits(heads, z, i);
        const LossResult el = entropy_loss(logits);
        // dL/dW = z_prefix^T . grad_logits; no encoder pass needed.
        double sq = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            for (std::size_t c = 0; c < heads.class_count; ++c) {
                double acc = 0.0;
                for (std::size_t r = 0; r < z.rows; ++r) {
                    acc += z(r, k) * el.grad_logits(r, c);
                }
                sq += acc * acc;
            }
        }
        norms.push_back(std::sqrt(sq));
    }
    return norms;
}

std::size_t select_layer(const std::vector<double>& norms) {
    if (norms.empty()) throw std::invalid_argument("select_layer: empty norm list");
    std::size_t best = 0;
    for (std::size_t i = 0; i < norms.size(); ++i) {
        if (std::isnan(norms[i])) {
            throw std::domain_error("select_layer: NaN gradient norm at head " +
                                    std::to_string(i));
        }
        if (norms[i] < norms[best]) best = i;  // strict < keeps ties at the smaller dim
    }
    return best;
}

MergeReport merge_task_vectors(HeadSet& heads, std::size_t selected, const AdaptConfig& cfg) {
    if (selected >= heads.size()) {
        throw std::out_of_range("merge_task_vectors: head index " + std::to_string(selected));
    }
    MergeReport report;
    report.selected = selected;
    report.similarities.assign(heads.size(), 0.0);
    report.similarities[selected] = 1.0;

    // Task vectors are the current weights; all similarities are taken before
    // any head is rewritten.
    const Matrix& w_star = heads.weights[selected];
    for (std::size_t i = 0; i < heads.size(); ++i) {
        if (i == selected) continue;
        double sim = 0.0;
        try {
            sim = cosine_sim_padded(w_star, heads.weights[i]);
        } catch (const std::domain_error&) {
            sim = 0.0;  // an all-zero head is never merged into
        }
        report.similarities[i] = sim;
        if (sim > cfg.tau) {
            report.merged_into.push_back(i);
            report.prefix_lengths.push_back(std::min(heads.dims[i], heads.dims[selected]));
        }
    }

    for (std::size_t s = 0; s < report.merged_into.size(); ++s) {
        const std::size_t i = report.merged_into[s];
        const std::size_t overlap = report.prefix_lengths[s];
        Matrix& w = heads.weights[i];
        for (std::size_t r = 0; r < overlap; ++r) {
            for (std::size_t c = 0; c < heads.class_count; ++c) {
                w(r, c) = w_star(r, c) + cfg.alpha * w(r, c);
            }
        }
    }
    return report;
}

double mutual_information(const Matrix& p_star, const Matrix& p_other) {
    if (p_star.rows == 0 || p_star.rows != p_other.rows) {
        throw std::invalid_argument("mutual_information: batches must be non-empty and aligned (" +
                                    p_star.shape_str() + " vs " + p_other.shape_str() + ")");
    }
    auto check_rows = [](const Matrix& p, const char* which) {
        for (std::size_t r = 0; r < p.rows; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < p.cols; ++c) {
                const double v = p(r, c);
                if (v < 0.0) {
                    throw std::domain_error(std::string("mutual_information: negative entry in ") +
                                            which);
                }
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-6) {
                throw std::domain_error(std::string("mutual_information: row of ") + which +
                                        " sums to " + std::to_string(sum));
            }
        }
    };
    check_rows(p_star, "p_star");
    check_rows(p_other, "p_other");

    // Soft joint: batch average of per-sample outer products.
    const std::size_t n1 = p_star.cols, n2 = p_other.cols;
    Matrix joint(n1, n2);
    const double inv_b = 1.0 / static_cast<double>(p_star.rows);
    for (std::size_t r = 0; r < p_star.rows; ++r) {
        for (std::size_t i = 0; i < n1; ++i) {
            const double ps = p_star(r, i);
            if (ps == 0.0) continue;
            for (std::size_t j = 0; j < n2; ++j) {
                joint(i, j) += ps * p_other(r, j) * inv_b;
            }
        }
    }

    std::vector<double> row_marginal(n1, 0.0), col_marginal(n2, 0.0);
    for (std::size_t i = 0; i < n1; ++i) {
        for (std::size_t j = 0; j < n2; ++j) {
            row_marginal[i] += joint(i, j);
            col_marginal[j] += joint(i, j);
        }
    }

    double info = 0.0;
    for (std::size_t i = 0; i < n1; ++i) {
        for (std::size_t j = 0; j < n2; ++j) {
            const double p = joint(i, j);
            if (p > 0.0) info += p * std::log(p / (row_marginal[i] * col_marginal[j]));
        }
    }
    // The plug-in value is non-negative by construction; strip float noise.
    return std::max(info, 0.0);
}

GateDecision agreement_gate(const HeadSet& heads, const Matrix& z, std::size_t selected,
                            const AdaptConfig& cfg) {
    if (heads.size() < 2) {
        throw std::invalid_argument("agreement_gate: agreement needs at least 2 heads");
    }
    if (selected >= heads.size()) {
        throw std::out_of_range("agreement_gate: head index " + std::to_string(selected));
    }
    GateDecision gate;
    const Matrix p_star = softmax_rows(head_logits(heads, z, selected));
    for (std::size_t i = 0; i < heads.size(); ++i) {
        if (i == selected) continue;
        const Matrix p_other = softmax_rows(head_logits(heads, z, i));
        gate.per_head_mi.push_back(mutual_information(p_star, p_other));
    }
    double sum = 0.0;
    for (double v : gate.per_head_mi) sum += v;
    gate.i_avg = sum / static_cast<double>(gate.per_head_mi.size());
    gate.skipped = gate.i_avg < cfg.tau_ood;
    return gate;
}

std::vector<Prediction> predict_with_head(const HeadSet& heads, const Matrix& z,
                                          std::size_t head_index, OodScoreKind score) {
    const Matrix probs = softmax_rows(head_logits(heads, z, head_index));
    std::vector<Prediction> out(probs.rows);
    for (std::size_t r = 0; r < probs.rows; ++r) {
        std::size_t argmax = 0;
        for (std::size_t c = 1; c < probs.cols; ++c) {
            if (probs(r, c) > probs(r, argmax)) argmax = c;
        }
        out[r].label = static_cast<int>(argmax);
        out[r].confidence = probs(r, argmax);
        out[r].ood_score = score == OodScoreKind::NegEntropy ? -row_entropy(probs, r)
                                                             : probs(r, argmax);
    }
    return out;
}

namespace {

/// Shared entropy-minimization update on the encoder (per scope) and one
/// head; both the Hi-Vec loop and the baseline go through here so their
/// single-head behaviour is arithmetically identical.
void entropy_update(EncoderParams& encoder, HeadSet& heads, std::size_t head_index,
                    const Matrix& z, const ForwardCache& cache, const AdaptConfig& cfg) {
    const std::size_t m = heads.dims[head_index];
    const Matrix logits = head_logits(heads, z, head_index);
    const LossResult el = entropy_loss(logits);

    Matrix grad_w(m, heads.class_count);
    Matrix grad_z(z.rows, z.cols);
    const Matrix& w = heads.weights[head_index];
    for (std::size_t r = 0; r < z.rows; ++r) {
        const double* grow = el.grad_logits.data.data() + r * el.grad_logits.cols;
        const double* zrow = z.data.data() + r * z.cols;
        double* gzrow = grad_z.data.data() + r * grad_z.cols;
        for (std::size_t k = 0; k < m; ++k) {
            const double* wrow = w.data.data() + k * w.cols;
            double acc = 0.0;
            double* gwrow = grad_w.data.data() + k * grad_w.cols;
            for (std::size_t c = 0; c < heads.class_count; ++c) {
                acc += grow[c] * wrow[c];
                gwrow[c] += zrow[k] * grow[c];
            }
            gzrow[k] = acc;
        }
    }

    GradientSet grads = zero_gradients(encoder);
    encoder_backward(encoder, cache, grad_z, grads);
    sgd_step(encoder, grads, cfg.lr, cfg.scope);
    if (cfg.lr != 0.0) {
        Matrix& wh = heads.weights[head_index];
        for (std::size_t i = 0; i < wh.data.size(); ++i) wh.data[i] -= cfg.lr * grad_w.data[i];
    }
}

}  // namespace

BatchReport adapt_batch(EncoderParams& encoder, HeadSet& heads, const BatchRecord& batch,
                        const AdaptConfig& cfg) {
    cfg.validate();
    if (batch.x.rows == 0) throw std::invalid_argument("adapt_batch: empty batch");

    auto [z, cache] = encoder_forward(std::as_const(encoder), batch.x, cfg.norm_mode);

    BatchReport report;
    report.grad_norms = head_grad_norms(heads, z);
    report.selected = select_layer(report.grad_norms);
    if (cfg.enable_gate) {
        report.gate = agreement_gate(heads, z, report.selected, cfg);
    }

    if (report.gate.skipped) {
        // Inference only; parameters stay bit-identical.
        report.predictions = predict_with_head(heads, z, report.selected, cfg.ood_score);
        return report;
    }

    entropy_update(encoder, heads, report.selected, z, cache, cfg);
    if (cfg.enable_merge) {
        report.merge = merge_task_vectors(heads, report.selected, cfg);
    }

    // Algorithm order puts prediction after the update and merge.
    auto [z_post, cache_post] = encoder_forward(std::as_const(encoder), batch.x, cfg.norm_mode);
    report.predictions = predict_with_head(heads, z_post, report.selected, cfg.ood_score);
    return report;
}

BatchReport tent_baseline_step(EncoderParams& encoder, HeadSet& heads, std::size_t head_index,
                               const BatchRecord& batch, const AdaptConfig& cfg) {
    cfg.validate();
    if (head_index >= heads.size()) {
        throw std::out_of_range("tent_baseline_step: head index " + std::to_string(head_index));
    }
    if (batch.x.rows == 0) throw std::invalid_argument("tent_baseline_step: empty batch");

    auto [z, cache] = encoder_forward(std::as_const(encoder), batch.x, cfg.norm_mode);
    entropy_update(encoder, heads, head_index, z, cache, cfg);

    auto [z_post, cache_post] = encoder_forward(std::as_const(encoder), batch.x, cfg.norm_mode);

    BatchReport report;
    report.selected = head_index;
    report.predictions = predict_with_head(heads, z_post, head_index, cfg.ood_score);
    return report;
}

}  // namespace hivec
