#include "hivec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hivec {

double accuracy(const EvalAccumulator& acc) {
    std::size_t inliers = 0, correct = 0;
    for (const EvalRecord& r : acc.records) {
        if (r.outlier) continue;
        ++inliers;
        if (r.prediction == r.true_label) ++correct;
    }
    if (inliers == 0) {
        throw std::invalid_argument("accuracy: no inlier records to score");
    }
    return static_cast<double>(correct) / static_cast<double>(inliers);
}

double auroc(const std::vector<double>& scores_inlier, const std::vector<double>& scores_outlier) {
    if (scores_inlier.empty() || scores_outlier.empty()) {
        throw std::invalid_argument("auroc: both score lists must be non-empty");
    }
    // Mann-Whitney via sorting the outlier side once; for each inlier score,
    // wins = outliers strictly below, ties count half.
    std::vector<double> sorted_out = scores_outlier;
    std::sort(sorted_out.begin(), sorted_out.end());
    double wins = 0.0;
    for (double s : scores_inlier) {
        const auto lo = std::lower_bound(sorted_out.begin(), sorted_out.end(), s);
        const auto hi = std::upper_bound(lo, sorted_out.end(), s);
        wins += static_cast<double>(lo - sorted_out.begin());
        wins += 0.5 * static_cast<double>(hi - lo);
    }
    return wins / (static_cast<double>(scores_inlier.size()) *
                   static_cast<double>(sorted_out.size()));
}

double h_score(double acc, double auc) {
    if (acc < 0.0 || acc > 1.0 || auc < 0.0 || auc > 1.0) {
        throw std::invalid_argument("h_score: inputs must be fractions in [0, 1]");
    }
    if (acc == 0.0 && auc == 0.0) return 0.0;
    return 2.0 * acc * auc / (acc + auc);
}

double ece(const EvalAccumulator& acc, std::size_t bins) {
    if (bins < 1) throw std::invalid_argument("ece: need at least one bin");
    std::vector<double> conf_sum(bins, 0.0);
    std::vector<std::size_t> hits(bins, 0), counts(bins, 0);
    std::size_t total = 0;
    for (const EvalRecord& r : acc.records) {
        if (r.outlier) continue;
        if (r.confidence < 0.0 || r.confidence > 1.0) {
            throw std::invalid_argument("ece: confidence " + std::to_string(r.confidence) +
                                        " outside [0, 1]");
        }
        // Bins partition (0, 1]; an exact zero lands in the first bin.
        std::size_t b = 0;
        if (r.confidence > 0.0) {
            b = static_cast<std::size_t>(
                std::ceil(r.confidence * static_cast<double>(bins))) - 1;
            b = std::min(b, bins - 1);
        }
        conf_sum[b] += r.confidence;
        counts[b] += 1;
        if (r.prediction == r.true_label) hits[b] += 1;
        ++total;
    }
    if (total == 0) return 0.0;
    double e = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
        if (counts[b] == 0) continue;
        const double acc_b = static_cast<double>(hits[b]) / static_cast<double>(counts[b]);
        const double conf_b = conf_sum[b] / static_cast<double>(counts[b]);
        e += static_cast<double>(counts[b]) / static_cast<double>(total) *
             std::abs(acc_b - conf_b);
    }
    return e;
}

double worst_group_accuracy(const EvalAccumulator& acc, std::size_t group_count) {
    if (group_count == 0) throw std::invalid_argument("worst_group_accuracy: no groups declared");
    std::vector<std::size_t> hits(group_count, 0), counts(group_count, 0);
    for (const EvalRecord& r : acc.records) {
        if (r.outlier || r.group_label == 255) continue;
        if (r.group_label >= group_count) {
            throw std::invalid_argument("worst_group_accuracy: group label " +
                                        std::to_string(r.group_label) + " outside declared " +
                                        std::to_string(group_count));
        }
        counts[r.group_label] += 1;
        if (r.prediction == r.true_label) hits[r.group_label] += 1;
    }
    double worst = 1.0;
    for (std::size_t g = 0; g < group_count; ++g) {
        if (counts[g] == 0) {
            throw std::invalid_argument("worst_group_accuracy: group " + std::to_string(g) +
                                        " has no records");
        }
        worst = std::min(worst, static_cast<double>(hits[g]) / static_cast<double>(counts[g]));
    }
    return worst;
}

std::pair<std::vector<double>, std::vector<double>> split_scores(const EvalAccumulator& acc) {
    std::vector<double> inl, outl;
    for (const EvalRecord& r : acc.records) {
        (r.outlier ? outl : inl).push_back(r.ood_score);
    }
    return {std::move(inl), std::move(outl)};
}

MetricsSummary summarize(const EvalAccumulator& acc, std::size_t n_batches, std::size_t n_skipped,
                         std::size_t ece_bins, std::optional<std::size_t> group_count) {
    MetricsSummary s;
    s.acc = accuracy(acc);
    s.ece_value = ece(acc, ece_bins);
    auto [inl, outl] = split_scores(acc);
    if (!inl.empty() && !outl.empty()) {
        s.auc = auroc(inl, outl);
        s.h = h_score(s.acc, *s.auc);
    }
    if (group_count) {
        s.worst_group = worst_group_accuracy(acc, *group_count);
    }
    s.n_batches = n_batches;
    s.n_skipped = n_skipped;
    return s;
}

}  // namespace hivec
