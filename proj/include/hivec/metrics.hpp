#pragma once

#include <cstdint>
#include <cstddef>
#include <optional>
#include <vector>

namespace hivec {

/// One evaluated sample. Outlier-flagged records never enter accuracy or
/// calibration denominators; they only feed the AUROC outlier side.
struct EvalRecord {
    int prediction = 0;
    double confidence = 0.0;
    int true_label = 0;
    bool outlier = false;
    std::uint8_t group_label = 255;
    double ood_score = 0.0;
};

struct EvalAccumulator {
    std::vector<EvalRecord> records;

    void add(const EvalRecord& r) { records.push_back(r); }
    std::size_t size() const { return records.size(); }
};

/// Correct inlier predictions over inlier count. Throws when no inlier
/// records exist.
double accuracy(const EvalAccumulator& acc);

/// Rank-based (Mann-Whitney) AUROC with ties counted half; inliers are the
/// positive class, higher scores more inlier-like.
double auroc(const std::vector<double>& scores_inlier, const std::vector<double>& scores_outlier);

/// Harmonic mean of accuracy and AUROC; zero when both are zero.
double h_score(double acc, double auc);

/// Expected calibration error over equal-width confidence bins on (0, 1],
/// inliers only; empty bins contribute nothing.
double ece(const EvalAccumulator& acc, std::size_t bins = 15);

/// Minimum per-group accuracy over the declared groups (inliers with a group
/// label). Throws naming any empty group.
double worst_group_accuracy(const EvalAccumulator& acc, std::size_t group_count);

/// Convenience split of accumulated OOD scores by the outlier flag.
std::pair<std::vector<double>, std::vector<double>> split_scores(const EvalAccumulator& acc);

/// The metric bundle written to metrics JSON; absent values stay unset when
/// the stream provides no data for them (no outliers, no groups).
struct MetricsSummary {
    double acc = 0.0;
    std::optional<double> auc;
    std::optional<double> h;
    double ece_value = 0.0;
    std::optional<double> worst_group;
    std::size_t n_batches = 0;
    std::size_t n_skipped = 0;
};

MetricsSummary summarize(const EvalAccumulator& acc, std::size_t n_batches, std::size_t n_skipped,
                         std::size_t ece_bins, std::optional<std::size_t> group_count);

}  // namespace hivec
