#pragma once

#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

#include "hivec/matrix.hpp"
#include "hivec/rng.hpp"

namespace hivec {

constexpr int kOutlierLabel = -1;
constexpr std::uint8_t kNoGroup = 255;

/// A labeled feature set. Outlier samples carry label -1 and a raised flag;
/// group labels exist only for spurious-correlation data (255 otherwise).
struct Dataset {
    Matrix x;
    std::vector<int> labels;
    std::vector<std::uint8_t> outlier_flags;
    std::vector<std::uint8_t> group_labels;
    std::size_t class_count = 0;

    std::size_t size() const { return x.rows; }
    std::size_t dim() const { return x.cols; }
    void validate() const;
};

/// Source-domain generator spec: a seeded Gaussian mixture whose class means
/// are kept at least 4x the covariance scale apart so the source is learnable.
/// Means derive from `seed`; sample noise derives from `sample_seed`, so a
/// target split can share the source geometry while drawing fresh samples.
///
/// Class structure has two scales: a strong equidistant component confined to
/// a low-rank subspace (coarse, survives corruption) and a weak per-class
/// offset diffused over every input dimension (fine detail, the first thing
/// additive noise erases).
struct SourceSpec {
    std::size_t class_count = 4;
    std::size_t input_dim = 32;
    std::size_t sample_count = 4096;
    double cov_scale = 1.0;
    double mean_separation = 6.0;  // strong-component pairwise distance, in cov_scale units
    double fine_strength = 0.4;    // per-dim std of the weak offsets, in cov_scale units
    std::uint64_t seed = 0;
    std::uint64_t sample_seed = 0;  // 0 = follow seed
};

enum class ShiftKind {
    GaussianNoise,
    FeatureRotation,
    MeanShift,
    SpuriousFlip,
};

ShiftKind parse_shift_kind(const std::string& name);
std::string shift_kind_name(ShiftKind kind);

/// Severity 1-5 magnitude tables (severity 0 is the identity convention).
double noise_sigma_for_severity(int severity);
double rotation_angle_deg_for_severity(int severity);
double mean_shift_scale_for_severity(int severity);

struct ShiftSpec {
    ShiftKind kind = ShiftKind::GaussianNoise;
    int severity = 3;
    double outlier_ratio = 0.2;
    // Outlier mixture: component means are placed at least
    // outlier_separation x cov_scale away from every source mean.
    std::size_t outlier_components = 3;
    double outlier_separation = 8.0;
    // Columns negated by spurious-flip (the appended block of gen_spurious).
    std::size_t spurious_block_dim = 4;
};

/// One test batch as the adaptation loop sees it: features plus bookkeeping
/// the evaluator (never the adapter) reads.
struct BatchRecord {
    Matrix x;
    std::vector<int> true_labels;
    std::vector<std::uint8_t> outlier_flags;
    std::vector<std::uint8_t> group_labels;
    std::string shift_descriptor;
};

/// Class means used by gen_source; exposed so the outlier mixture can be
/// provably placed away from them.
std::vector<Matrix> source_class_means(const SourceSpec& spec);

Dataset gen_source(const SourceSpec& spec);

Dataset apply_shift(const Dataset& dataset, const ShiftSpec& shift, Rng& rng);

/// Splits a dataset into batches of batch_size, mixing in outlier draws from
/// the disjoint mixture at the configured ratio (nearest integer per batch,
/// ties up). Inlier samples cover the dataset exactly once in seeded-shuffled
/// order.
std::vector<BatchRecord> make_stream(const Dataset& dataset, const SourceSpec& source,
                                     const ShiftSpec& shift, std::size_t batch_size, Rng& rng);

struct SpuriousSpec {
    SourceSpec base;             // must have class_count == 2
    double correlation = 0.9;    // sign agreement prob is (1 + corr) / 2
    std::size_t block_dim = 4;   // appended spurious feature columns
    double block_strength = 2.0; // magnitude of the block's signed mean
    double block_noise = 0.5;    // jitter on the block
};

/// Two-class dataset with an appended feature block whose sign is spuriously
/// tied to the label; emits 4 group labels (class x spurious sign).
Dataset gen_spurious(const SpuriousSpec& spec);

// HVDS dataset container: magic "HVDS", u32 version, u32 N, u32 D, u32 C,
// f32 features row-major, i32 labels, u8 outlier flags, u8 group labels.
// Little-endian, bit-exact round trip.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace hivec
