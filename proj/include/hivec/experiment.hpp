#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hivec/checkpoint.hpp"
#include "hivec/config.hpp"
#include "hivec/metrics.hpp"

namespace hivec {

enum class SweepAxis { BatchSize, OutlierRatio, Severity };

SweepAxis parse_axis(const std::string& name);
std::string axis_name(SweepAxis axis);

/// Splitmix-derived child seed so the source set, target set, shift draws and
/// stream order all get unrelated deterministic streams from one run seed.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag);

/// Source/target generation as the CLI materializes it. Features pass
/// through the HVDS f32 quantization so in-memory and on-disk pipelines
/// agree bit-exactly.
Dataset build_source_dataset(const ExperimentConfig& cfg, std::uint64_t seed);
Dataset build_target_dataset(const ExperimentConfig& cfg, std::uint64_t seed);
std::vector<BatchRecord> build_stream(const ExperimentConfig& cfg, const Dataset& target,
                                      std::uint64_t seed);

struct TrainedModel {
    EncoderParams encoder;
    HeadSet heads;
    std::vector<EpochStats> trace;
};

TrainedModel train_model(const ExperimentConfig& cfg, const Dataset& source, std::uint64_t seed);

/// One telemetry line per test batch.
struct TelemetryRow {
    std::size_t batch_index = 0;
    std::size_t selected_dim = 0;
    std::vector<double> grad_norms;
    std::optional<double> i_avg;
    bool skipped = false;
    std::vector<std::size_t> merged_dims;
    std::optional<double> batch_accuracy;  // absent for batches with no inliers
};

struct StreamResult {
    MetricsSummary metrics;
    std::vector<TelemetryRow> telemetry;
};

/// Runs one method over a stream online (predict-then-count per batch),
/// mutating the passed model in place.
StreamResult run_stream(Method method, EncoderParams& encoder, HeadSet& heads,
                        const std::vector<BatchRecord>& stream, const AdaptConfig& cfg,
                        std::size_t ece_bins, std::optional<std::size_t> group_count);

std::string metrics_json(const MetricsSummary& m);
std::string telemetry_jsonl(const std::vector<TelemetryRow>& rows);

// Output layout helpers (all under cfg.out_dir).
std::string seed_dir(const ExperimentConfig& cfg, std::uint64_t seed);
std::string source_path(const ExperimentConfig& cfg, std::uint64_t seed);
std::string target_path(const ExperimentConfig& cfg, std::uint64_t seed);
std::string model_path(const ExperimentConfig& cfg, std::uint64_t seed);
std::string trace_path(const ExperimentConfig& cfg, std::uint64_t seed);
std::string metrics_path(const ExperimentConfig& cfg, std::uint64_t seed, Method method);
std::string telemetry_path(const ExperimentConfig& cfg, std::uint64_t seed, Method method);
std::string ablation_path(const ExperimentConfig& cfg);
std::string sweep_path(const ExperimentConfig& cfg, SweepAxis axis);

/// CLI entry points; deterministic functions of (config, seeds).
void cmd_gen_data(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_adapt(const ExperimentConfig& cfg);
void cmd_ablate(const ExperimentConfig& cfg);
void cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis);

/// Worker count for independent experiment cells: hardware concurrency
/// capped by the HIVEC_THREADS environment variable.
std::size_t cell_parallelism(std::size_t cells);

}  // namespace hivec
