#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hivec/adapt.hpp"
#include "hivec/heads.hpp"
#include "hivec/shift.hpp"

namespace hivec {

/// Bad configuration: unknown key, malformed value, out-of-range setting.
/// The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Filesystem trouble (missing input, unwritable output). Exit code 3.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Method {
    Source,
    MrlZeroshot,
    Tent,
    HivecTent,
};

Method parse_method(const std::string& name);
std::string method_name(Method m);

/// The whole experiment surface: every key has a default, unknown keys are
/// rejected, and CLI flags override file values.
struct ExperimentConfig {
    // [source]
    std::size_t classes = 10;
    std::size_t dim = 32;
    std::size_t samples = 4096;
    double cov_scale = 1.0;
    double separation = 6.0;
    double fine_strength = 0.4;

    // [encoder]
    std::size_t hidden = 64;
    std::size_t feature_dim = 64;

    // [heads]; empty = doubling schedule from 8 up to feature_dim
    std::vector<std::size_t> head_dims;

    // [adapt]
    Method method = Method::HivecTent;
    AdaptConfig adapt;
    std::size_t ece_bins = 15;

    // [shift]
    ShiftSpec shift;
    std::size_t target_samples = 2048;
    bool spurious = false;
    double source_correlation = 0.9;
    double target_correlation = -0.9;
    std::size_t spurious_block_dim = 4;
    double spurious_block_strength = 2.0;
    double spurious_block_noise = 0.5;

    // [run]
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::string out_dir = "out";
    TrainOptions train;
    std::vector<Method> sweep_methods = {Method::Tent, Method::HivecTent};
    bool telemetry = true;

    std::vector<std::size_t> resolved_head_dims() const;
    SourceSpec source_spec(std::uint64_t seed) const;
    void validate() const;
};

/// Parses the TOML-style config text (sections of key = value lines).
/// Unknown sections or keys raise ConfigError naming them.
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);

ExperimentConfig load_config_file(const std::string& path);

/// Applies one "section.key=value" override on top of a parsed config.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

}  // namespace hivec
