#include "hivec/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

#include <json.hpp>

namespace hivec {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

SweepAxis parse_axis(const std::string& name) {
    if (name == "batch-size") return SweepAxis::BatchSize;
    if (name == "outlier-ratio") return SweepAxis::OutlierRatio;
    if (name == "severity") return SweepAxis::Severity;
    throw ConfigError("axis: expected batch-size, outlier-ratio or severity, got '" + name + "'");
}

std::string axis_name(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::BatchSize: return "batch-size";
        case SweepAxis::OutlierRatio: return "outlier-ratio";
        case SweepAxis::Severity: return "severity";
    }
    throw std::logic_error("unreachable axis");
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
    std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
    for (char c : tag) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 0x100000001b3ULL;
    }
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return h;
}

namespace {

/// Pass features through the HVDS f32 representation so generated-in-memory
/// and loaded-from-file datasets are bit-identical.
void quantize_features(Dataset& ds) {
    for (double& v : ds.x.data) v = static_cast<double>(static_cast<float>(v));
}

SpuriousSpec spurious_spec(const ExperimentConfig& cfg, std::uint64_t seed, double correlation,
                           std::size_t samples) {
    SpuriousSpec spec;
    spec.base = cfg.source_spec(seed);
    spec.base.sample_count = samples;
    spec.correlation = correlation;
    spec.block_dim = cfg.spurious_block_dim;
    spec.block_strength = cfg.spurious_block_strength;
    spec.block_noise = cfg.spurious_block_noise;
    return spec;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

void write_text_file(const std::string& path, const std::string& content) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed: " + path);
}

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

std::optional<double> batch_inlier_accuracy(const BatchRecord& batch,
                                            const std::vector<Prediction>& preds) {
    std::size_t inliers = 0, correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (batch.outlier_flags[i]) continue;
        ++inliers;
        if (preds[i].label == batch.true_labels[i]) ++correct;
    }
    if (inliers == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(inliers);
}

void accumulate(EvalAccumulator& acc, const BatchRecord& batch,
                const std::vector<Prediction>& preds) {
    for (std::size_t i = 0; i < preds.size(); ++i) {
        EvalRecord r;
        r.prediction = preds[i].label;
        r.confidence = preds[i].confidence;
        r.true_label = batch.true_labels[i];
        r.outlier = batch.outlier_flags[i] != 0;
        r.group_label = batch.group_labels[i];
        r.ood_score = preds[i].ood_score;
        acc.add(r);
    }
}

void run_parallel(std::size_t cells, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = cell_parallelism(cells);
    if (workers <= 1) {
        for (std::size_t i = 0; i < cells; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= cells) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace

std::size_t cell_parallelism(std::size_t cells) {
    std::size_t workers = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("HIVEC_THREADS")) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || cap < 1) {
            throw ConfigError("HIVEC_THREADS: expected a positive integer, got '" +
                              std::string(env) + "'");
        }
        workers = std::min<std::size_t>(workers, static_cast<std::size_t>(cap));
    }
    return std::min(workers, std::max<std::size_t>(1, cells));
}

Dataset build_source_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    Dataset ds = cfg.spurious
                     ? gen_spurious(spurious_spec(cfg, seed, cfg.source_correlation, cfg.samples))
                     : gen_source(cfg.source_spec(seed));
    quantize_features(ds);
    return ds;
}

Dataset build_target_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    // Same class geometry as the source (the run seed), fresh sample noise.
    const std::uint64_t target_sample_seed = derive_seed(seed, "target");
    Dataset ds;
    if (cfg.spurious) {
        SpuriousSpec spec =
            spurious_spec(cfg, seed, cfg.target_correlation, cfg.target_samples);
        spec.base.sample_seed = target_sample_seed;
        ds = gen_spurious(spec);
    } else {
        SourceSpec spec = cfg.source_spec(seed);
        spec.sample_count = cfg.target_samples;
        spec.sample_seed = target_sample_seed;
        Rng shift_rng(derive_seed(seed, "shift"));
        ds = apply_shift(gen_source(spec), cfg.shift, shift_rng);
    }
    quantize_features(ds);
    return ds;
}

std::vector<BatchRecord> build_stream(const ExperimentConfig& cfg, const Dataset& target,
                                      std::uint64_t seed) {
    Rng stream_rng(derive_seed(seed, "stream"));
    // The outlier mixture keys off the run-seed source spec so it stays
    // disjoint from the class means the model was trained on.
    return make_stream(target, cfg.source_spec(seed), cfg.shift, cfg.adapt.batch_size,
                       stream_rng);
}

TrainedModel train_model(const ExperimentConfig& cfg, const Dataset& source, std::uint64_t seed) {
    TrainedModel model;
    Rng init_rng(derive_seed(seed, "init"));
    model.encoder = make_encoder({source.dim(), cfg.hidden, cfg.feature_dim}, init_rng);
    model.heads =
        make_heads(cfg.resolved_head_dims(), source.class_count, cfg.feature_dim, init_rng);
    Rng train_rng(derive_seed(seed, "train"));
    model.trace = train_source(model.encoder, model.heads, source, cfg.train, train_rng);
    return model;
}

StreamResult run_stream(Method method, EncoderParams& encoder, HeadSet& heads,
                        const std::vector<BatchRecord>& stream, const AdaptConfig& cfg,
                        std::size_t ece_bins, std::optional<std::size_t> group_count) {
    StreamResult result;
    EvalAccumulator acc;
    std::size_t n_skipped = 0;

    if (method == Method::MrlZeroshot) {
        // Zero-shot per-head evaluation; the reported head is the one with
        // the best overall inlier accuracy (ties to the smaller dimension).
        const std::size_t k = heads.size();
        std::vector<EvalAccumulator> per_head(k);
        std::vector<std::vector<std::optional<double>>> per_head_batch_acc(k);
        for (const BatchRecord& batch : stream) {
            auto [z, cache] = encoder_forward(std::as_const(encoder), batch.x, cfg.norm_mode);
            for (std::size_t i = 0; i < k; ++i) {
                const auto preds = predict_with_head(heads, z, i, cfg.ood_score);
                accumulate(per_head[i], batch, preds);
                per_head_batch_acc[i].push_back(batch_inlier_accuracy(batch, preds));
            }
        }
        std::size_t best = 0;
        double best_acc = -1.0;
        for (std::size_t i = 0; i < k; ++i) {
            const double a = accuracy(per_head[i]);
            if (a > best_acc) {
                best_acc = a;
                best = i;
            }
        }
        for (std::size_t b = 0; b < stream.size(); ++b) {
            TelemetryRow row;
            row.batch_index = b;
            row.selected_dim = heads.dims[best];
            row.batch_accuracy = per_head_batch_acc[best][b];
            result.telemetry.push_back(std::move(row));
        }
        result.metrics = summarize(per_head[best], stream.size(), 0, ece_bins, group_count);
        return result;
    }

    for (std::size_t b = 0; b < stream.size(); ++b) {
        const BatchRecord& batch = stream[b];
        TelemetryRow row;
        row.batch_index = b;
        std::vector<Prediction> preds;

        switch (method) {
            case Method::Source: {
                // Frozen model; per-batch head selection, never an update.
                auto [z, cache] = encoder_forward(std::as_const(encoder), batch.x, cfg.norm_mode);
                row.grad_norms = head_grad_norms(heads, z);
                const std::size_t sel = select_layer(row.grad_norms);
                row.selected_dim = heads.dims[sel];
                preds = predict_with_head(heads, z, sel, cfg.ood_score);
                break;
            }
            case Method::Tent: {
                const BatchReport report =
                    tent_baseline_step(encoder, heads, heads.size() - 1, batch, cfg);
                row.selected_dim = heads.dims.back();
                preds = report.predictions;
                break;
            }
            case Method::HivecTent: {
                const BatchReport report = adapt_batch(encoder, heads, batch, cfg);
                row.selected_dim = heads.dims[report.selected];
                row.grad_norms = report.grad_norms;
                if (!report.gate.per_head_mi.empty()) row.i_avg = report.gate.i_avg;
                row.skipped = report.gate.skipped;
                if (report.gate.skipped) ++n_skipped;
                if (report.merge) {
                    for (std::size_t idx : report.merge->merged_into) {
                        row.merged_dims.push_back(heads.dims[idx]);
                    }
                }
                preds = report.predictions;
                break;
            }
            case Method::MrlZeroshot:
                break;  // handled above
        }

        row.batch_accuracy = batch_inlier_accuracy(batch, preds);
        accumulate(acc, batch, preds);
        result.telemetry.push_back(std::move(row));
    }

    result.metrics = summarize(acc, stream.size(), n_skipped, ece_bins, group_count);
    return result;
}

std::string metrics_json(const MetricsSummary& m) {
    ordered_json j;
    j["acc"] = m.acc;
    j["auc"] = m.auc ? ordered_json(*m.auc) : ordered_json(nullptr);
    j["h_score"] = m.h ? ordered_json(*m.h) : ordered_json(nullptr);
    j["ece"] = m.ece_value;
    j["worst_group_acc"] = m.worst_group ? ordered_json(*m.worst_group) : ordered_json(nullptr);
    j["n_batches"] = m.n_batches;
    j["n_skipped"] = m.n_skipped;
    return j.dump(2) + "\n";
}

std::string telemetry_jsonl(const std::vector<TelemetryRow>& rows) {
    std::string out;
    for (const TelemetryRow& row : rows) {
        ordered_json j;
        j["batch_index"] = row.batch_index;
        j["selected_dim"] = row.selected_dim;
        j["grad_norms"] = row.grad_norms;
        j["i_avg"] = row.i_avg ? ordered_json(*row.i_avg) : ordered_json(nullptr);
        j["skipped"] = row.skipped;
        j["merged_dims"] = row.merged_dims;
        j["batch_accuracy"] =
            row.batch_accuracy ? ordered_json(*row.batch_accuracy) : ordered_json(nullptr);
        out += j.dump();
        out += "\n";
    }
    return out;
}

std::string seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
    return cfg.out_dir + "/seed" + std::to_string(seed);
}
std::string source_path(const ExperimentConfig& cfg, std::uint64_t seed) {
    return seed_dir(cfg, seed) + "/source.hvds";
}
std::string target_path(const ExperimentConfig& cfg, std::uint64_t seed) {
    return seed_dir(cfg, seed) + "/target.hvds";
}
std::string model_path(const ExperimentConfig& cfg, std::uint64_t seed) {
    return seed_dir(cfg, seed) + "/model.hvmc";
}
std::string trace_path(const ExperimentConfig& cfg, std::uint64_t seed) {
    return seed_dir(cfg, seed) + "/train_trace.csv";
}
std::string metrics_path(const ExperimentConfig& cfg, std::uint64_t seed, Method method) {
    return seed_dir(cfg, seed) + "/metrics_" + method_name(method) + ".json";
}
std::string telemetry_path(const ExperimentConfig& cfg, std::uint64_t seed, Method method) {
    return seed_dir(cfg, seed) + "/telemetry_" + method_name(method) + ".jsonl";
}
std::string ablation_path(const ExperimentConfig& cfg) { return cfg.out_dir + "/ablation.csv"; }
std::string sweep_path(const ExperimentConfig& cfg, SweepAxis axis) {
    return cfg.out_dir + "/sweep_" + axis_name(axis) + ".csv";
}

void cmd_gen_data(const ExperimentConfig& cfg) {
    cfg.validate();
    for (std::uint64_t seed : cfg.seeds) {
        ensure_dir(seed_dir(cfg, seed));
        try {
            save_dataset(build_source_dataset(cfg, seed), source_path(cfg, seed));
            save_dataset(build_target_dataset(cfg, seed), target_path(cfg, seed));
        } catch (const std::runtime_error& e) {
            throw IoError(e.what());
        }
    }
}

namespace {

Dataset load_dataset_or_io_error(const std::string& path) {
    try {
        return load_dataset(path);
    } catch (const std::runtime_error& e) {
        throw IoError(e.what());
    }
}

std::pair<EncoderParams, HeadSet> load_model_or_io_error(const std::string& path) {
    try {
        return load_checkpoint(path);
    } catch (const std::runtime_error& e) {
        throw IoError(e.what());
    }
}

void check_compatibility(const ExperimentConfig& cfg, const EncoderParams& encoder,
                         const HeadSet& heads, const Dataset& target) {
    if (encoder.input_dim() != target.dim()) {
        throw ConfigError("checkpoint expects input dim " + std::to_string(encoder.input_dim()) +
                          " but dataset has " + std::to_string(target.dim()));
    }
    if (heads.class_count != target.class_count) {
        throw ConfigError("checkpoint has " + std::to_string(heads.class_count) +
                          " classes but dataset declares " + std::to_string(target.class_count));
    }
    (void)cfg;
}

std::optional<std::size_t> group_count_of(const ExperimentConfig& cfg) {
    return cfg.spurious ? std::optional<std::size_t>(4) : std::nullopt;
}

struct CellMetrics {
    MetricsSummary metrics;
};

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string metrics_csv_fields(const MetricsSummary& m) {
    return fmt_double(m.acc) + "," + fmt_opt(m.auc) + "," + fmt_opt(m.h) + "," +
           fmt_double(m.ece_value) + "," + fmt_opt(m.worst_group) + "," +
           std::to_string(m.n_batches) + "," + std::to_string(m.n_skipped);
}

}  // namespace

void cmd_train(const ExperimentConfig& cfg) {
    cfg.validate();
    for (std::uint64_t seed : cfg.seeds) {
        const Dataset source = load_dataset_or_io_error(source_path(cfg, seed));
        if (source.class_count != cfg.classes) {
            throw ConfigError("source dataset declares " + std::to_string(source.class_count) +
                              " classes but source.classes = " + std::to_string(cfg.classes));
        }
        TrainedModel model = train_model(cfg, source, seed);
        try {
            save_checkpoint(model.encoder, model.heads, model_path(cfg, seed));
        } catch (const std::runtime_error& e) {
            throw IoError(e.what());
        }

        std::string csv = "epoch,mean_loss";
        for (std::size_t i = 0; i < model.heads.size(); ++i) {
            csv += ",loss_head" + std::to_string(model.heads.dims[i]);
        }
        for (std::size_t i = 0; i < model.heads.size(); ++i) {
            csv += ",acc_head" + std::to_string(model.heads.dims[i]);
        }
        csv += "\n";
        for (std::size_t e = 0; e < model.trace.size(); ++e) {
            csv += std::to_string(e) + "," + fmt_double(model.trace[e].mean_loss);
            for (double l : model.trace[e].head_loss) csv += "," + fmt_double(l);
            for (double a : model.trace[e].head_accuracy) csv += "," + fmt_double(a);
            csv += "\n";
        }
        write_text_file(trace_path(cfg, seed), csv);
    }
}

void cmd_adapt(const ExperimentConfig& cfg) {
    cfg.validate();
    for (std::uint64_t seed : cfg.seeds) {
        auto [encoder, heads] = load_model_or_io_error(model_path(cfg, seed));
        const Dataset target = load_dataset_or_io_error(target_path(cfg, seed));
        check_compatibility(cfg, encoder, heads, target);

        const std::vector<BatchRecord> stream = build_stream(cfg, target, seed);
        StreamResult result = run_stream(cfg.method, encoder, heads, stream, cfg.adapt,
                                         cfg.ece_bins, group_count_of(cfg));
        write_text_file(metrics_path(cfg, seed, cfg.method), metrics_json(result.metrics));
        if (cfg.telemetry) {
            write_text_file(telemetry_path(cfg, seed, cfg.method),
                            telemetry_jsonl(result.telemetry));
        }
    }
}

void cmd_ablate(const ExperimentConfig& cfg) {
    cfg.validate();
    // Component grid from the ablation table: selection alone, selection with
    // task-vector sharing, and the full method with the agreement gate.
    struct Variant {
        const char* name;
        bool merge;
        bool gate;
    };
    const std::vector<Variant> variants = {
        {"DS", false, false}, {"DS+TV", true, false}, {"DS+TV+HLA", true, true}};

    const std::size_t cells = variants.size() * cfg.seeds.size();
    std::vector<CellMetrics> results(cells);

    run_parallel(cells, [&](std::size_t cell) {
        const std::size_t vi = cell / cfg.seeds.size();
        const std::uint64_t seed = cfg.seeds[cell % cfg.seeds.size()];
        auto [encoder, heads] = load_model_or_io_error(model_path(cfg, seed));
        const Dataset target = build_target_dataset(cfg, seed);
        check_compatibility(cfg, encoder, heads, target);
        const std::vector<BatchRecord> stream = build_stream(cfg, target, seed);

        AdaptConfig adapt = cfg.adapt;
        adapt.enable_merge = variants[vi].merge;
        adapt.enable_gate = variants[vi].gate;
        StreamResult r = run_stream(Method::HivecTent, encoder, heads, stream, adapt,
                                    cfg.ece_bins, group_count_of(cfg));
        results[cell].metrics = r.metrics;
    });

    std::string csv = "variant,seed,acc,auc,h_score,ece,worst_group_acc,n_batches,n_skipped\n";
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
        for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
            const MetricsSummary& m = results[vi * cfg.seeds.size() + si].metrics;
            csv += std::string(variants[vi].name) + "," + std::to_string(cfg.seeds[si]) + "," +
                   metrics_csv_fields(m) + "\n";
        }
    }
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
        std::vector<double> accs;
        for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
            accs.push_back(results[vi * cfg.seeds.size() + si].metrics.acc);
        }
        csv += std::string(variants[vi].name) + ",mean," + fmt_double(mean_of(accs)) +
               ",,,,,,\n";
        csv += std::string(variants[vi].name) + ",std," + fmt_double(sample_std(accs)) +
               ",,,,,,\n";
    }
    write_text_file(ablation_path(cfg), csv);
}

void cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis) {
    cfg.validate();
    std::vector<double> values;
    switch (axis) {
        case SweepAxis::BatchSize: values = {8, 16, 32}; break;
        case SweepAxis::OutlierRatio: values = {0.05, 0.1, 0.2, 0.3, 0.4, 0.5}; break;
        case SweepAxis::Severity: values = {1, 2, 3, 4, 5}; break;
    }

    const std::size_t per_value = cfg.sweep_methods.size() * cfg.seeds.size();
    const std::size_t cells = values.size() * per_value;
    std::vector<CellMetrics> results(cells);

    run_parallel(cells, [&](std::size_t cell) {
        const std::size_t value_idx = cell / per_value;
        const std::size_t rest = cell % per_value;
        const Method method = cfg.sweep_methods[rest / cfg.seeds.size()];
        const std::uint64_t seed = cfg.seeds[rest % cfg.seeds.size()];

        ExperimentConfig local = cfg;
        switch (axis) {
            case SweepAxis::BatchSize:
                local.adapt.batch_size = static_cast<std::size_t>(values[value_idx]);
                break;
            case SweepAxis::OutlierRatio:
                local.shift.outlier_ratio = values[value_idx];
                break;
            case SweepAxis::Severity:
                local.shift.severity = static_cast<int>(values[value_idx]);
                break;
        }

        auto [encoder, heads] = load_model_or_io_error(model_path(cfg, seed));
        const Dataset target = build_target_dataset(local, seed);
        check_compatibility(local, encoder, heads, target);
        const std::vector<BatchRecord> stream = build_stream(local, target, seed);
        StreamResult r = run_stream(method, encoder, heads, stream, local.adapt, local.ece_bins,
                                    group_count_of(local));
        results[cell].metrics = r.metrics;
    });

    std::string csv = "axis,value,method,seed,acc,auc,h_score,ece,worst_group_acc,n_batches,"
                      "n_skipped\n";
    for (std::size_t v = 0; v < values.size(); ++v) {
        for (std::size_t mi = 0; mi < cfg.sweep_methods.size(); ++mi) {
            for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
                const std::size_t cell = v * per_value + mi * cfg.seeds.size() + si;
                csv += axis_name(axis) + "," + fmt_double(values[v]) + "," +
                       method_name(cfg.sweep_methods[mi]) + "," +
                       std::to_string(cfg.seeds[si]) + "," +
                       metrics_csv_fields(results[cell].metrics) + "\n";
            }
        }
    }
    write_text_file(sweep_path(cfg, axis), csv);
}

}  // namespace hivec
