#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hivec/config.hpp"
#include "hivec/experiment.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string method;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Config file (TOML-style sections)");
    cmd->add_option("--seed", args.seed, "Run a single seed instead of run.seeds");
    cmd->add_option("--out", args.out_dir, "Output directory (overrides run.out)");
    cmd->add_option("--method", args.method, "Adaptation method (overrides adapt.method)");
    cmd->add_option("--override", args.overrides, "Config override section.key=value")
        ->take_all();
}

hivec::ExperimentConfig resolve_config(const CommonArgs& args) {
    hivec::ExperimentConfig cfg = args.config_path.empty()
                                      ? hivec::ExperimentConfig{}
                                      : hivec::load_config_file(args.config_path);
    for (const std::string& ov : args.overrides) hivec::apply_override(cfg, ov);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (!args.method.empty()) cfg.method = hivec::parse_method(args.method);
    if (args.seed) cfg.seeds = {*args.seed};
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hi-Vec test-time adaptation harness"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, adapt_args, ablate_args, sweep_args;
    std::string axis = "outlier-ratio";

    CLI::App* gen = app.add_subcommand("gen-data", "Generate HVDS source/target datasets");
    add_common(gen, gen_args);
    CLI::App* train = app.add_subcommand("train", "Train the source model (HVMC checkpoint)");
    add_common(train, train_args);
    CLI::App* adapt = app.add_subcommand("adapt", "Run one adaptation method over the stream");
    add_common(adapt, adapt_args);
    CLI::App* ablate = app.add_subcommand("ablate", "Component ablation grid (DS / +TV / +HLA)");
    add_common(ablate, ablate_args);
    CLI::App* sweep = app.add_subcommand("sweep", "Sweep one axis over methods and seeds");
    add_common(sweep, sweep_args);
    sweep->add_option("--axis", axis, "batch-size, outlier-ratio or severity");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            hivec::cmd_gen_data(resolve_config(gen_args));
        } else if (train->parsed()) {
            hivec::cmd_train(resolve_config(train_args));
        } else if (adapt->parsed()) {
            hivec::cmd_adapt(resolve_config(adapt_args));
        } else if (ablate->parsed()) {
            hivec::cmd_ablate(resolve_config(ablate_args));
        } else if (sweep->parsed()) {
            hivec::cmd_sweep(resolve_config(sweep_args), hivec::parse_axis(axis));
        }
    } catch (const hivec::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const hivec::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
