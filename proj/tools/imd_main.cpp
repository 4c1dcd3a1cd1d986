// Command-line front end: single runs, ablation sweeps, benchmark builds,
// toy-diffusion training, gradient checks and the quick self test.
//
// Exit codes: 0 success, 1 test/criteria failure or runtime error,
// 2 config parse error.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "imd/harness.hpp"

namespace {

struct GlobalArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";
    bool quiet = false;
};

imd::ExperimentConfig load_config(const GlobalArgs& args) {
    imd::ExperimentConfig cfg;
    if (!args.config_path.empty()) cfg = imd::config_from_file(args.config_path);
    if (args.seed) {
        cfg.seed = *args.seed;
        cfg.imd.root_seed = *args.seed;
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"iterative mask denoising laboratory"};
    app.require_subcommand(1);

    GlobalArgs args;
    app.add_option("--config", args.config_path, "experiment config (JSON)");
    app.add_option("--seed", args.seed, "root seed override");
    app.add_option("--out", args.out_dir, "output directory");
    app.add_flag("--quiet", args.quiet, "suppress progress output");

    auto* cmd_run = app.add_subcommand("run", "run one scene and emit trace artifacts");
    auto* cmd_sweep = app.add_subcommand("sweep", "run the configured sweep");
    auto* cmd_bench = app.add_subcommand("bench", "build the benchmark scene set only");
    auto* cmd_train = app.add_subcommand("train-toy", "train the toy diffusion model");
    auto* cmd_grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    auto* cmd_self = app.add_subcommand("selftest", "mask/voting/occlusion property suite");
    for (auto* sub : {cmd_run, cmd_sweep, cmd_bench, cmd_train, cmd_grad, cmd_self})
        sub->fallthrough();  // global flags may follow the subcommand name

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (cmd_run->parsed()) {
            const auto cfg = load_config(args);
            imd::run_single(cfg, args.out_dir, args.quiet);
            return 0;
        }
        if (cmd_sweep->parsed()) {
            const auto cfg = load_config(args);
            const auto report = imd::run_sweep(cfg, args.out_dir, args.quiet);
            if (!args.quiet)
                for (const auto& st : report.stats)
                    std::cout << imd::to_string(cfg.axis) << "=" << st.axis_value << " mean_iou "
                              << st.mean_final_iou << " mean_conv " << st.mean_conv_step << "\n";
            return 0;
        }
        if (cmd_bench->parsed()) {
            const auto cfg = load_config(args);
            std::filesystem::create_directories(args.out_dir);
            const auto scenes = imd::build_benchmark(cfg);
            imd::write_benchmark_json(
                scenes, (std::filesystem::path(args.out_dir) / "scenes.json").string());
            std::ofstream echo(std::filesystem::path(args.out_dir) / "config.echo.json");
            echo << imd::config_to_json(cfg).dump(2) << "\n";
            if (!args.quiet) std::cout << "bench: wrote " << scenes.size() << " scenes\n";
            return 0;
        }
        if (cmd_train->parsed()) {
            const auto cfg = load_config(args);
            imd::ToyTrainOptions opt;
            const auto result = imd::train_toy(cfg.seed, opt, args.out_dir, args.quiet);
            if (!args.quiet)
                std::cout << "train-toy: total " << result.first_total << " -> " << result.last_total
                          << "; iou complete-cond " << result.iou_complete_condition
                          << " vs partial-cond " << result.iou_partial_condition << "\n";
            return 0;
        }
        if (cmd_grad->parsed()) return imd::run_gradcheck(args.quiet) ? 0 : 1;
        if (cmd_self->parsed()) return imd::run_selftest(args.quiet) ? 0 : 1;
    } catch (const imd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
