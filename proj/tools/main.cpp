#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "replaycl/errors.hpp"
#include "replaycl/experiment.hpp"

namespace {

struct Overrides {
    std::optional<std::string> config_path;
    std::vector<std::string> strategies;
    std::optional<int> buffer_size;
    std::optional<int> tasks;
    std::optional<int> classes_per_task;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::optional<std::string> kd;
    std::optional<std::string> mixup;
    std::optional<int> k_perturb;
    std::optional<double> lambda_noise;
    std::optional<std::string> out;
};

void add_common_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config_path, "Config file (JSON); flags override its values");
    cmd->add_option("--buffer-size", o.buffer_size, "Replay buffer capacity L");
    cmd->add_option("--tasks", o.tasks, "Number of incremental tasks");
    cmd->add_option("--classes-per-task", o.classes_per_task, "New classes per task");
    cmd->add_option("--seed", o.seed, "Run seed");
    cmd->add_option("--epochs", o.epochs, "Training epochs per task");
    cmd->add_option("--kd", o.kd, "Knowledge distillation: on|off")->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--mixup", o.mixup, "Mixup augmentation: on|off")->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--k-perturb", o.k_perturb, "Perturbed views per sample (K)");
    cmd->add_option("--lambda-noise", o.lambda_noise, "Embedding noise intensity");
    cmd->add_option("--out", o.out, "Output directory");
}

replaycl::ExperimentConfig build_config(const Overrides& o, bool single_strategy) {
    replaycl::ExperimentConfig cfg;
    if (o.config_path) cfg = replaycl::load_config(*o.config_path);
    if (single_strategy && !o.strategies.empty())
        cfg.strategy.kind = replaycl::strategy_from_string(o.strategies.front());
    if (o.buffer_size) cfg.buffer_size = *o.buffer_size;
    if (o.tasks) cfg.num_tasks = *o.tasks;
    if (o.classes_per_task) cfg.classes_per_task = *o.classes_per_task;
    if (o.seed) cfg.seed = *o.seed;
    if (o.epochs) cfg.train.epochs = *o.epochs;
    if (o.kd) cfg.loss.kd_enabled = (*o.kd == "on");
    if (o.mixup) cfg.loss.mixup_enabled = (*o.mixup == "on");
    if (o.k_perturb) cfg.strategy.k_perturb = *o.k_perturb;
    if (o.lambda_noise) cfg.strategy.lambda_noise = *o.lambda_noise;
    if (o.out) cfg.out_dir = *o.out;
    return cfg;
}

void print_diagnostic(const std::string& kind, const std::string& message) {
    nlohmann::json j{{"error", kind}, {"message", message}};
    std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Replay-based class-incremental continual learning runner"};
    app.require_subcommand(1);

    Overrides run_opts, compare_opts;
    std::optional<std::string> run_strategy;
    auto* run_cmd = app.add_subcommand("run", "Run one experiment");
    run_cmd->add_option("--strategy", run_strategy, "Memory update strategy");
    add_common_flags(run_cmd, run_opts);

    auto* compare_cmd = app.add_subcommand("compare", "Run several strategies on identical data");
    compare_cmd->add_option("--strategy", compare_opts.strategies,
                            "Strategy to include (repeatable; default: all six)");
    add_common_flags(compare_cmd, compare_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (run_cmd->parsed()) {
            if (run_strategy) run_opts.strategies = {*run_strategy};
            const auto cfg = build_config(run_opts, true);
            const auto result = replaycl::run_experiment(cfg);
            std::printf("run complete: acc=%.4f", result.acc);
            if (result.bwt) std::printf(" bwt=%.4f", *result.bwt);
            std::printf(" backbone_calls=%llu out=%s\n",
                        static_cast<unsigned long long>(result.total_backbone_calls), result.out_dir.c_str());
        } else {
            auto cfg = build_config(compare_opts, false);
            std::vector<std::string> strategies = compare_opts.strategies;
            if (strategies.empty())
                strategies = {"finetune", "random", "reservoir", "prototype", "uncertainty", "uncertainty_plus_plus"};
            const auto rows = replaycl::compare_experiments(cfg, strategies);
            bool any_failed = false;
            for (const auto& row : rows) {
                if (row.result) {
                    std::printf("%-22s acc=%.4f", row.strategy.c_str(), row.result->acc);
                    if (row.result->bwt) std::printf(" bwt=%.4f", *row.result->bwt);
                    std::printf("\n");
                } else {
                    any_failed = true;
                    std::printf("%-22s failed: %s\n", row.strategy.c_str(), row.error.c_str());
                }
            }
            std::printf("comparison table: %s/comparison.csv\n", cfg.out_dir.c_str());
            if (any_failed) return 1;
        }
    } catch (const replaycl::config_error& e) {
        print_diagnostic("config", e.what());
        return 2;
    } catch (const replaycl::error& e) {
        print_diagnostic("runtime", e.what());
        return 1;
    } catch (const std::exception& e) {
        print_diagnostic("internal", e.what());
        return 1;
    }
    return 0;
}
