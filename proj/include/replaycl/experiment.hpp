#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "replaycl/learn.hpp"

namespace replaycl {

struct DatasetSpec {
    enum class Kind { synthetic, manifest };
    Kind kind = Kind::synthetic;
    std::string manifest_path;
    SyntheticSpec synthetic;
    bool synthetic_seed_set = false;  // when false the run seed is used
};

// Fully resolved experiment description. JSON keys mirror the CLI flag names.
struct ExperimentConfig {
    DatasetSpec dataset;
    int num_tasks = 5;
    int classes_per_task = 2;
    int pretrain_classes = 0;
    StrategySpec strategy;
    int buffer_size = 100;
    double test_fraction = 0.2;
    LossConfig loss;
    TrainOptions train;
    int hidden_dim = 64;
    int embedding_dim = 32;
    std::uint64_t seed = 1;
    std::string out_dir = "runs/out";
};

ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& config);

// Fills derived fields (dataset seed, forced zero buffer for finetune) and
// checks all cross-field constraints. Throws config_error.
ExperimentConfig resolve_config(ExperimentConfig config);

struct RunResult {
    double acc = 0.0;
    std::optional<double> bwt;
    std::uint64_t total_backbone_calls = 0;
    std::uint64_t total_head_calls = 0;
    std::uint64_t scoring_backbone_calls = 0;
    std::uint64_t scoring_head_calls = 0;
    double wall_time_s = 0.0;
    double scoring_wall_time_s = 0.0;
    std::vector<TaskReport> reports;
    std::string out_dir;
};

// Executes the full task sequence and writes resolved_config.json,
// tasks.jsonl, acc_matrix.csv, summary.json, buffer.json, model.ckpt and
// run_status.json into the output directory.
RunResult run_experiment(const ExperimentConfig& config);

struct CompareRow {
    std::string strategy;
    std::optional<RunResult> result;
    std::string error;  // empty on success
};

// Runs every strategy under identical data and seed, one subdirectory per
// strategy, and writes comparison.csv into the base output directory.
std::vector<CompareRow> compare_experiments(const ExperimentConfig& base, const std::vector<std::string>& strategies);

}  // namespace replaycl
