#include "replaycl/experiment.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "replaycl/errors.hpp"

namespace replaycl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool parse_switch(const json& v, const std::string& key) {
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "on") return true;
        if (s == "off") return false;
    }
    throw config_error("config: '" + key + "' must be true/false or \"on\"/\"off\"");
}

void reject_unknown_keys(const json& j, const std::set<std::string>& known, const std::string& scope) {
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw config_error("config: unknown key '" + key + "' in " + scope);
}

DatasetSpec dataset_from_json(const json& j) {
    reject_unknown_keys(j, {"kind", "manifest", "num_classes", "per_class", "feature_dim", "frames", "separation",
                            "seed"},
                        "dataset");
    DatasetSpec spec;
    const std::string kind = j.value("kind", std::string("synthetic"));
    if (kind == "synthetic") {
        spec.kind = DatasetSpec::Kind::synthetic;
    } else if (kind == "manifest") {
        spec.kind = DatasetSpec::Kind::manifest;
        if (!j.contains("manifest")) throw config_error("config: dataset.kind=manifest requires dataset.manifest");
    } else {
        throw config_error("config: unknown dataset kind '" + kind + "'");
    }
    if (j.contains("manifest")) spec.manifest_path = j.at("manifest").get<std::string>();
    auto& syn = spec.synthetic;
    if (j.contains("num_classes")) syn.num_classes = j.at("num_classes").get<int>();
    if (j.contains("per_class")) syn.per_class = j.at("per_class").get<int>();
    if (j.contains("feature_dim")) syn.feature_dim = j.at("feature_dim").get<int>();
    if (j.contains("frames")) syn.frames = j.at("frames").get<int>();
    if (j.contains("separation")) syn.separation = j.at("separation").get<double>();
    if (j.contains("seed") && !j.at("seed").is_null()) {
        syn.seed = j.at("seed").get<std::uint64_t>();
        spec.synthetic_seed_set = true;
    }
    return spec;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
    reject_unknown_keys(j, {"dataset",       "tasks",          "classes_per_task", "pretrain_classes", "strategy",
                            "buffer_size",   "test_fraction",  "epochs",           "batch_size",       "lr",
                            "hidden_dim",    "embedding_dim",  "kd",               "temperature",      "lambda_mode",
                            "lambda_value",  "kd_t2_rescale",  "mixup",            "mixup_alpha",      "k_perturb",
                            "lambda_noise",  "suites",         "seed",             "out"},
                        "config");
    ExperimentConfig cfg;
    try {
        if (j.contains("dataset")) cfg.dataset = dataset_from_json(j.at("dataset"));
        if (j.contains("tasks")) cfg.num_tasks = j.at("tasks").get<int>();
        if (j.contains("classes_per_task")) cfg.classes_per_task = j.at("classes_per_task").get<int>();
        if (j.contains("pretrain_classes")) cfg.pretrain_classes = j.at("pretrain_classes").get<int>();
        if (j.contains("strategy")) cfg.strategy.kind = strategy_from_string(j.at("strategy").get<std::string>());
        if (j.contains("buffer_size")) cfg.buffer_size = j.at("buffer_size").get<int>();
        if (j.contains("test_fraction")) cfg.test_fraction = j.at("test_fraction").get<double>();
        if (j.contains("epochs")) cfg.train.epochs = j.at("epochs").get<int>();
        if (j.contains("batch_size")) cfg.train.batch_size = j.at("batch_size").get<int>();
        if (j.contains("lr")) cfg.train.lr = j.at("lr").get<double>();
        if (j.contains("hidden_dim")) cfg.hidden_dim = j.at("hidden_dim").get<int>();
        if (j.contains("embedding_dim")) cfg.embedding_dim = j.at("embedding_dim").get<int>();
        if (j.contains("kd")) cfg.loss.kd_enabled = parse_switch(j.at("kd"), "kd");
        if (j.contains("temperature")) cfg.loss.temperature = j.at("temperature").get<double>();
        if (j.contains("lambda_mode")) {
            const auto mode = j.at("lambda_mode").get<std::string>();
            if (mode == "auto_sqrt")
                cfg.loss.lambda_mode = LambdaMode::auto_sqrt;
            else if (mode == "fixed")
                cfg.loss.lambda_mode = LambdaMode::fixed;
            else
                throw config_error("config: unknown lambda_mode '" + mode + "'");
        }
        if (j.contains("lambda_value")) cfg.loss.lambda_value = j.at("lambda_value").get<double>();
        if (j.contains("kd_t2_rescale")) cfg.loss.kd_t2_rescale = parse_switch(j.at("kd_t2_rescale"), "kd_t2_rescale");
        if (j.contains("mixup")) cfg.loss.mixup_enabled = parse_switch(j.at("mixup"), "mixup");
        if (j.contains("mixup_alpha")) cfg.loss.mixup_alpha = j.at("mixup_alpha").get<double>();
        if (j.contains("k_perturb")) cfg.strategy.k_perturb = j.at("k_perturb").get<int>();
        if (j.contains("lambda_noise")) cfg.strategy.lambda_noise = j.at("lambda_noise").get<double>();
        if (j.contains("suites")) {
            cfg.strategy.suites.clear();
            for (const auto& name : j.at("suites")) {
                PerturbationSuite suite;
                suite.kind = perturbation_kind_from_string(name.get<std::string>());
                cfg.strategy.suites.push_back(suite);
            }
        }
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
    } catch (const json::exception& e) {
        throw config_error("config: " + std::string(e.what()));
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw config_error("config: " + std::string(e.what()));
    }
    return config_from_json(j);
}

json config_to_json(const ExperimentConfig& cfg) {
    json dataset;
    dataset["kind"] = cfg.dataset.kind == DatasetSpec::Kind::synthetic ? "synthetic" : "manifest";
    if (cfg.dataset.kind == DatasetSpec::Kind::manifest) dataset["manifest"] = cfg.dataset.manifest_path;
    dataset["num_classes"] = cfg.dataset.synthetic.num_classes;
    dataset["per_class"] = cfg.dataset.synthetic.per_class;
    dataset["feature_dim"] = cfg.dataset.synthetic.feature_dim;
    dataset["frames"] = cfg.dataset.synthetic.frames;
    dataset["separation"] = cfg.dataset.synthetic.separation;
    if (cfg.dataset.synthetic_seed_set)
        dataset["seed"] = cfg.dataset.synthetic.seed;
    else
        dataset["seed"] = nullptr;

    json j;
    j["dataset"] = dataset;
    j["tasks"] = cfg.num_tasks;
    j["classes_per_task"] = cfg.classes_per_task;
    j["pretrain_classes"] = cfg.pretrain_classes;
    j["strategy"] = to_string(cfg.strategy.kind);
    j["buffer_size"] = cfg.buffer_size;
    j["test_fraction"] = cfg.test_fraction;
    j["epochs"] = cfg.train.epochs;
    j["batch_size"] = cfg.train.batch_size;
    j["lr"] = cfg.train.lr;
    j["hidden_dim"] = cfg.hidden_dim;
    j["embedding_dim"] = cfg.embedding_dim;
    j["kd"] = cfg.loss.kd_enabled;
    j["temperature"] = cfg.loss.temperature;
    j["lambda_mode"] = cfg.loss.lambda_mode == LambdaMode::auto_sqrt ? "auto_sqrt" : "fixed";
    j["lambda_value"] = cfg.loss.lambda_value;
    j["kd_t2_rescale"] = cfg.loss.kd_t2_rescale;
    j["mixup"] = cfg.loss.mixup_enabled;
    j["mixup_alpha"] = cfg.loss.mixup_alpha;
    j["k_perturb"] = cfg.strategy.k_perturb;
    j["lambda_noise"] = cfg.strategy.lambda_noise;
    json suites = json::array();
    for (const auto& s : cfg.strategy.suites) suites.push_back(to_string(s.kind));
    j["suites"] = suites;
    j["seed"] = cfg.seed;
    j["out"] = cfg.out_dir;
    return j;
}

ExperimentConfig resolve_config(ExperimentConfig cfg) {
    if (!cfg.dataset.synthetic_seed_set) {
        cfg.dataset.synthetic.seed = cfg.seed;
        cfg.dataset.synthetic_seed_set = true;
    }
    if (cfg.strategy.kind == StrategyKind::finetune) cfg.buffer_size = 0;

    if (cfg.num_tasks < 1) throw config_error("config: tasks must be >= 1");
    if (cfg.classes_per_task < 1) throw config_error("config: classes_per_task must be >= 1");
    if (cfg.pretrain_classes < 0) throw config_error("config: pretrain_classes must be >= 0");
    if (cfg.buffer_size < 0) throw config_error("config: buffer_size must be >= 0");
    if (!(cfg.test_fraction > 0.0) || !(cfg.test_fraction < 1.0))
        throw config_error("config: test_fraction must be in (0, 1)");
    if (cfg.train.epochs < 0) throw config_error("config: epochs must be >= 0");
    if (cfg.train.batch_size < 1) throw config_error("config: batch_size must be >= 1");
    if (!(cfg.train.lr > 0.0)) throw config_error("config: lr must be > 0");
    if (cfg.hidden_dim < 1 || cfg.embedding_dim < 1) throw config_error("config: model dims must be >= 1");
    if (!(cfg.loss.temperature > 0.0)) throw config_error("config: temperature must be > 0");
    if (cfg.loss.lambda_value < 0.0 || cfg.loss.lambda_value > 1.0)
        throw config_error("config: lambda_value must lie in [0, 1]");
    if (!(cfg.loss.mixup_alpha > 0.0)) throw config_error("config: mixup_alpha must be > 0");
    if (cfg.strategy.k_perturb < 1) throw config_error("config: k_perturb must be >= 1");
    if (cfg.strategy.lambda_noise < 0.0) throw config_error("config: lambda_noise must be >= 0");
    if (cfg.strategy.suites.empty()) throw config_error("config: at least one perturbation suite required");
    if (cfg.dataset.kind == DatasetSpec::Kind::synthetic) {
        const auto& syn = cfg.dataset.synthetic;
        if (syn.num_classes < 1 || syn.per_class < 2 || syn.feature_dim < 1 || syn.frames < 1)
            throw config_error("config: synthetic dataset needs num_classes/feature_dim/frames >= 1, per_class >= 2");
        if (!(syn.separation > 0.0)) throw config_error("config: separation must be > 0");
        const long needed = static_cast<long>(cfg.pretrain_classes) +
                            static_cast<long>(cfg.num_tasks) * cfg.classes_per_task;
        if (needed > syn.num_classes)
            throw config_error("config: schedule needs " + std::to_string(needed) + " classes, dataset has " +
                               std::to_string(syn.num_classes));
    }
    if (cfg.out_dir.empty()) throw config_error("config: out directory must not be empty");
    return cfg;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path.string());
    out << text;
    if (!out) throw io_error("write failed: " + path.string());
}

json report_to_json(const TaskReport& r) {
    json j;
    j["task"] = r.task;
    j["n_train"] = r.n_train;
    j["n_buffer"] = r.n_buffer;
    json per_class = json::object();
    for (const auto& [cls, a] : r.per_class_accuracy) per_class[std::to_string(cls)] = a;
    j["per_class_accuracy"] = per_class;
    j["overall_accuracy"] = r.overall_accuracy;
    j["row_accuracies"] = r.row_accuracies;
    j["epoch_losses"] = r.epoch_losses;
    j["wall_time_s"] = r.wall_time_s;
    j["scoring_wall_time_s"] = r.scoring_wall_time_s;
    j["backbone_calls"] = r.backbone_calls;
    j["head_calls"] = r.head_calls;
    j["scoring_backbone_calls"] = r.scoring_backbone_calls;
    j["scoring_head_calls"] = r.scoring_head_calls;
    return j;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& raw) {
    const ExperimentConfig cfg = resolve_config(raw);
    const auto t_start = std::chrono::steady_clock::now();

    const fs::path out_dir(cfg.out_dir);
    fs::create_directories(out_dir);
    write_text(out_dir / "resolved_config.json", config_to_json(cfg).dump(2) + "\n");
    write_text(out_dir / "run_status.json", json{{"status", "running"}}.dump(2) + "\n");

    try {
        const Dataset dataset = cfg.dataset.kind == DatasetSpec::Kind::synthetic
                                    ? make_synthetic(cfg.dataset.synthetic)
                                    : load_manifest(cfg.dataset.manifest_path);
        const long needed =
            static_cast<long>(cfg.pretrain_classes) + static_cast<long>(cfg.num_tasks) * cfg.classes_per_task;
        if (needed > dataset.num_classes)
            throw config_error("config: schedule needs " + std::to_string(needed) + " classes, dataset has " +
                               std::to_string(dataset.num_classes));

        const TaskSchedule schedule =
            split_schedule(dataset.num_classes, cfg.num_tasks, cfg.classes_per_task, cfg.pretrain_classes, cfg.seed);
        const TaskSplit split = make_task_batches(dataset, schedule, cfg.test_fraction, cfg.seed);

        ClassifierConfig model_cfg;
        model_cfg.input_dim = dataset.feature_dim();
        model_cfg.hidden_dim = cfg.hidden_dim;
        model_cfg.embedding_dim = cfg.embedding_dim;
        model_cfg.seed = derive_seed({cfg.seed, fnv1a64("model")});
        TrainerState state(model_cfg, cfg.buffer_size, cfg.num_tasks);

        RunResult result;
        result.out_dir = cfg.out_dir;
        std::ofstream tasks_out(out_dir / "tasks.jsonl");
        if (!tasks_out) throw io_error("cannot write tasks.jsonl");

        if (!split.pretrain_train.empty()) {
            const TaskReport report = run_pretrain(state, split, cfg.strategy, cfg.loss, cfg.train, cfg.seed);
            tasks_out << report_to_json(report).dump() << '\n';
            result.reports.push_back(report);
        }
        for (const auto& batch : split.batches) {
            const TaskReport report = run_task(state, schedule, batch, cfg.strategy, cfg.loss, cfg.train, cfg.seed);
            tasks_out << report_to_json(report).dump() << '\n';
            result.reports.push_back(report);
        }
        tasks_out.flush();
        if (!tasks_out) throw io_error("write failed: tasks.jsonl");

        result.acc = acc(state.matrix);
        if (cfg.num_tasks >= 2) result.bwt = bwt(state.matrix);
        result.total_backbone_calls = state.classifier.counters().backbone_calls;
        result.total_head_calls = state.classifier.counters().head_calls;
        for (const auto& r : result.reports) {
            result.scoring_backbone_calls += r.scoring_backbone_calls;
            result.scoring_head_calls += r.scoring_head_calls;
            result.scoring_wall_time_s += r.scoring_wall_time_s;
        }
        result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

        write_text(out_dir / "acc_matrix.csv", state.matrix.to_csv());
        json summary;
        summary["strategy"] = to_string(cfg.strategy.kind);
        summary["seed"] = cfg.seed;
        summary["num_tasks"] = cfg.num_tasks;
        summary["acc"] = result.acc;
        if (result.bwt)
            summary["bwt"] = *result.bwt;
        else
            summary["bwt"] = nullptr;
        summary["total_backbone_calls"] = result.total_backbone_calls;
        summary["total_head_calls"] = result.total_head_calls;
        summary["scoring_backbone_calls"] = result.scoring_backbone_calls;
        summary["scoring_head_calls"] = result.scoring_head_calls;
        summary["wall_time_s"] = result.wall_time_s;
        summary["scoring_wall_time_s"] = result.scoring_wall_time_s;
        write_text(out_dir / "summary.json", summary.dump(2) + "\n");

        save_buffer(state.buffer, to_string(cfg.strategy.kind), (out_dir / "buffer.json").string());
        save_checkpoint(state.classifier, (out_dir / "model.ckpt").string());
        write_text(out_dir / "run_status.json", json{{"status", "complete"}}.dump(2) + "\n");
        return result;
    } catch (const std::exception& e) {
        // Flag whatever was written so far as incomplete; never mask the
        // original error with a secondary write failure.
        try {
            write_text(out_dir / "run_status.json",
                       json{{"status", "incomplete"}, {"error", std::string(e.what())}}.dump(2) + "\n");
        } catch (...) {
        }
        throw;
    }
}

std::vector<CompareRow> compare_experiments(const ExperimentConfig& base, const std::vector<std::string>& strategies) {
    if (strategies.empty()) throw config_error("compare: no strategies given");
    // Validate every strategy name before any computation starts.
    std::vector<StrategyKind> kinds;
    for (const auto& name : strategies) kinds.push_back(strategy_from_string(name));

    const fs::path out_dir(base.out_dir);
    fs::create_directories(out_dir);

    std::vector<CompareRow> rows;
    for (std::size_t i = 0; i < strategies.size(); ++i) {
        ExperimentConfig cfg = base;
        cfg.strategy.kind = kinds[i];
        cfg.out_dir = (out_dir / strategies[i]).string();
        CompareRow row;
        row.strategy = strategies[i];
        try {
            row.result = run_experiment(cfg);
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }

    char buf[64];
    std::string csv = "strategy,acc,bwt,backbone_calls,scoring_backbone_calls,wall_time_s,scoring_wall_time_s,status\n";
    for (const auto& row : rows) {
        csv += row.strategy;
        if (row.result) {
            std::snprintf(buf, sizeof(buf), ",%.17g", row.result->acc);
            csv += buf;
            if (row.result->bwt) {
                std::snprintf(buf, sizeof(buf), ",%.17g", *row.result->bwt);
                csv += buf;
            } else {
                csv += ",";
            }
            std::snprintf(buf, sizeof(buf), ",%llu,%llu,%.6f,%.6f",
                          static_cast<unsigned long long>(row.result->total_backbone_calls),
                          static_cast<unsigned long long>(row.result->scoring_backbone_calls), row.result->wall_time_s,
                          row.result->scoring_wall_time_s);
            csv += buf;
            csv += ",ok\n";
        } else {
            std::string msg = row.error;
            for (auto& c : msg)
                if (c == ',' || c == '\n') c = ' ';
            csv += ",,,,,,,error: " + msg + "\n";
        }
    }
    write_text(out_dir / "comparison.csv", csv);
    return rows;
}

}  // namespace replaycl
