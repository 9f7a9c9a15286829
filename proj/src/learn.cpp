#include "replaycl/learn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "replaycl/errors.hpp"

namespace replaycl {

namespace {

double log_sum_exp(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
}

void check_soft_label(const Eigen::VectorXd& soft, Eigen::Index logit_dim) {
    if (soft.size() != logit_dim) throw contract_error("loss: label dim != logits dim");
    if ((soft.array() < 0.0).any()) throw contract_error("loss: negative soft-label mass");
    if (std::abs(soft.sum() - 1.0) > 1e-9) throw contract_error("loss: soft label must sum to 1");
}

}  // namespace

double lambda_schedule(int n_prev, int n_t) {
    if (n_prev < 0 || n_t < 1 || n_prev > n_t) throw contract_error("lambda_schedule: need 0 <= n_prev <= n_t");
    if (n_prev == 0) return 1.0;
    return std::sqrt(1.0 - static_cast<double>(n_prev) / static_cast<double>(n_t));
}

double ce_loss(const Eigen::VectorXd& logits, int label) {
    if (label < 0 || label >= logits.size()) throw contract_error("ce_loss: label out of range");
    Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(logits.size());
    one_hot(label) = 1.0;
    return ce_loss(logits, one_hot);
}

double ce_loss(const Eigen::VectorXd& logits, const Eigen::VectorXd& soft_label) {
    check_soft_label(soft_label, logits.size());
    if (!logits.allFinite()) throw numeric_error("ce_loss: non-finite logits");
    return log_sum_exp(logits) - soft_label.dot(logits);
}

LossGrad ce_loss_grad(const Eigen::VectorXd& logits, const Eigen::VectorXd& soft_label) {
    LossGrad out;
    out.loss = ce_loss(logits, soft_label);
    out.dlogits = softmax_T(logits, 1.0) - soft_label;
    return out;
}

double kd_loss(const Eigen::VectorXd& student_logits, const Eigen::VectorXd& teacher_logits, int n_prev,
               double temperature, bool t2_rescale) {
    if (n_prev < 1) throw contract_error("kd_loss: n_prev must be >= 1 (skip distillation on the first task)");
    if (student_logits.size() < n_prev || teacher_logits.size() < n_prev)
        throw contract_error("kd_loss: logits cover fewer than n_prev classes");
    if (!(temperature > 0.0)) throw contract_error("kd_loss: temperature must be > 0");

    const Eigen::VectorXd s_scaled = student_logits.head(n_prev) / temperature;
    const Eigen::VectorXd p_teacher = softmax_T(teacher_logits.head(n_prev), temperature);
    const Eigen::VectorXd log_q = s_scaled.array() - log_sum_exp(s_scaled);
    double loss = -p_teacher.dot(log_q);
    if (t2_rescale) loss *= temperature * temperature;
    return loss;
}

LossGrad kd_loss_grad(const Eigen::VectorXd& student_logits, const Eigen::VectorXd& teacher_logits, int n_prev,
                      double temperature, bool t2_rescale) {
    LossGrad out;
    out.loss = kd_loss(student_logits, teacher_logits, n_prev, temperature, t2_rescale);
    const Eigen::VectorXd p_teacher = softmax_T(teacher_logits.head(n_prev), temperature);
    const Eigen::VectorXd q_student = softmax_T(student_logits.head(n_prev), temperature);
    out.dlogits = Eigen::VectorXd::Zero(student_logits.size());
    double scale = 1.0 / temperature;
    if (t2_rescale) scale *= temperature * temperature;
    out.dlogits.head(n_prev) = scale * (q_student - p_teacher);
    return out;
}

namespace {

double resolve_lambda(int n_prev, int n_t, const LossConfig& config) {
    if (n_prev == 0) return 1.0;
    if (config.lambda_mode == LambdaMode::fixed) {
        if (config.lambda_value < 0.0 || config.lambda_value > 1.0)
            throw contract_error("combined_loss: fixed lambda must lie in [0, 1]");
        return config.lambda_value;
    }
    return lambda_schedule(n_prev, n_t);
}

}  // namespace

double combined_loss(const Eigen::VectorXd& student_logits, const Eigen::VectorXd* teacher_logits,
                     const Eigen::VectorXd& soft_label, int n_prev, int n_t, const LossConfig& config) {
    if (n_prev > n_t) throw contract_error("combined_loss: n_prev > n_t");
    const double ce = ce_loss(student_logits, soft_label);
    if (!config.kd_enabled || n_prev == 0) return ce;
    if (teacher_logits == nullptr) throw contract_error("combined_loss: teacher required when n_prev > 0");
    const double lambda = resolve_lambda(n_prev, n_t, config);
    return lambda * ce + (1.0 - lambda) * kd_loss(student_logits, *teacher_logits, n_prev, config.temperature,
                                                  config.kd_t2_rescale);
}

LossGrad combined_loss_grad(const Eigen::VectorXd& student_logits, const Eigen::VectorXd* teacher_logits,
                            const Eigen::VectorXd& soft_label, int n_prev, int n_t, const LossConfig& config) {
    if (n_prev > n_t) throw contract_error("combined_loss: n_prev > n_t");
    LossGrad ce = ce_loss_grad(student_logits, soft_label);
    if (!config.kd_enabled || n_prev == 0) return ce;
    if (teacher_logits == nullptr) throw contract_error("combined_loss: teacher required when n_prev > 0");
    const double lambda = resolve_lambda(n_prev, n_t, config);
    const LossGrad kd = kd_loss_grad(student_logits, *teacher_logits, n_prev, config.temperature, config.kd_t2_rescale);
    LossGrad out;
    out.loss = lambda * ce.loss + (1.0 - lambda) * kd.loss;
    out.dlogits = lambda * ce.dlogits + (1.0 - lambda) * kd.dlogits;
    return out;
}

TrainItem mixup_with_coeff(const TrainItem& a, const TrainItem& b, double m) {
    if (a.features.rows() != b.features.rows() || a.features.cols() != b.features.cols())
        throw contract_error("mixup: feature shape mismatch");
    if (a.soft_label.size() != b.soft_label.size()) throw contract_error("mixup: label dim mismatch");
    if (m < 0.0 || m > 1.0) throw contract_error("mixup: coefficient outside [0, 1]");
    TrainItem out;
    out.features = m * a.features + (1.0 - m) * b.features;
    out.soft_label = m * a.soft_label + (1.0 - m) * b.soft_label;
    return out;
}

TrainItem mixup(const TrainItem& a, const TrainItem& b, double alpha, Rng& rng) {
    if (!(alpha > 0.0)) throw contract_error("mixup: alpha must be > 0");
    return mixup_with_coeff(a, b, rng.beta(alpha, alpha));
}

void apply_mixup_batch(std::vector<TrainItem>& batch, double alpha, Rng& rng) {
    if (batch.empty()) return;
    const std::vector<TrainItem> sources = batch;
    for (auto& item : batch) {
        const auto partner = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(sources.size()) - 1));
        item = mixup(item, sources[partner], alpha, rng);
    }
}

std::string to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::finetune: return "finetune";
        case StrategyKind::random: return "random";
        case StrategyKind::reservoir: return "reservoir";
        case StrategyKind::prototype: return "prototype";
        case StrategyKind::uncertainty: return "uncertainty";
        case StrategyKind::uncertainty_plus_plus: return "uncertainty_plus_plus";
    }
    throw contract_error("unknown strategy kind");
}

StrategyKind strategy_from_string(const std::string& name) {
    if (name == "finetune") return StrategyKind::finetune;
    if (name == "random") return StrategyKind::random;
    if (name == "reservoir") return StrategyKind::reservoir;
    if (name == "prototype") return StrategyKind::prototype;
    if (name == "uncertainty") return StrategyKind::uncertainty;
    if (name == "uncertainty_plus_plus") return StrategyKind::uncertainty_plus_plus;
    throw config_error("unknown strategy: " + name);
}

int TrainerState::slot_of(int dataset_class) const {
    const auto it = class_to_slot.find(dataset_class);
    if (it == class_to_slot.end())
        throw contract_error("TrainerState: class " + std::to_string(dataset_class) + " not registered");
    return it->second;
}

void TrainerState::register_classes(const std::vector<int>& classes) {
    for (int c : classes) {
        if (class_to_slot.count(c)) throw contract_error("TrainerState: class " + std::to_string(c) + " already registered");
        class_to_slot[c] = static_cast<int>(slot_to_class.size());
        slot_to_class.push_back(c);
    }
}

namespace {

std::vector<TrainItem> to_train_items(const TrainerState& state, const std::vector<Sample>& pool, int n_t) {
    std::vector<TrainItem> items;
    items.reserve(pool.size());
    for (const auto& s : pool) items.push_back(make_train_item(s, n_t, state.slot_of(s.label)));
    return items;
}

LossGradFn make_loss_fn(const TrainerState& state, const LossConfig& cfg, int n_prev, int n_t) {
    const bool use_kd = cfg.kd_enabled && n_prev > 0;
    const ModelSnapshot* teacher = use_kd ? &*state.teacher : nullptr;
    return [teacher, cfg, n_prev, n_t](const TrainItem& item, const Eigen::VectorXd& logits) {
        if (teacher == nullptr) return combined_loss_grad(logits, nullptr, item.soft_label, n_prev, n_t, cfg);
        const Eigen::VectorXd teacher_logits = teacher->forward(item.features).logits;
        return combined_loss_grad(logits, &teacher_logits, item.soft_label, n_prev, n_t, cfg);
    };
}

BatchTransform make_batch_transform(const LossConfig& cfg) {
    if (!cfg.mixup_enabled) return {};
    const double alpha = cfg.mixup_alpha;
    return [alpha](std::vector<TrainItem>& batch, Rng& rng) { apply_mixup_batch(batch, alpha, rng); };
}

// Score-and-update with the configured strategy. The expensive phase for the
// two uncertainty strategies is scoring every candidate in buffer + incoming.
void update_memory(TrainerState& state, const std::vector<Sample>& incoming, const StrategySpec& strategy,
                   std::uint64_t seed) {
    const int capacity = state.buffer.capacity;
    switch (strategy.kind) {
        case StrategyKind::finetune:
            return;  // no replay memory at all
        case StrategyKind::random:
            state.buffer = update_random(state.buffer, incoming, capacity, seed);
            return;
        case StrategyKind::reservoir:
            state.buffer = update_reservoir(state.buffer, incoming, capacity, seed);
            return;
        case StrategyKind::prototype:
            state.buffer = update_prototype(state.buffer, incoming, capacity, state.classifier);
            return;
        case StrategyKind::uncertainty:
        case StrategyKind::uncertainty_plus_plus: {
            std::map<std::string, double> scores;
            const auto candidates = build_training_set(state.buffer, incoming);
            for (const auto& s : candidates) {
                const int slot = state.slot_of(s.label);
                const auto score =
                    strategy.kind == StrategyKind::uncertainty
                        ? score_waveform_style(state.classifier, s, slot, strategy.suites, strategy.k_perturb, seed)
                        : score_embedding_style(state.classifier, s, slot, strategy.lambda_noise, strategy.k_perturb,
                                                seed);
                scores[s.id] = score.u;
            }
            state.buffer = update_diversity(state.buffer, incoming, capacity, scores);
            return;
        }
    }
    throw contract_error("update_memory: unknown strategy");
}

}  // namespace

TaskReport run_pretrain(TrainerState& state, const TaskSplit& split, const StrategySpec& strategy,
                        const LossConfig& loss_cfg, const TrainOptions& train_opts, std::uint64_t run_seed) {
    TaskReport report;
    report.task = 0;
    if (split.pretrain_train.empty()) return report;
    const auto t_start = std::chrono::steady_clock::now();
    const CallCounters before = state.classifier.counters();

    std::set<int> class_set;
    for (const auto& s : split.pretrain_train) class_set.insert(s.label);
    state.register_classes({class_set.begin(), class_set.end()});
    const int n_t = static_cast<int>(state.slot_to_class.size());
    state.classifier.expand_head(n_t);

    auto items = to_train_items(state, split.pretrain_train, n_t);
    report.n_train = static_cast<int>(items.size());
    TrainOptions opts = train_opts;
    opts.seed = derive_seed({run_seed, fnv1a64("train"), 0});
    report.epoch_losses = train_epochs(state.classifier, items, make_loss_fn(state, loss_cfg, 0, n_t), opts,
                                       make_batch_transform(loss_cfg));

    const CallCounters before_scoring = state.classifier.counters();
    const auto scoring_start = std::chrono::steady_clock::now();
    update_memory(state, split.pretrain_train, strategy, derive_seed({run_seed, fnv1a64("mua"), 0}));
    report.scoring_wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - scoring_start).count();
    state.buffer.validate();
    const CallCounters after_scoring = state.classifier.counters();
    report.scoring_backbone_calls = after_scoring.backbone_calls - before_scoring.backbone_calls;
    report.scoring_head_calls = after_scoring.head_calls - before_scoring.head_calls;
    report.n_buffer = static_cast<int>(state.buffer.entries.size());

    state.teacher = state.classifier.snapshot();

    std::vector<int> predictions, labels;
    for (const auto& s : split.pretrain_test) {
        const auto result = state.classifier.forward(s.features);
        Eigen::Index best = 0;
        result.logits.maxCoeff(&best);
        predictions.push_back(state.slot_to_class[static_cast<std::size_t>(best)]);
        labels.push_back(s.label);
    }
    const auto class_acc = per_class_accuracy(predictions, labels);
    report.per_class_accuracy = class_acc.per_class;
    report.overall_accuracy = class_acc.overall;

    const CallCounters after = state.classifier.counters();
    report.backbone_calls = after.backbone_calls - before.backbone_calls;
    report.head_calls = after.head_calls - before.head_calls;
    report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

TaskReport run_task(TrainerState& state, const TaskSchedule& schedule, const TaskBatch& batch,
                    const StrategySpec& strategy, const LossConfig& loss_cfg, const TrainOptions& train_opts,
                    std::uint64_t run_seed) {
    const auto t_start = std::chrono::steady_clock::now();
    const CallCounters before = state.classifier.counters();

    const int t = batch.task_index;
    if (t < 1 || t > schedule.num_tasks()) throw contract_error("run_task: task index out of schedule");
    const int n_prev = state.classifier.active_classes();
    if (loss_cfg.kd_enabled && n_prev > 0 && !state.teacher)
        throw contract_error("run_task: distillation enabled but no teacher snapshot from the previous task");

    state.register_classes(schedule.tasks[static_cast<std::size_t>(t - 1)]);
    const int n_t = static_cast<int>(state.slot_to_class.size());
    state.classifier.expand_head(n_t);

    const std::vector<Sample> pool =
        strategy.kind == StrategyKind::finetune ? batch.train : build_training_set(state.buffer, batch.train);

    TaskReport report;
    report.task = t;
    report.n_train = static_cast<int>(pool.size());

    auto items = to_train_items(state, pool, n_t);
    TrainOptions opts = train_opts;
    opts.seed = derive_seed({run_seed, fnv1a64("train"), static_cast<std::uint64_t>(t)});
    report.epoch_losses =
        train_epochs(state.classifier, items, make_loss_fn(state, loss_cfg, n_prev, n_t), opts,
                     make_batch_transform(loss_cfg));

    const CallCounters before_scoring = state.classifier.counters();
    const auto scoring_start = std::chrono::steady_clock::now();
    update_memory(state, batch.train, strategy, derive_seed({run_seed, fnv1a64("mua"), static_cast<std::uint64_t>(t)}));
    report.scoring_wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - scoring_start).count();
    state.buffer.validate();
    const CallCounters after_scoring = state.classifier.counters();
    report.scoring_backbone_calls = after_scoring.backbone_calls - before_scoring.backbone_calls;
    report.scoring_head_calls = after_scoring.head_calls - before_scoring.head_calls;
    report.n_buffer = static_cast<int>(state.buffer.entries.size());

    state.teacher = state.classifier.snapshot();

    // Evaluate on the cumulative test pool; row t of the matrix holds the
    // per-task accuracies (pretraining classes are reported per class only).
    std::vector<int> predictions, labels;
    predictions.reserve(batch.test_cumulative.size());
    labels.reserve(batch.test_cumulative.size());
    for (const auto& s : batch.test_cumulative) {
        const auto result = state.classifier.forward(s.features);
        Eigen::Index best = 0;
        result.logits.maxCoeff(&best);
        predictions.push_back(state.slot_to_class[static_cast<std::size_t>(best)]);
        labels.push_back(s.label);
    }
    const auto class_acc = per_class_accuracy(predictions, labels);
    report.per_class_accuracy = class_acc.per_class;
    report.overall_accuracy = class_acc.overall;

    std::vector<double> row(static_cast<std::size_t>(t), 0.0);
    std::vector<int> hits(static_cast<std::size_t>(t), 0), totals(static_cast<std::size_t>(t), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto owner = schedule.task_of_class(labels[i]);
        if (!owner || *owner == 0) continue;  // pretraining class
        const auto j = static_cast<std::size_t>(*owner - 1);
        ++totals[j];
        if (predictions[i] == labels[i]) ++hits[j];
    }
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (totals[j] == 0) throw contract_error("run_task: task " + std::to_string(j + 1) + " has no test samples");
        row[j] = static_cast<double>(hits[j]) / static_cast<double>(totals[j]);
    }
    state.matrix.set_row(t, row);
    report.row_accuracies = row;

    const CallCounters after = state.classifier.counters();
    report.backbone_calls = after.backbone_calls - before.backbone_calls;
    report.head_calls = after.head_calls - before.head_calls;
    report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

}  // namespace replaycl
