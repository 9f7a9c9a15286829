#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "replaycl/memory.hpp"
#include "replaycl/metrics.hpp"
#include "replaycl/model.hpp"
#include "replaycl/stream.hpp"
#include "replaycl/uncertainty.hpp"

namespace replaycl {

enum class LambdaMode { auto_sqrt, fixed };

struct LossConfig {
    bool kd_enabled = true;
    double temperature = 2.0;
    LambdaMode lambda_mode = LambdaMode::auto_sqrt;
    double lambda_value = 1.0;   // used when lambda_mode == fixed
    bool kd_t2_rescale = false;  // multiply the distillation term by T^2
    bool mixup_enabled = false;
    double mixup_alpha = 1.0;
};

// CE weight of the total loss: sqrt(1 - N_prev / N_t); 1 when nothing was
// learned before.
double lambda_schedule(int n_prev, int n_t);

// Negative log-likelihood of softmax(logits) at a hard or soft label.
double ce_loss(const Eigen::VectorXd& logits, int label);
double ce_loss(const Eigen::VectorXd& logits, const Eigen::VectorXd& soft_label);
LossGrad ce_loss_grad(const Eigen::VectorXd& logits, const Eigen::VectorXd& soft_label);

// Distillation cross-entropy over the first n_prev classes at temperature T:
// -sum softmax(teacher/T) * log softmax(student/T). Minimal (= teacher
// entropy, zero gradient) when the student matches the teacher there.
double kd_loss(const Eigen::VectorXd& student_logits, const Eigen::VectorXd& teacher_logits, int n_prev, double temperature,
               bool t2_rescale = false);
LossGrad kd_loss_grad(const Eigen::VectorXd& student_logits, const Eigen::VectorXd& teacher_logits, int n_prev,
                      double temperature, bool t2_rescale = false);

// lambda * CE + (1 - lambda) * KD. The KD term is skipped entirely when
// n_prev == 0 or distillation is disabled.
double combined_loss(const Eigen::VectorXd& student_logits, const Eigen::VectorXd* teacher_logits,
                     const Eigen::VectorXd& soft_label, int n_prev, int n_t, const LossConfig& config);
LossGrad combined_loss_grad(const Eigen::VectorXd& student_logits, const Eigen::VectorXd* teacher_logits,
                            const Eigen::VectorXd& soft_label, int n_prev, int n_t, const LossConfig& config);

// Convex combination of two items with a given coefficient, features and
// one-hot labels alike.
TrainItem mixup_with_coeff(const TrainItem& a, const TrainItem& b, double m);
// Draws m ~ Beta(alpha, alpha).
TrainItem mixup(const TrainItem& a, const TrainItem& b, double alpha, Rng& rng);
// In-batch mixup: every item is mixed with a randomly chosen batch partner.
void apply_mixup_batch(std::vector<TrainItem>& batch, double alpha, Rng& rng);

// Experiment-level strategy: the five memory update rules plus the
// lower-bound finetune baseline (no replay at all).
enum class StrategyKind { finetune, random, reservoir, prototype, uncertainty, uncertainty_plus_plus };

std::string to_string(StrategyKind kind);
StrategyKind strategy_from_string(const std::string& name);

struct StrategySpec {
    StrategyKind kind = StrategyKind::uncertainty_plus_plus;
    int k_perturb = 6;
    double lambda_noise = 1.0;
    std::vector<PerturbationSuite> suites = default_suites();
};

// Mutable state threaded through the incremental run. Dataset class indices
// are mapped to head slots in order of first appearance.
struct TrainerState {
    TrainerState(const ClassifierConfig& cfg, int buffer_capacity, int num_tasks)
        : classifier(cfg), buffer{buffer_capacity, {}, {}, 0}, matrix(num_tasks) {}

    Classifier classifier;
    ReplayBuffer buffer;
    std::optional<ModelSnapshot> teacher;
    AccuracyMatrix matrix;
    std::map<int, int> class_to_slot;
    std::vector<int> slot_to_class;

    int slot_of(int dataset_class) const;
    void register_classes(const std::vector<int>& classes);
};

struct TaskReport {
    int task = 0;
    int n_train = 0;
    int n_buffer = 0;
    std::map<int, double> per_class_accuracy;
    double overall_accuracy = 0.0;
    std::vector<double> row_accuracies;
    std::vector<double> epoch_losses;
    double wall_time_s = 0.0;
    double scoring_wall_time_s = 0.0;  // memory-update phase only
    std::uint64_t backbone_calls = 0;  // consumed by this task, all phases
    std::uint64_t head_calls = 0;
    std::uint64_t scoring_backbone_calls = 0;  // memory-update phase only
    std::uint64_t scoring_head_calls = 0;
};

// Trains the pretraining classes (plain CE, no teacher yet), fills the
// buffer from them and snapshots the teacher. No accuracy row is recorded;
// the returned report uses task index 0.
TaskReport run_pretrain(TrainerState& state, const TaskSplit& split, const StrategySpec& strategy,
                        const LossConfig& loss_cfg, const TrainOptions& train_opts, std::uint64_t run_seed);

// One class-incremental step: expand the head, train on buffer + incoming
// with the combined loss against the frozen previous-task teacher, update
// the buffer with the configured strategy, snapshot the new teacher, and
// record row `t` of the accuracy matrix.
TaskReport run_task(TrainerState& state, const TaskSchedule& schedule, const TaskBatch& batch,
                    const StrategySpec& strategy, const LossConfig& loss_cfg, const TrainOptions& train_opts,
                    std::uint64_t run_seed);

}  // namespace replaycl
