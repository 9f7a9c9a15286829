#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "replaycl/rng.hpp"
#include "replaycl/sample.hpp"

namespace replaycl {

struct ClassifierConfig {
    int input_dim = 0;
    int hidden_dim = 64;
    int embedding_dim = 32;
    std::uint64_t seed = 0;
};

struct CallCounters {
    std::uint64_t backbone_calls = 0;
    std::uint64_t head_calls = 0;
};

struct ForwardResult {
    Eigen::VectorXd embedding;  // dim E
    Eigen::VectorXd logits;     // dim active_classes
};

// Temperature softmax, numerically stabilized by max-subtraction.
Eigen::VectorXd softmax_T(const Eigen::VectorXd& logits, double temperature);

struct TrainOptions {
    int epochs = 50;
    int batch_size = 32;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
};

struct TrainItem {
    Eigen::MatrixXd features;   // frames x input_dim
    Eigen::VectorXd soft_label; // dim active_classes, sums to 1
};

struct LossGrad {
    double loss = 0.0;
    Eigen::VectorXd dlogits;
};

using LossGradFn = std::function<LossGrad(const TrainItem&, const Eigen::VectorXd& logits)>;
using BatchTransform = std::function<void(std::vector<TrainItem>&, Rng&)>;

// Immutable copy of a classifier's parameters. Evaluating a snapshot never
// mutates anything (no call counting); snapshots compare by value.
class ModelSnapshot {
public:
    ForwardResult forward(const Eigen::MatrixXd& features) const;
    Eigen::VectorXd head_only(const Eigen::VectorXd& embedding) const;
    int active_classes() const { return active_classes_; }
    const ClassifierConfig& config() const { return cfg_; }

    friend bool operator==(const ModelSnapshot& a, const ModelSnapshot& b);

private:
    friend class Classifier;
    ClassifierConfig cfg_;
    Eigen::MatrixXd w1_, w2_, head_w_;
    Eigen::VectorXd b1_, b2_, head_b_;
    int active_classes_ = 0;
};

// Backbone (mean-pool over frames -> 2-layer perceptron -> embedding) plus a
// class-incremental linear head. The head grows by whole rows via
// expand_head; old rows are never touched. Single-writer: training and call
// counting mutate the instance.
class Classifier {
public:
    explicit Classifier(const ClassifierConfig& cfg);

    // Full pass: counts one backbone and one head evaluation.
    ForwardResult forward(const Eigen::MatrixXd& features);
    // Head pass only: counts one head evaluation.
    Eigen::VectorXd head_only(const Eigen::VectorXd& embedding);

    // Grows the head to `new_active_classes` rows. Existing rows are
    // preserved exactly; new rows come from the seeded init scheme, so the
    // result is independent of the expansion path.
    void expand_head(int new_active_classes);

    ModelSnapshot snapshot() const;
    static Classifier from_snapshot(const ModelSnapshot& snap);

    int active_classes() const { return active_classes_; }
    const ClassifierConfig& config() const { return cfg_; }
    const CallCounters& counters() const { return counters_; }

private:
    friend std::vector<double> train_epochs(Classifier&, const std::vector<TrainItem>&, const LossGradFn&,
                                            const TrainOptions&, const BatchTransform&);
    friend void save_checkpoint(const Classifier&, const std::string&);
    friend Classifier load_checkpoint(const std::string&);

    void init_head_row(int row);

    ClassifierConfig cfg_;
    Eigen::MatrixXd w1_, w2_, head_w_;
    Eigen::VectorXd b1_, b2_, head_b_;
    int active_classes_ = 0;
    CallCounters counters_;
};

// Mini-batch gradient descent with adaptive-moment updates. Shuffling is
// deterministic per opts.seed; `transform` (when given) is applied to each
// batch before the forward pass, e.g. for mixup. Returns per-epoch mean loss.
std::vector<double> train_epochs(Classifier& clf, const std::vector<TrainItem>& items, const LossGradFn& loss_fn,
                                 const TrainOptions& opts, const BatchTransform& transform = {});

// Self-describing JSON checkpoint; parameter values round-trip bit-exact.
void save_checkpoint(const Classifier& clf, const std::string& path);
Classifier load_checkpoint(const std::string& path);

TrainItem make_train_item(const Sample& s, int num_classes, int slot);

}  // namespace replaycl
