#include <doctest.h>

#include <cmath>

#include "replaycl/errors.hpp"
#include "replaycl/learn.hpp"
#include "test_support.hpp"

using namespace replaycl;

namespace {

// Central finite differences of a scalar loss with respect to the logits.
template <typename F>
Eigen::VectorXd finite_difference(const F& f, const Eigen::VectorXd& logits, double h = 1e-5) {
    Eigen::VectorXd grad(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        Eigen::VectorXd hi = logits, lo = logits;
        hi(i) += h;
        lo(i) -= h;
        grad(i) = (f(hi) - f(lo)) / (2.0 * h);
    }
    return grad;
}

double max_rel_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        const double denom = std::max(1.0, std::abs(numeric(i)));
        worst = std::max(worst, std::abs(analytic(i) - numeric(i)) / denom);
    }
    return worst;
}

Eigen::VectorXd random_logits(Rng& rng, int n, double scale = 3.0) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.uniform_real(-scale, scale);
    return v;
}

Eigen::VectorXd one_hot(int n, int idx) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    v(idx) = 1.0;
    return v;
}

}  // namespace

TEST_CASE("lambda schedule") {
    CHECK(lambda_schedule(15, 18) == doctest::Approx(std::sqrt(1.0 / 6.0)).epsilon(1e-12));
    CHECK(lambda_schedule(0, 10) == 1.0);
    CHECK(lambda_schedule(0, 1) == 1.0);
    // Monotone in the class growth: fixed n_prev, larger n_t -> larger lambda.
    double prev = 0.0;
    for (int n_t = 6; n_t <= 51; n_t += 5) {
        const double l = lambda_schedule(5, n_t);
        CHECK(l > prev);
        CHECK(l > 0.0);
        CHECK(l <= 1.0);
        prev = l;
    }
    CHECK_THROWS_AS(lambda_schedule(3, 2), contract_error);
    CHECK_THROWS_AS(lambda_schedule(-1, 2), contract_error);
}

TEST_CASE("cross-entropy of uniform logits is ln N") {
    for (int n : {2, 5, 9}) {
        const Eigen::VectorXd logits = Eigen::VectorXd::Zero(n);
        CHECK(ce_loss(logits, 0) == doctest::Approx(std::log(n)).epsilon(1e-12));
    }
}

TEST_CASE("hard labels and one-hot soft labels give identical losses") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto logits = random_logits(rng, 5);
        const int label = static_cast<int>(rng.uniform_int(0, 4));
        CHECK(ce_loss(logits, label) == ce_loss(logits, one_hot(5, label)));
    }
    CHECK_THROWS_AS(ce_loss(Eigen::VectorXd::Zero(3), 3), contract_error);
    CHECK_THROWS_AS(ce_loss(Eigen::VectorXd::Zero(3), Eigen::Vector3d(0.5, 0.2, 0.2)), contract_error);
}

TEST_CASE("cross-entropy gradient matches central finite differences") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const auto logits = random_logits(rng, 5);
        Eigen::VectorXd soft = Eigen::VectorXd::Zero(5);
        // Random soft label (normalized), occasionally one-hot.
        if (trial % 3 == 0) {
            soft = one_hot(5, static_cast<int>(rng.uniform_int(0, 4)));
        } else {
            for (int i = 0; i < 5; ++i) soft(i) = rng.uniform01() + 1e-3;
            soft /= soft.sum();
        }
        const auto lg = ce_loss_grad(logits, soft);
        const auto fd = finite_difference([&](const Eigen::VectorXd& x) { return ce_loss(x, soft); }, logits);
        CHECK(max_rel_error(lg.dlogits, fd) < 1e-5);
    }
}

TEST_CASE("self-distillation is the teacher entropy fixed point") {
    Eigen::VectorXd logits(2);
    logits << 0, 0;
    const double loss = kd_loss(logits, logits, 2, 2.0);
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const auto lg = kd_loss_grad(logits, logits, 2, 2.0);
    CHECK(lg.dlogits.norm() <= 1e-7);

    // Also away from the uniform point.
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto shared = random_logits(rng, 6);
        const auto grad = kd_loss_grad(shared, shared, 4, 2.0);
        CHECK(grad.dlogits.norm() <= 1e-7);
        const auto p = softmax_T(shared.head(4), 2.0);
        const double entropy = -(p.array() * p.array().log()).sum();
        CHECK(kd_loss(shared, shared, 4, 2.0) == doctest::Approx(entropy).epsilon(1e-9));
    }
}

TEST_CASE("a near one-hot teacher reduces distillation to cross-entropy on its class") {
    Eigen::VectorXd teacher(3);
    teacher << 80.0, 0.0, 0.0;  // softmax at T=2 is 1 up to ~1e-17
    Rng rng(6);
    const auto student = random_logits(rng, 3);
    const Eigen::VectorXd q = softmax_T(student.head(3), 2.0);
    CHECK(kd_loss(student, teacher, 3, 2.0) == doctest::Approx(-std::log(q(0))).epsilon(1e-9));
}

TEST_CASE("distillation obeys Gibbs' inequality") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const auto teacher = random_logits(rng, 5);
        const auto student = random_logits(rng, 5);
        const auto p = softmax_T(teacher.head(4), 2.0);
        const double teacher_entropy = -(p.array() * p.array().log()).sum();
        CHECK(kd_loss(student, teacher, 4, 2.0) >= teacher_entropy - 1e-9);
    }
}

TEST_CASE("distillation gradient matches central finite differences") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const auto teacher = random_logits(rng, 5);
        const auto student = random_logits(rng, 5);
        const bool rescale = trial % 2 == 0;
        const auto lg = kd_loss_grad(student, teacher, 3, 2.0, rescale);
        const auto fd = finite_difference(
            [&](const Eigen::VectorXd& x) { return kd_loss(x, teacher, 3, 2.0, rescale); }, student);
        CHECK(max_rel_error(lg.dlogits, fd) < 1e-5);
        CHECK(lg.dlogits.tail(2) == Eigen::Vector2d::Zero());  // new classes take no distillation gradient
    }
}

TEST_CASE("distillation preconditions") {
    const Eigen::VectorXd v = Eigen::VectorXd::Zero(3);
    CHECK_THROWS_AS(kd_loss(v, v, 0, 2.0), contract_error);
    CHECK_THROWS_AS(kd_loss(v, v, 4, 2.0), contract_error);
    CHECK_THROWS_AS(kd_loss(v, v, 2, 0.0), contract_error);
}

TEST_CASE("combined loss collapses to cross-entropy on the base task") {
    Rng rng(9);
    LossConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        const auto logits = random_logits(rng, 4);
        const auto soft = one_hot(4, static_cast<int>(rng.uniform_int(0, 3)));
        CHECK(combined_loss(logits, nullptr, soft, 0, 4, cfg) == ce_loss(logits, soft));
    }
}

TEST_CASE("combined loss weights the two terms by the schedule") {
    Rng rng(10);
    LossConfig cfg;
    const auto student = random_logits(rng, 18);
    const auto teacher = random_logits(rng, 15);
    const auto soft = one_hot(18, 17);
    const double lambda = std::sqrt(1.0 / 6.0);
    const double expected =
        lambda * ce_loss(student, soft) + (1.0 - lambda) * kd_loss(student, teacher, 15, cfg.temperature);
    CHECK(combined_loss(student, &teacher, soft, 15, 18, cfg) == doctest::Approx(expected).epsilon(1e-12));

    // Gradient combines the same way.
    const auto lg = combined_loss_grad(student, &teacher, soft, 15, 18, cfg);
    const Eigen::VectorXd manual = lambda * ce_loss_grad(student, soft).dlogits +
                                   (1.0 - lambda) * kd_loss_grad(student, teacher, 15, cfg.temperature).dlogits;
    CHECK((lg.dlogits - manual).norm() < 1e-12);
}

TEST_CASE("disabling distillation reduces the total to cross-entropy") {
    Rng rng(11);
    LossConfig cfg;
    cfg.kd_enabled = false;
    const auto student = random_logits(rng, 6);
    const auto teacher = random_logits(rng, 4);
    const auto soft = one_hot(6, 1);
    CHECK(combined_loss(student, &teacher, soft, 4, 6, cfg) == ce_loss(student, soft));
}

TEST_CASE("combined loss demands a teacher when distilling") {
    LossConfig cfg;
    const Eigen::VectorXd logits = Eigen::VectorXd::Zero(4);
    CHECK_THROWS_AS(combined_loss(logits, nullptr, one_hot(4, 0), 2, 4, cfg), contract_error);
}

TEST_CASE("fixed lambda mode uses the configured weight") {
    LossConfig cfg;
    cfg.lambda_mode = LambdaMode::fixed;
    cfg.lambda_value = 0.25;
    Eigen::VectorXd student(2);
    student << 1.0, -1.0;
    Eigen::VectorXd teacher(1);
    teacher << 0.0;
    const auto soft = one_hot(2, 0);
    const double expected = 0.25 * ce_loss(student, soft) + 0.75 * kd_loss(student, teacher, 1, cfg.temperature);
    CHECK(combined_loss(student, &teacher, soft, 1, 2, cfg) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("mixup endpoints and midpoint") {
    TrainItem a{(Eigen::MatrixXd(1, 2) << 0, 0).finished(), Eigen::Vector2d(1, 0)};
    TrainItem b{(Eigen::MatrixXd(1, 2) << 2, 2).finished(), Eigen::Vector2d(0, 1)};

    const auto at_one = mixup_with_coeff(a, b, 1.0);
    CHECK(at_one.features == a.features);
    CHECK(at_one.soft_label == a.soft_label);

    const auto mid = mixup_with_coeff(a, b, 0.5);
    CHECK(mid.features == (Eigen::MatrixXd(1, 2) << 1, 1).finished());
    CHECK(mid.soft_label == Eigen::Vector2d(0.5, 0.5));

    TrainItem wrong{Eigen::MatrixXd::Zero(2, 2), Eigen::Vector2d(1, 0)};
    CHECK_THROWS_AS(mixup_with_coeff(a, wrong, 0.5), contract_error);
    CHECK_THROWS_AS(mixup_with_coeff(a, b, 1.5), contract_error);
}

TEST_CASE("mixup soft labels conserve mass over seeded draws") {
    TrainItem a{(Eigen::MatrixXd(1, 3) << 1, 2, 3).finished(), Eigen::Vector3d(1, 0, 0)};
    TrainItem b{(Eigen::MatrixXd(1, 3) << -1, 0, 1).finished(), Eigen::Vector3d(0, 0, 1)};
    Rng rng(12);
    for (int i = 0; i < 1000; ++i) {
        const auto mixed = mixup(a, b, 1.0, rng);
        CHECK(mixed.soft_label.sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK((mixed.soft_label.array() >= 0.0).all());
    }
    CHECK_THROWS_AS(mixup(a, b, 0.0, rng), contract_error);
}

TEST_CASE("in-batch mixup is deterministic per rng stream") {
    std::vector<TrainItem> batch;
    for (int i = 0; i < 6; ++i)
        batch.push_back(TrainItem{Eigen::MatrixXd::Constant(1, 2, i), one_hot(3, i % 3)});
    auto a = batch, b = batch;
    Rng ra(21), rb(21);
    apply_mixup_batch(a, 1.0, ra);
    apply_mixup_batch(b, 1.0, rb);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].features == b[i].features);
        CHECK(a[i].soft_label == b[i].soft_label);
    }
}

TEST_CASE("strategy names round-trip") {
    for (auto kind : {StrategyKind::finetune, StrategyKind::random, StrategyKind::reservoir, StrategyKind::prototype,
                      StrategyKind::uncertainty, StrategyKind::uncertainty_plus_plus})
        CHECK(strategy_from_string(to_string(kind)) == kind);
    CHECK_THROWS_AS(strategy_from_string("sgd"), config_error);
}

namespace {

struct PipelineFixture {
    SyntheticSpec spec;
    Dataset dataset;
    TaskSchedule schedule;
    TaskSplit split;
    LossConfig loss_cfg;
    TrainOptions train_opts;

    explicit PipelineFixture(int num_tasks, int classes_per_task, int per_class = 30, int epochs = 12,
                             std::uint64_t seed = 5) {
        spec.num_classes = num_tasks * classes_per_task;
        spec.per_class = per_class;
        spec.feature_dim = 8;
        spec.frames = 3;
        spec.separation = 2.5;
        spec.seed = seed;
        dataset = make_synthetic(spec);
        schedule = split_schedule(spec.num_classes, num_tasks, classes_per_task, 0, seed);
        split = make_task_batches(dataset, schedule, 0.2, seed);
        train_opts.epochs = epochs;
        train_opts.batch_size = 16;
    }

    TrainerState fresh_state(int buffer_capacity, std::uint64_t model_seed = 1) const {
        ClassifierConfig cfg;
        cfg.input_dim = spec.feature_dim;
        cfg.hidden_dim = 32;
        cfg.embedding_dim = 16;
        cfg.seed = model_seed;
        return TrainerState(cfg, buffer_capacity, schedule.num_tasks());
    }
};

}  // namespace

TEST_CASE("a single-task schedule reduces to plain supervised training") {
    PipelineFixture fx(1, 4, 30, 20);
    auto state = fx.fresh_state(20);
    StrategySpec strategy;
    strategy.kind = StrategyKind::random;
    const auto report = run_task(state, fx.schedule, fx.split.batches[0], strategy, fx.loss_cfg, fx.train_opts, 3);
    CHECK(report.task == 1);
    CHECK(report.row_accuracies.size() == 1);
    CHECK(state.matrix.defined(1, 1));
    CHECK(report.row_accuracies[0] > 0.8);  // separable blobs train fine
    CHECK(report.n_buffer == 20);
}

TEST_CASE("finetune collapses on early tasks while replay retains them") {
    PipelineFixture fx(5, 2, 30, 15);

    auto run_with = [&](StrategyKind kind, int capacity) {
        auto state = fx.fresh_state(capacity);
        StrategySpec strategy;
        strategy.kind = kind;
        for (const auto& batch : fx.split.batches)
            run_task(state, fx.schedule, batch, strategy, fx.loss_cfg, fx.train_opts, 7);
        return state;
    };

    const auto finetuned = run_with(StrategyKind::finetune, 0);
    // Forgetting signature: task-1 accuracy collapses relative to task-5.
    CHECK(finetuned.matrix.at(5, 5) > 0.8);
    CHECK(finetuned.matrix.at(5, 1) < 0.3);
    CHECK(bwt(finetuned.matrix) < -0.15);

    const auto replayed = run_with(StrategyKind::uncertainty_plus_plus, 60);
    CHECK(acc(replayed.matrix) > acc(finetuned.matrix));
}

TEST_CASE("the pipeline is deterministic per (config, seed)") {
    PipelineFixture fx(3, 2, 24, 8);
    auto run_once = [&] {
        auto state = fx.fresh_state(30);
        StrategySpec strategy;
        strategy.kind = StrategyKind::uncertainty;
        strategy.k_perturb = 2;
        LossConfig cfg = fx.loss_cfg;
        cfg.mixup_enabled = true;
        for (const auto& batch : fx.split.batches) run_task(state, fx.schedule, batch, strategy, cfg, fx.train_opts, 11);
        return state;
    };
    const auto a = run_once();
    const auto b = run_once();
    CHECK(a.classifier.snapshot() == b.classifier.snapshot());
    for (int i = 1; i <= 3; ++i)
        for (int j = 1; j <= i; ++j) CHECK(a.matrix.at(i, j) == b.matrix.at(i, j));
    REQUIRE(a.buffer.entries.size() == b.buffer.entries.size());
    for (std::size_t i = 0; i < a.buffer.entries.size(); ++i)
        CHECK(a.buffer.entries[i].sample.id == b.buffer.entries[i].sample.id);
}

TEST_CASE("the teacher is the post-training snapshot of the previous task") {
    PipelineFixture fx(2, 2, 20, 5);
    auto state = fx.fresh_state(16);
    StrategySpec strategy;
    strategy.kind = StrategyKind::random;

    run_task(state, fx.schedule, fx.split.batches[0], strategy, fx.loss_cfg, fx.train_opts, 13);
    REQUIRE(state.teacher.has_value());
    const auto teacher_after_t1 = *state.teacher;
    CHECK(teacher_after_t1 == state.classifier.snapshot());

    run_task(state, fx.schedule, fx.split.batches[1], strategy, fx.loss_cfg, fx.train_opts, 13);
    // The teacher moved on to the post-task-2 snapshot and differs from the
    // task-1 snapshot the second task trained against.
    CHECK(*state.teacher == state.classifier.snapshot());
    CHECK_FALSE(*state.teacher == teacher_after_t1);
}

TEST_CASE("distillation-enabled later tasks require a teacher") {
    PipelineFixture fx(2, 2, 20, 2);
    auto state = fx.fresh_state(8);
    StrategySpec strategy;
    strategy.kind = StrategyKind::random;
    run_task(state, fx.schedule, fx.split.batches[0], strategy, fx.loss_cfg, fx.train_opts, 17);
    state.teacher.reset();  // simulate a missing snapshot
    CHECK_THROWS_AS(run_task(state, fx.schedule, fx.split.batches[1], strategy, fx.loss_cfg, fx.train_opts, 17),
                    contract_error);
}

TEST_CASE("pretraining registers classes, fills the buffer and sets the teacher") {
    SyntheticSpec spec;
    spec.num_classes = 6;
    spec.per_class = 20;
    spec.feature_dim = 6;
    spec.frames = 2;
    spec.separation = 2.5;
    spec.seed = 19;
    const auto dataset = make_synthetic(spec);
    const auto schedule = split_schedule(6, 2, 2, 2, 19);
    const auto split = make_task_batches(dataset, schedule, 0.2, 19);

    ClassifierConfig cfg;
    cfg.input_dim = 6;
    cfg.hidden_dim = 16;
    cfg.embedding_dim = 8;
    cfg.seed = 2;
    TrainerState state(cfg, 12, 2);
    StrategySpec strategy;
    strategy.kind = StrategyKind::uncertainty_plus_plus;
    LossConfig loss_cfg;
    TrainOptions opts;
    opts.epochs = 8;
    opts.batch_size = 8;

    const auto report = run_pretrain(state, split, strategy, loss_cfg, opts, 19);
    CHECK(report.task == 0);
    CHECK(report.n_train == 32);
    CHECK(state.classifier.active_classes() == 2);
    CHECK(state.teacher.has_value());
    CHECK(report.n_buffer == 12);
    CHECK(report.overall_accuracy > 0.5);

    // Incremental tasks continue from the pretrained state.
    const auto t1 = run_task(state, schedule, split.batches[0], strategy, loss_cfg, opts, 19);
    CHECK(state.classifier.active_classes() == 4);
    CHECK(t1.row_accuracies.size() == 1);
}
