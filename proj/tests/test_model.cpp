#include <doctest.h>

#include <cmath>
#include <tuple>

#include "replaycl/errors.hpp"
#include "replaycl/learn.hpp"
#include "replaycl/model.hpp"
#include "replaycl/stream.hpp"
#include "test_support.hpp"

using namespace replaycl;

TEST_CASE("softmax basics") {
    Eigen::VectorXd zeros(2);
    zeros << 0, 0;
    const auto uniform = softmax_T(zeros, 1.0);
    CHECK(uniform(0) == doctest::Approx(0.5).epsilon(1e-12));
    const auto uniform_hot = softmax_T(zeros, 17.0);
    CHECK(uniform_hot(1) == doctest::Approx(0.5).epsilon(1e-12));

    Eigen::VectorXd skew(2);
    skew << std::log(3.0), 0.0;
    const auto p = softmax_T(skew, 1.0);
    CHECK(p(0) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(p(1) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("softmax flattens monotonically with temperature") {
    Eigen::VectorXd logits(2);
    logits << 1.0, -1.0;
    // Direct evaluation at each temperature.
    auto direct = [&](double T) {
        const double a = std::exp(1.0 / T);
        const double b = std::exp(-1.0 / T);
        return a / (a + b);
    };
    double prev = 1.0;
    for (double T : {1.0, 2.0, 10.0}) {
        const double p = softmax_T(logits, T)(0);
        CHECK(p == doctest::Approx(direct(T)).epsilon(1e-12));
        CHECK(p < prev);
        CHECK(p > 0.5);
        prev = p;
    }
}

TEST_CASE("softmax rejects bad input") {
    Eigen::VectorXd v(2);
    v << 1, 2;
    CHECK_THROWS_AS(softmax_T(v, 0.0), contract_error);
    v(0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(softmax_T(v, 1.0), numeric_error);
}

TEST_CASE("zero parameters give zero logits and a uniform posterior") {
    auto clf = test::zero_classifier(3, 4, 2, 5);
    const auto out = clf.forward(Eigen::MatrixXd::Random(2, 3));
    CHECK(out.logits == Eigen::VectorXd::Zero(5));
    const auto p = softmax_T(out.logits, 1.0);
    for (int i = 0; i < 5; ++i) CHECK(p(i) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("identity composition: logits equal the input features") {
    auto clf = test::identity_classifier(3, 3);
    Eigen::MatrixXd x(1, 3);
    x << 0.5, 2.0, 0.25;  // non-negative, unaffected by the rectifier
    const auto out = clf.forward(x);
    CHECK(out.embedding == x.row(0).transpose());
    CHECK(out.logits == x.row(0).transpose());
}

TEST_CASE("forward counts one backbone and one head call") {
    auto clf = test::zero_classifier(2, 2, 2, 2);
    CHECK(clf.counters().backbone_calls == 0);
    clf.forward(Eigen::MatrixXd::Zero(1, 2));
    CHECK(clf.counters().backbone_calls == 1);
    CHECK(clf.counters().head_calls == 1);
}

TEST_CASE("head_only decomposes forward and counts only head calls") {
    ClassifierConfig cfg;
    cfg.input_dim = 3;
    cfg.seed = 21;
    Classifier clf(cfg);
    clf.expand_head(4);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 3);
    const auto full = clf.forward(x);
    CHECK(clf.head_only(full.embedding) == full.logits);

    // 1 forward + 5 head_only -> counters (1, 6).
    for (int i = 0; i < 4; ++i) clf.head_only(full.embedding);
    CHECK(clf.counters().backbone_calls == 1);
    CHECK(clf.counters().head_calls == 6);
}

TEST_CASE("zero embedding and zero bias give zero logits") {
    auto clf = test::zero_classifier(2, 2, 3, 4);
    CHECK(clf.head_only(Eigen::VectorXd::Zero(3)) == Eigen::VectorXd::Zero(4));
}

TEST_CASE("forward rejects mismatched feature dims") {
    auto clf = test::zero_classifier(3, 2, 2, 2);
    CHECK_THROWS_AS(clf.forward(Eigen::MatrixXd::Zero(1, 4)), contract_error);
    CHECK_THROWS_AS(clf.head_only(Eigen::VectorXd::Zero(5)), contract_error);
}

TEST_CASE("expand_head preserves learned rows exactly") {
    ClassifierConfig cfg;
    cfg.input_dim = 4;
    cfg.seed = 31;
    Classifier clf(cfg);
    clf.expand_head(15);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 4);
    const auto before = clf.forward(x);
    clf.expand_head(18);
    const auto after = clf.forward(x);
    CHECK(after.logits.size() == 18);
    CHECK(after.logits.head(15) == before.logits);
}

TEST_CASE("expand_head to the same size is a bit-identical no-op") {
    ClassifierConfig cfg;
    cfg.input_dim = 2;
    cfg.seed = 5;
    Classifier clf(cfg);
    clf.expand_head(3);
    const auto before = clf.snapshot();
    clf.expand_head(3);
    CHECK(clf.snapshot() == before);
}

TEST_CASE("expansion path does not change the head init") {
    ClassifierConfig cfg;
    cfg.input_dim = 2;
    cfg.seed = 77;
    Classifier one_shot(cfg), stepwise(cfg);
    one_shot.expand_head(6);
    stepwise.expand_head(2);
    stepwise.expand_head(5);
    stepwise.expand_head(6);
    CHECK(one_shot.snapshot() == stepwise.snapshot());

    Classifier fresh(cfg);
    fresh.expand_head(6);
    CHECK(fresh.snapshot() == one_shot.snapshot());
}

TEST_CASE("expand_head cannot shrink") {
    ClassifierConfig cfg;
    cfg.input_dim = 2;
    Classifier clf(cfg);
    clf.expand_head(4);
    CHECK_THROWS_AS(clf.expand_head(3), contract_error);
}

TEST_CASE("masking: probabilities exist only for active classes") {
    auto clf = test::zero_classifier(2, 2, 2, 3);
    const auto out = clf.forward(Eigen::MatrixXd::Zero(1, 2));
    CHECK(out.logits.size() == 3);  // no slot for any class index >= active
    CHECK(softmax_T(out.logits, 1.0).size() == 3);
}

TEST_CASE("training separates a 2-class synthetic blob") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.per_class = 40;
    spec.feature_dim = 5;
    spec.frames = 2;
    spec.separation = 3.0;
    spec.seed = 17;
    const auto ds = make_synthetic(spec);

    ClassifierConfig cfg;
    cfg.input_dim = 5;
    cfg.seed = 1;
    Classifier clf(cfg);
    clf.expand_head(2);

    std::vector<TrainItem> items;
    for (const auto& s : ds.samples) items.push_back(make_train_item(s, 2, s.label));
    TrainOptions opts;
    opts.epochs = 50;
    opts.seed = 2;
    const auto log = train_epochs(
        clf, items, [](const TrainItem& item, const Eigen::VectorXd& logits) { return ce_loss_grad(logits, item.soft_label); },
        opts);
    REQUIRE(log.size() == 50);
    CHECK(log.back() < log.front());

    int hits = 0;
    for (const auto& s : ds.samples) {
        Eigen::Index pred = 0;
        clf.forward(s.features).logits.maxCoeff(&pred);
        if (static_cast<int>(pred) == s.label) ++hits;
    }
    CHECK(static_cast<double>(hits) / static_cast<double>(ds.samples.size()) >= 0.95);
}

TEST_CASE("epochs=0 leaves parameters unchanged and the log empty") {
    ClassifierConfig cfg;
    cfg.input_dim = 2;
    cfg.seed = 9;
    Classifier clf(cfg);
    clf.expand_head(2);
    const auto before = clf.snapshot();
    std::vector<TrainItem> items = {TrainItem{Eigen::MatrixXd::Zero(1, 2), Eigen::Vector2d(1.0, 0.0)}};
    TrainOptions opts;
    opts.epochs = 0;
    const auto log = train_epochs(
        clf, items, [](const TrainItem& item, const Eigen::VectorXd& logits) { return ce_loss_grad(logits, item.soft_label); },
        opts);
    CHECK(log.empty());
    CHECK(clf.snapshot() == before);
}

TEST_CASE("optimizer defaults match the reference setup") {
    TrainOptions opts;
    CHECK(opts.lr == 1e-3);
    CHECK(opts.batch_size == 32);
    CHECK(opts.epochs == 50);
    CHECK(opts.beta1 == 0.9);
    CHECK(opts.beta2 == 0.999);
    CHECK(opts.eps == 1e-8);
}

TEST_CASE("training shuffling is deterministic per seed") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.per_class = 10;
    spec.feature_dim = 3;
    spec.seed = 23;
    const auto ds = make_synthetic(spec);
    std::vector<TrainItem> items;
    for (const auto& s : ds.samples) items.push_back(make_train_item(s, 2, s.label));

    auto train_once = [&] {
        ClassifierConfig cfg;
        cfg.input_dim = 3;
        cfg.seed = 4;
        Classifier clf(cfg);
        clf.expand_head(2);
        TrainOptions opts;
        opts.epochs = 3;
        opts.seed = 8;
        train_epochs(clf, items,
                     [](const TrainItem& item, const Eigen::VectorXd& logits) { return ce_loss_grad(logits, item.soft_label); },
                     opts);
        return clf.snapshot();
    };
    CHECK(train_once() == train_once());
}

TEST_CASE("training rejects mismatched labels and diverged losses") {
    ClassifierConfig cfg;
    cfg.input_dim = 2;
    Classifier clf(cfg);
    clf.expand_head(2);
    std::vector<TrainItem> bad = {TrainItem{Eigen::MatrixXd::Zero(1, 2), Eigen::Vector3d(1.0, 0.0, 0.0)}};
    TrainOptions opts;
    opts.epochs = 1;
    const auto ce = [](const TrainItem& item, const Eigen::VectorXd& logits) { return ce_loss_grad(logits, item.soft_label); };
    CHECK_THROWS_AS(train_epochs(clf, bad, ce, opts), contract_error);
    CHECK_THROWS_AS(train_epochs(clf, {}, ce, opts), contract_error);

    std::vector<TrainItem> ok = {TrainItem{Eigen::MatrixXd::Zero(1, 2), Eigen::Vector2d(1.0, 0.0)}};
    const auto exploding = [](const TrainItem&, const Eigen::VectorXd&) {
        return LossGrad{std::numeric_limits<double>::quiet_NaN(), Eigen::Vector2d(0.0, 0.0)};
    };
    CHECK_THROWS_AS(train_epochs(clf, ok, exploding, opts), numeric_error);
}

TEST_CASE("snapshots are immutable under further training") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.per_class = 8;
    spec.feature_dim = 3;
    spec.seed = 41;
    const auto ds = make_synthetic(spec);
    ClassifierConfig cfg;
    cfg.input_dim = 3;
    cfg.seed = 6;
    Classifier clf(cfg);
    clf.expand_head(2);

    const auto snap = clf.snapshot();
    const Eigen::MatrixXd probe = ds.samples[0].features;
    const Eigen::VectorXd before = snap.forward(probe).logits;

    std::vector<TrainItem> items;
    for (const auto& s : ds.samples) items.push_back(make_train_item(s, 2, s.label));
    TrainOptions opts;
    opts.epochs = 5;
    train_epochs(clf, items,
                 [](const TrainItem& item, const Eigen::VectorXd& logits) { return ce_loss_grad(logits, item.soft_label); },
                 opts);

    CHECK(snap.forward(probe).logits == before);
    CHECK_FALSE(clf.snapshot() == snap);
}

TEST_CASE("counter soundness through training") {
    ClassifierConfig cfg;
    cfg.input_dim = 2;
    Classifier clf(cfg);
    clf.expand_head(2);
    std::vector<TrainItem> items;
    for (int i = 0; i < 7; ++i) items.push_back(TrainItem{Eigen::MatrixXd::Constant(1, 2, i), Eigen::Vector2d(1.0, 0.0)});
    TrainOptions opts;
    opts.epochs = 3;
    opts.batch_size = 2;
    train_epochs(clf, items,
                 [](const TrainItem& item, const Eigen::VectorXd& logits) { return ce_loss_grad(logits, item.soft_label); },
                 opts);
    CHECK(clf.counters().backbone_calls == 21);  // 3 epochs x 7 items
    CHECK(clf.counters().head_calls == 21);
}

TEST_CASE("one optimizer step moves parameters against the finite-difference gradient") {
    // End-to-end backprop check: the first adaptive step moves each
    // parameter by about -lr * sign(gradient), so the movement direction
    // must oppose a central-difference estimate through the whole network.
    const Eigen::MatrixXd x = (Eigen::MatrixXd(2, 3) << 0.4, -1.2, 0.7, 1.1, 0.3, -0.5).finished();
    const Eigen::Vector2d label(1.0, 0.0);
    const auto ce = [](const TrainItem& item, const Eigen::VectorXd& logits) {
        return ce_loss_grad(logits, item.soft_label);
    };

    ClassifierConfig cfg;
    cfg.input_dim = 3;
    cfg.hidden_dim = 4;
    cfg.embedding_dim = 2;
    cfg.seed = 71;
    const auto path = test::temp_path("fd-base.ckpt").string();
    {
        Classifier base(cfg);
        base.expand_head(2);
        save_checkpoint(base, path);
    }

    auto loss_at = [&](const std::string& tensor, int i, int j, double delta) {
        nlohmann::json j_ckpt;
        {
            std::ifstream in(path);
            in >> j_ckpt;
        }
        if (j_ckpt.at(tensor).at(0).is_array())
            j_ckpt[tensor][i][j] = j_ckpt[tensor][i][j].get<double>() + delta;
        else
            j_ckpt[tensor][i] = j_ckpt[tensor][i].get<double>() + delta;
        const auto tmp = test::temp_path("fd-mod.ckpt").string();
        {
            std::ofstream out(tmp);
            out << j_ckpt.dump();
        }
        auto clf = load_checkpoint(tmp);
        return ce_loss(clf.forward(x).logits, label);
    };

    auto param_value = [&](const Classifier& clf, const std::string& tensor, int i, int j) {
        const auto tmp = test::temp_path("fd-read.ckpt").string();
        save_checkpoint(clf, tmp);
        nlohmann::json j_ckpt;
        std::ifstream in(tmp);
        in >> j_ckpt;
        if (j_ckpt.at(tensor).at(0).is_array()) return j_ckpt[tensor][i][j].get<double>();
        return j_ckpt[tensor][i].get<double>();
    };

    Classifier trained = load_checkpoint(path);
    std::vector<TrainItem> items = {TrainItem{x, label}};
    TrainOptions opts;
    opts.epochs = 1;
    opts.batch_size = 1;
    opts.lr = 1e-6;  // one near-sign step, small enough to stay local
    train_epochs(trained, items, ce, opts);

    const double h = 1e-6;
    for (const auto& [tensor, i, j] : std::vector<std::tuple<std::string, int, int>>{
             {"w1", 0, 1}, {"b1", 2, 0}, {"w2", 1, 3}, {"b2", 0, 0}, {"head_w", 1, 1}, {"head_b", 0, 0}}) {
        const double grad = (loss_at(tensor, i, j, h) - loss_at(tensor, i, j, -h)) / (2.0 * h);
        if (std::abs(grad) < 1e-6) continue;  // too flat for a sign check
        const double moved = param_value(trained, tensor, i, j) - param_value(load_checkpoint(path), tensor, i, j);
        INFO(tensor << "(" << i << "," << j << ") grad=" << grad << " moved=" << moved);
        CHECK(moved * grad < 0.0);
    }
}

TEST_CASE("checkpoint round-trips bit-exact") {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.per_class = 6;
    spec.feature_dim = 4;
    spec.seed = 51;
    const auto ds = make_synthetic(spec);
    ClassifierConfig cfg;
    cfg.input_dim = 4;
    cfg.seed = 13;
    Classifier clf(cfg);
    clf.expand_head(3);
    std::vector<TrainItem> items;
    for (const auto& s : ds.samples) items.push_back(make_train_item(s, 3, s.label));
    TrainOptions opts;
    opts.epochs = 4;
    train_epochs(clf, items,
                 [](const TrainItem& item, const Eigen::VectorXd& logits) { return ce_loss_grad(logits, item.soft_label); },
                 opts);

    const auto path = test::temp_path("model.ckpt").string();
    save_checkpoint(clf, path);
    const auto restored = load_checkpoint(path);
    CHECK(restored.snapshot() == clf.snapshot());
    CHECK(restored.active_classes() == 3);
}

TEST_CASE("checkpoint integrity failures are detected") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent.ckpt"), io_error);
    const auto path = test::temp_path("garbage.ckpt").string();
    {
        std::ofstream out(path);
        out << "{\"format\": \"something-else\"}";
    }
    CHECK_THROWS_AS(load_checkpoint(path), integrity_error);
}
