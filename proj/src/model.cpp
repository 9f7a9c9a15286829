#include "replaycl/model.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "replaycl/errors.hpp"

namespace replaycl {

using nlohmann::json;

Eigen::VectorXd softmax_T(const Eigen::VectorXd& logits, double temperature) {
    if (!(temperature > 0.0)) throw contract_error("softmax_T: temperature must be > 0");
    if (logits.size() == 0) throw contract_error("softmax_T: empty logits");
    if (!logits.allFinite()) throw numeric_error("softmax_T: non-finite logits");
    const Eigen::VectorXd z = (logits.array() - logits.maxCoeff()) / temperature;
    Eigen::VectorXd p = z.array().exp();
    p /= p.sum();
    return p;
}

namespace {

// Seeded uniform init on [-1/sqrt(fan), +1/sqrt(fan)], one RNG stream per
// row so that head rows are reproducible regardless of expansion history.
void init_row(Eigen::MatrixXd& w, Eigen::VectorXd& b, int row, std::uint64_t row_seed, int fan_in) {
    Rng rng(row_seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int c = 0; c < w.cols(); ++c) w(row, c) = rng.uniform_real(-bound, bound);
    b(row) = rng.uniform_real(-bound, bound);
}

}  // namespace

Classifier::Classifier(const ClassifierConfig& cfg) : cfg_(cfg) {
    if (cfg.input_dim < 1 || cfg.hidden_dim < 1 || cfg.embedding_dim < 1)
        throw config_error("Classifier: dims must be >= 1");
    w1_.resize(cfg.hidden_dim, cfg.input_dim);
    b1_.resize(cfg.hidden_dim);
    w2_.resize(cfg.embedding_dim, cfg.hidden_dim);
    b2_.resize(cfg.embedding_dim);
    for (int r = 0; r < cfg.hidden_dim; ++r)
        init_row(w1_, b1_, r, derive_seed({cfg.seed, fnv1a64("backbone-l1"), static_cast<std::uint64_t>(r)}), cfg.input_dim);
    for (int r = 0; r < cfg.embedding_dim; ++r)
        init_row(w2_, b2_, r, derive_seed({cfg.seed, fnv1a64("backbone-l2"), static_cast<std::uint64_t>(r)}), cfg.hidden_dim);
    head_w_.resize(0, cfg.embedding_dim);
    head_b_.resize(0);
}

void Classifier::init_head_row(int row) {
    init_row(head_w_, head_b_, row, derive_seed({cfg_.seed, fnv1a64("head"), static_cast<std::uint64_t>(row)}),
             cfg_.embedding_dim);
}

namespace {

struct BackboneTrace {
    Eigen::VectorXd pooled;   // input_dim
    Eigen::VectorXd h_pre;    // hidden, pre-activation
    Eigen::VectorXd h;        // hidden, post-ReLU
    Eigen::VectorXd embedding;
};

template <typename W1, typename B1, typename W2, typename B2>
BackboneTrace backbone_eval(const Eigen::MatrixXd& features, int input_dim, const W1& w1, const B1& b1, const W2& w2,
                            const B2& b2) {
    if (features.cols() != input_dim)
        throw contract_error("forward: feature dim " + std::to_string(features.cols()) + " != configured input dim " +
                             std::to_string(input_dim));
    if (features.rows() < 1) throw contract_error("forward: empty feature matrix");
    BackboneTrace t;
    t.pooled = features.colwise().mean();
    t.h_pre = w1 * t.pooled + b1;
    t.h = t.h_pre.cwiseMax(0.0);
    t.embedding = w2 * t.h + b2;
    return t;
}

template <typename HW, typename HB>
Eigen::VectorXd head_eval(const Eigen::VectorXd& embedding, int embedding_dim, int active, const HW& head_w,
                          const HB& head_b) {
    if (embedding.size() != embedding_dim)
        throw contract_error("head_only: embedding dim " + std::to_string(embedding.size()) + " != configured dim " +
                             std::to_string(embedding_dim));
    return head_w.topRows(active) * embedding + head_b.head(active);
}

}  // namespace

ForwardResult Classifier::forward(const Eigen::MatrixXd& features) {
    const auto trace = backbone_eval(features, cfg_.input_dim, w1_, b1_, w2_, b2_);
    ++counters_.backbone_calls;
    ForwardResult out;
    out.embedding = trace.embedding;
    out.logits = head_eval(trace.embedding, cfg_.embedding_dim, active_classes_, head_w_, head_b_);
    ++counters_.head_calls;
    return out;
}

Eigen::VectorXd Classifier::head_only(const Eigen::VectorXd& embedding) {
    auto logits = head_eval(embedding, cfg_.embedding_dim, active_classes_, head_w_, head_b_);
    ++counters_.head_calls;
    return logits;
}

void Classifier::expand_head(int new_active_classes) {
    if (new_active_classes < active_classes_)
        throw contract_error("expand_head: cannot shrink from " + std::to_string(active_classes_) + " to " +
                             std::to_string(new_active_classes));
    if (new_active_classes == active_classes_) return;
    head_w_.conservativeResize(new_active_classes, cfg_.embedding_dim);
    head_b_.conservativeResize(new_active_classes);
    for (int r = active_classes_; r < new_active_classes; ++r) init_head_row(r);
    active_classes_ = new_active_classes;
}

ModelSnapshot Classifier::snapshot() const {
    ModelSnapshot s;
    s.cfg_ = cfg_;
    s.w1_ = w1_;
    s.b1_ = b1_;
    s.w2_ = w2_;
    s.b2_ = b2_;
    s.head_w_ = head_w_;
    s.head_b_ = head_b_;
    s.active_classes_ = active_classes_;
    return s;
}

Classifier Classifier::from_snapshot(const ModelSnapshot& snap) {
    Classifier clf(snap.cfg_);
    clf.w1_ = snap.w1_;
    clf.b1_ = snap.b1_;
    clf.w2_ = snap.w2_;
    clf.b2_ = snap.b2_;
    clf.head_w_ = snap.head_w_;
    clf.head_b_ = snap.head_b_;
    clf.active_classes_ = snap.active_classes_;
    return clf;
}

ForwardResult ModelSnapshot::forward(const Eigen::MatrixXd& features) const {
    const auto trace = backbone_eval(features, cfg_.input_dim, w1_, b1_, w2_, b2_);
    ForwardResult out;
    out.embedding = trace.embedding;
    out.logits = head_eval(trace.embedding, cfg_.embedding_dim, active_classes_, head_w_, head_b_);
    return out;
}

Eigen::VectorXd ModelSnapshot::head_only(const Eigen::VectorXd& embedding) const {
    return head_eval(embedding, cfg_.embedding_dim, active_classes_, head_w_, head_b_);
}

bool operator==(const ModelSnapshot& a, const ModelSnapshot& b) {
    return a.active_classes_ == b.active_classes_ && a.cfg_.input_dim == b.cfg_.input_dim &&
           a.cfg_.hidden_dim == b.cfg_.hidden_dim && a.cfg_.embedding_dim == b.cfg_.embedding_dim &&
           a.cfg_.seed == b.cfg_.seed && a.w1_ == b.w1_ && a.b1_ == b.b1_ && a.w2_ == b.w2_ && a.b2_ == b.b2_ &&
           a.head_w_ == b.head_w_ && a.head_b_ == b.head_b_;
}

namespace {

// Adam state for one parameter tensor.
template <typename P>
struct Moment {
    P m, v;
    explicit Moment(const P& like) : m(P::Zero(like.rows(), like.cols())), v(P::Zero(like.rows(), like.cols())) {}
};

template <typename P>
void adam_step(P& param, const P& grad, Moment<P>& mom, const TrainOptions& o, long step) {
    mom.m = o.beta1 * mom.m + (1.0 - o.beta1) * grad;
    mom.v = o.beta2 * mom.v + (1.0 - o.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
    param.array() -= o.lr * (mom.m.array() / c1) / ((mom.v.array() / c2).sqrt() + o.eps);
}

}  // namespace

std::vector<double> train_epochs(Classifier& clf, const std::vector<TrainItem>& items, const LossGradFn& loss_fn,
                                 const TrainOptions& opts, const BatchTransform& transform) {
    if (opts.epochs < 0 || opts.batch_size < 1) throw contract_error("train_epochs: bad epochs/batch_size");
    if (opts.epochs == 0) return {};
    if (items.empty()) throw contract_error("train_epochs: no training items");
    const int active = clf.active_classes_;
    for (const auto& it : items) {
        if (it.soft_label.size() != active)
            throw contract_error("train_epochs: soft label dim " + std::to_string(it.soft_label.size()) +
                                 " != active classes " + std::to_string(active));
    }

    Moment<Eigen::MatrixXd> m_w1(clf.w1_), m_w2(clf.w2_), m_hw(clf.head_w_);
    Moment<Eigen::VectorXd> m_b1(clf.b1_), m_b2(clf.b2_), m_hb(clf.head_b_);
    long step = 0;

    std::vector<double> epoch_losses;
    epoch_losses.reserve(static_cast<std::size_t>(opts.epochs));
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed({opts.seed, fnv1a64("epoch"), static_cast<std::uint64_t>(epoch)}));
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
            std::vector<TrainItem> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(items[order[i]]);
            if (transform) {
                Rng batch_rng(derive_seed({opts.seed, fnv1a64("batch"), static_cast<std::uint64_t>(epoch),
                                           static_cast<std::uint64_t>(start)}));
                transform(batch, batch_rng);
            }

            Eigen::MatrixXd g_w1 = Eigen::MatrixXd::Zero(clf.w1_.rows(), clf.w1_.cols());
            Eigen::VectorXd g_b1 = Eigen::VectorXd::Zero(clf.b1_.size());
            Eigen::MatrixXd g_w2 = Eigen::MatrixXd::Zero(clf.w2_.rows(), clf.w2_.cols());
            Eigen::VectorXd g_b2 = Eigen::VectorXd::Zero(clf.b2_.size());
            Eigen::MatrixXd g_hw = Eigen::MatrixXd::Zero(clf.head_w_.rows(), clf.head_w_.cols());
            Eigen::VectorXd g_hb = Eigen::VectorXd::Zero(clf.head_b_.size());

            for (const auto& item : batch) {
                const auto trace = backbone_eval(item.features, clf.cfg_.input_dim, clf.w1_, clf.b1_, clf.w2_, clf.b2_);
                ++clf.counters_.backbone_calls;
                const Eigen::VectorXd logits =
                    head_eval(trace.embedding, clf.cfg_.embedding_dim, active, clf.head_w_, clf.head_b_);
                ++clf.counters_.head_calls;

                const LossGrad lg = loss_fn(item, logits);
                if (!std::isfinite(lg.loss) || !lg.dlogits.allFinite())
                    throw numeric_error("train_epochs: non-finite loss at epoch " + std::to_string(epoch) +
                                        " (diverged; lower the learning rate or check the data)");
                if (lg.dlogits.size() != active) throw contract_error("train_epochs: loss gradient dim mismatch");
                loss_sum += lg.loss;

                // Backprop through head and backbone.
                const Eigen::VectorXd de = clf.head_w_.transpose() * lg.dlogits;
                g_hw.noalias() += lg.dlogits * trace.embedding.transpose();
                g_hb += lg.dlogits;
                g_w2.noalias() += de * trace.h.transpose();
                g_b2 += de;
                Eigen::VectorXd dh = clf.w2_.transpose() * de;
                for (int i = 0; i < dh.size(); ++i)
                    if (trace.h_pre(i) <= 0.0) dh(i) = 0.0;
                g_w1.noalias() += dh * trace.pooled.transpose();
                g_b1 += dh;
            }

            const double inv = 1.0 / static_cast<double>(batch.size());
            ++step;
            adam_step<Eigen::MatrixXd>(clf.w1_, g_w1 * inv, m_w1, opts, step);
            adam_step<Eigen::VectorXd>(clf.b1_, g_b1 * inv, m_b1, opts, step);
            adam_step<Eigen::MatrixXd>(clf.w2_, g_w2 * inv, m_w2, opts, step);
            adam_step<Eigen::VectorXd>(clf.b2_, g_b2 * inv, m_b2, opts, step);
            adam_step<Eigen::MatrixXd>(clf.head_w_, g_hw * inv, m_hw, opts, step);
            adam_step<Eigen::VectorXd>(clf.head_b_, g_hb * inv, m_hb, opts, step);
        }
        epoch_losses.push_back(loss_sum / static_cast<double>(items.size()));
    }
    return epoch_losses;
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& name) {
    if (!j.is_array()) throw integrity_error("checkpoint: " + name + " is not an array");
    const auto rows = j.size();
    if (rows == 0) return Eigen::MatrixXd(0, 0);
    const auto cols = j[0].size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        if (j[r].size() != cols) throw integrity_error("checkpoint: ragged rows in " + name);
        for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
    return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Eigen::VectorXd vector_from_json(const json& j, const std::string& name) {
    if (!j.is_array()) throw integrity_error("checkpoint: " + name + " is not an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

}  // namespace

void save_checkpoint(const Classifier& clf, const std::string& path) {
    json j;
    j["format"] = "replaycl-model";
    j["version"] = 1;
    j["input_dim"] = clf.cfg_.input_dim;
    j["hidden_dim"] = clf.cfg_.hidden_dim;
    j["embedding_dim"] = clf.cfg_.embedding_dim;
    j["seed"] = clf.cfg_.seed;
    j["active_classes"] = clf.active_classes_;
    j["w1"] = matrix_to_json(clf.w1_);
    j["b1"] = vector_to_json(clf.b1_);
    j["w2"] = matrix_to_json(clf.w2_);
    j["b2"] = vector_to_json(clf.b2_);
    j["head_w"] = matrix_to_json(clf.head_w_);
    j["head_b"] = vector_to_json(clf.head_b_);
    std::ofstream out(path);
    if (!out) throw io_error("cannot write checkpoint: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw io_error("write failed: " + path);
}

Classifier load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw format_error("checkpoint: " + std::string(e.what()));
    }
    if (j.value("format", "") != "replaycl-model") throw integrity_error("checkpoint: unknown format");
    ClassifierConfig cfg;
    cfg.input_dim = j.at("input_dim").get<int>();
    cfg.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.embedding_dim = j.at("embedding_dim").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    Classifier clf(cfg);
    clf.w1_ = matrix_from_json(j.at("w1"), "w1");
    clf.b1_ = vector_from_json(j.at("b1"), "b1");
    clf.w2_ = matrix_from_json(j.at("w2"), "w2");
    clf.b2_ = vector_from_json(j.at("b2"), "b2");
    clf.head_w_ = matrix_from_json(j.at("head_w"), "head_w");
    clf.head_b_ = vector_from_json(j.at("head_b"), "head_b");
    clf.active_classes_ = j.at("active_classes").get<int>();
    if (clf.w1_.rows() != cfg.hidden_dim || clf.w1_.cols() != cfg.input_dim || clf.w2_.rows() != cfg.embedding_dim ||
        clf.head_w_.rows() != clf.active_classes_ || clf.head_b_.size() != clf.active_classes_)
        throw integrity_error("checkpoint: parameter shapes inconsistent with dims");
    if (!clf.w1_.allFinite() || !clf.w2_.allFinite() || !clf.head_w_.allFinite())
        throw integrity_error("checkpoint: non-finite parameters");
    return clf;
}

TrainItem make_train_item(const Sample& s, int num_classes, int slot) {
    if (slot < 0 || slot >= num_classes) throw contract_error("make_train_item: slot out of range");
    TrainItem item;
    item.features = s.features;
    item.soft_label = Eigen::VectorXd::Zero(num_classes);
    item.soft_label(slot) = 1.0;
    return item;
}

}  // namespace replaycl
