#include "replaycl/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include "replaycl/errors.hpp"
#include "replaycl/rng.hpp"

namespace replaycl {

std::string to_string(PerturbationKind kind) {
    switch (kind) {
        case PerturbationKind::feature_shift: return "feature_shift";
        case PerturbationKind::feature_time_mask: return "feature_time_mask";
        case PerturbationKind::feature_freq_mask: return "feature_freq_mask";
        case PerturbationKind::feature_clip: return "feature_clip";
        case PerturbationKind::feature_colored_noise: return "feature_colored_noise";
    }
    throw contract_error("unknown perturbation kind");
}

PerturbationKind perturbation_kind_from_string(const std::string& name) {
    if (name == "feature_shift") return PerturbationKind::feature_shift;
    if (name == "feature_time_mask") return PerturbationKind::feature_time_mask;
    if (name == "feature_freq_mask") return PerturbationKind::feature_freq_mask;
    if (name == "feature_clip") return PerturbationKind::feature_clip;
    if (name == "feature_colored_noise") return PerturbationKind::feature_colored_noise;
    throw config_error("unknown perturbation kind: " + name);
}

// Informative kinds lead so that small K still cycles through them; a frame
// roll is invisible to a mean-pooling backbone and goes last.
std::vector<PerturbationSuite> default_suites() {
    std::vector<PerturbationSuite> suites;
    for (auto kind : {PerturbationKind::feature_colored_noise, PerturbationKind::feature_clip,
                      PerturbationKind::feature_time_mask, PerturbationKind::feature_freq_mask,
                      PerturbationKind::feature_shift}) {
        PerturbationSuite s;
        s.kind = kind;
        suites.push_back(s);
    }
    return suites;
}

namespace {

Eigen::MatrixXd roll_rows(const Eigen::MatrixXd& m, long shift) {
    const long n = m.rows();
    Eigen::MatrixXd out(m.rows(), m.cols());
    for (long r = 0; r < n; ++r) {
        long src = (r - shift) % n;
        if (src < 0) src += n;
        out.row(r) = m.row(src);
    }
    return out;
}

double nearest_rank_quantile(std::vector<double>& sorted_values, double q) {
    const auto n = sorted_values.size();
    const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(n - 1)));
    return sorted_values[std::min(idx, n - 1)];
}

}  // namespace

Eigen::MatrixXd perturb_features(const Sample& sample, const PerturbationSuite& suite, int k, std::uint64_t seed) {
    if (k < 0) throw contract_error("perturb_features: k must be >= 0");
    const Eigen::MatrixXd& x = sample.features;
    const long frames = x.rows();
    const long dim = x.cols();
    Rng rng(derive_seed({seed, fnv1a64(sample.id), static_cast<std::uint64_t>(k)}));

    switch (suite.kind) {
        case PerturbationKind::feature_shift: {
            if (suite.max_shift_frames < 0) throw config_error("feature_shift: negative max_shift_frames");
            const long s = rng.uniform_int(-suite.max_shift_frames, suite.max_shift_frames);
            return roll_rows(x, s);
        }
        case PerturbationKind::feature_time_mask: {
            if (suite.max_mask_width < 0) throw config_error("feature_time_mask: negative max_mask_width");
            const long w = suite.max_mask_width == 0
                               ? 0
                               : rng.uniform_int(1, std::min<long>(suite.max_mask_width, frames));
            if (w == 0) return x;
            const long start = rng.uniform_int(0, frames - w);
            Eigen::MatrixXd out = x;
            out.middleRows(start, w).setZero();
            return out;
        }
        case PerturbationKind::feature_freq_mask: {
            if (suite.max_mask_width < 0) throw config_error("feature_freq_mask: negative max_mask_width");
            const long w = suite.max_mask_width == 0
                               ? 0
                               : rng.uniform_int(1, std::min<long>(suite.max_mask_width, dim));
            if (w == 0) return x;
            const long start = rng.uniform_int(0, dim - w);
            Eigen::MatrixXd out = x;
            out.middleCols(start, w).setZero();
            return out;
        }
        case PerturbationKind::feature_clip: {
            if (suite.max_clip_quantile < 0.0 || suite.max_clip_quantile > 0.5)
                throw config_error("feature_clip: max_clip_quantile must be in [0, 0.5]");
            const double q = rng.uniform_real(0.0, suite.max_clip_quantile);
            if (q == 0.0) return x;
            std::vector<double> values(x.data(), x.data() + x.size());
            std::sort(values.begin(), values.end());
            const double lo = nearest_rank_quantile(values, q);
            const double hi = nearest_rank_quantile(values, 1.0 - q);
            return x.cwiseMax(lo).cwiseMin(hi);
        }
        case PerturbationKind::feature_colored_noise: {
            if (suite.noise_amplitude < 0.0) throw config_error("feature_colored_noise: negative amplitude");
            if (suite.noise_smoothing < 0.0 || suite.noise_smoothing >= 1.0)
                throw config_error("feature_colored_noise: smoothing must be in [0, 1)");
            const double a = suite.noise_amplitude;
            const double rho = suite.noise_smoothing;
            Eigen::MatrixXd out = x;
            for (long c = 0; c < dim; ++c) {
                double n = 0.0;
                for (long r = 0; r < frames; ++r) {
                    const double white = rng.uniform_real(-a, a);
                    n = (r == 0) ? white : rho * n + (1.0 - rho) * white;
                    out(r, c) += n;
                }
            }
            return out;
        }
    }
    throw config_error("perturb_features: unknown perturbation kind");
}

Eigen::VectorXd perturb_embedding(const Eigen::VectorXd& embedding, double lambda_noise, int k, std::uint64_t seed) {
    if (embedding.size() == 0) throw contract_error("perturb_embedding: empty embedding");
    if (!embedding.allFinite()) throw contract_error("perturb_embedding: non-finite embedding");
    if (lambda_noise < 0.0) throw contract_error("perturb_embedding: lambda_noise must be >= 0");

    const double mean = embedding.mean();
    const double var = (embedding.array() - mean).square().mean();  // population variance
    const double std_e = std::sqrt(var);
    if (lambda_noise == 0.0 || std_e == 0.0) return embedding;

    Rng rng(derive_seed({seed, fnv1a64("embedding-noise"), static_cast<std::uint64_t>(k)}));
    Eigen::VectorXd out = embedding;
    for (Eigen::Index i = 0; i < out.size(); ++i)
        out(i) += rng.uniform_real(-lambda_noise / 2.0, lambda_noise / 2.0) * std_e;
    return out;
}

double uncertainty_from_true_class_probs(const std::vector<double>& probs) {
    if (probs.empty()) throw contract_error("uncertainty: no probabilities");
    double sum = 0.0;
    for (double p : probs) {
        if (p < 0.0 || p > 1.0) throw contract_error("uncertainty: probability out of [0, 1]");
        sum += p;
    }
    return 1.0 - sum / static_cast<double>(probs.size());
}

UncertaintyScore score_waveform_style(Classifier& clf, const Sample& sample, int true_class_slot,
                                      const std::vector<PerturbationSuite>& suites, int k_perturb, std::uint64_t seed) {
    if (k_perturb < 1) throw contract_error("score_waveform_style: K must be >= 1");
    if (suites.empty()) throw contract_error("score_waveform_style: no perturbation suites");
    if (true_class_slot < 0 || true_class_slot >= clf.active_classes())
        throw contract_error("score_waveform_style: label outside active classes");

    std::vector<double> probs;
    probs.reserve(static_cast<std::size_t>(k_perturb));
    for (int k = 0; k < k_perturb; ++k) {
        const auto& suite = suites[static_cast<std::size_t>(k) % suites.size()];
        const Eigen::MatrixXd view = perturb_features(sample, suite, k, seed);
        const auto result = clf.forward(view);
        probs.push_back(softmax_T(result.logits, 1.0)(true_class_slot));
    }
    return {sample.id, uncertainty_from_true_class_probs(probs), k_perturb};
}

UncertaintyScore score_embedding_style(Classifier& clf, const Sample& sample, int true_class_slot, double lambda_noise,
                                       int k_perturb, std::uint64_t seed) {
    if (k_perturb < 1) throw contract_error("score_embedding_style: K must be >= 1");
    if (true_class_slot < 0 || true_class_slot >= clf.active_classes())
        throw contract_error("score_embedding_style: label outside active classes");

    const auto base = clf.forward(sample.features);  // the only backbone call
    const std::uint64_t sample_seed = derive_seed({seed, fnv1a64(sample.id)});
    std::vector<double> probs;
    probs.reserve(static_cast<std::size_t>(k_perturb));
    for (int k = 0; k < k_perturb; ++k) {
        const Eigen::VectorXd noisy = perturb_embedding(base.embedding, lambda_noise, k, sample_seed);
        const Eigen::VectorXd logits = clf.head_only(noisy);
        probs.push_back(softmax_T(logits, 1.0)(true_class_slot));
    }
    return {sample.id, uncertainty_from_true_class_probs(probs), k_perturb};
}

}  // namespace replaycl
