#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "replaycl/model.hpp"
#include "replaycl/sample.hpp"

namespace replaycl {

// Feature-matrix perturbations. Every kind preserves the matrix shape and is
// deterministic per (sample id, perturbation index, seed).
enum class PerturbationKind {
    feature_shift,         // roll rows (frames) by a random offset
    feature_time_mask,     // zero a random block of frames
    feature_freq_mask,     // zero a random block of feature columns
    feature_clip,          // clamp magnitudes at a random quantile
    feature_colored_noise, // temporally smoothed bounded noise
};

std::string to_string(PerturbationKind kind);
PerturbationKind perturbation_kind_from_string(const std::string& name);

struct PerturbationSuite {
    PerturbationKind kind = PerturbationKind::feature_colored_noise;
    int max_shift_frames = 2;        // feature_shift
    int max_mask_width = 2;          // feature_time_mask / feature_freq_mask
    double max_clip_quantile = 0.2;  // feature_clip
    double noise_amplitude = 0.4;    // feature_colored_noise, per-entry bound
    double noise_smoothing = 0.8;    // AR(1) coefficient along frames
};

// One suite of each kind with default parameters.
std::vector<PerturbationSuite> default_suites();

struct UncertaintyScore {
    std::string sample_id;
    double u = 0.0;  // in [0, 1]
    int k_perturb = 0;
};

Eigen::MatrixXd perturb_features(const Sample& sample, const PerturbationSuite& suite, int k, std::uint64_t seed);

// Adds i.i.d. uniform noise on (-lambda/2, +lambda/2), scaled by the
// population standard deviation of the embedding's components.
Eigen::VectorXd perturb_embedding(const Eigen::VectorXd& embedding, double lambda_noise, int k, std::uint64_t seed);

// u(x) = 1 - mean true-class probability over the K perturbed views.
double uncertainty_from_true_class_probs(const std::vector<double>& probs);

// Input-space scoring: one full forward pass per perturbed view, i.e.
// exactly K backbone calls per sample.
UncertaintyScore score_waveform_style(Classifier& clf, const Sample& sample, int true_class_slot,
                                      const std::vector<PerturbationSuite>& suites, int k_perturb, std::uint64_t seed);

// Embedding-space scoring: one forward pass to get the embedding, then K
// head-only evaluations of perturbed embeddings. Exactly 1 backbone call per
// sample regardless of K.
UncertaintyScore score_embedding_style(Classifier& clf, const Sample& sample, int true_class_slot, double lambda_noise,
                                       int k_perturb, std::uint64_t seed);

}  // namespace replaycl
