#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace replaycl {

// One labeled training example. `features` is a frames x dim matrix of
// precomputed (already normalized) features; `id` is unique within a dataset
// and is the sample's identity everywhere in the framework.
struct Sample {
    std::string id;
    Eigen::MatrixXd features;  // frames x feature-dim
    int label = 0;             // dense class index, 0-based

    friend bool operator==(const Sample& a, const Sample& b) { return a.id == b.id; }
};

struct Dataset {
    std::vector<Sample> samples;
    int num_classes = 0;
    std::vector<std::string> label_names;  // size num_classes, sorted

    int feature_dim() const { return samples.empty() ? 0 : static_cast<int>(samples.front().features.cols()); }
};

}  // namespace replaycl
