#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "replaycl/sample.hpp"

namespace replaycl {

// Ordered partition of class indices into a (possibly empty) pretraining set
// followed by T disjoint tasks. Class sets are stored sorted ascending.
struct TaskSchedule {
    std::vector<std::vector<int>> tasks;
    std::vector<int> pretrain_classes;

    int num_tasks() const { return static_cast<int>(tasks.size()); }
    // Number of classes seen once task `t` (1-based) has been learned.
    int classes_seen_after(int t) const;
    // Task index (1-based) owning class `c`, or 0 for a pretrain class.
    std::optional<int> task_of_class(int c) const;
};

// Training data for one task plus the cumulative test pool over everything
// seen so far (pretraining included).
struct TaskBatch {
    int task_index = 0;  // 1-based
    std::vector<Sample> train;
    std::vector<Sample> test_cumulative;
};

struct TaskSplit {
    std::vector<Sample> pretrain_train;
    std::vector<Sample> pretrain_test;
    std::vector<TaskBatch> batches;
};

struct SyntheticSpec {
    int num_classes = 10;
    int per_class = 200;
    int feature_dim = 16;
    int frames = 4;
    double separation = 2.5;
    std::uint64_t seed = 1;
};

// CSV manifest loader/saver. Format: header `id,label,frames,dim,features`,
// one row per sample, `features` a semicolon-separated row-major float list
// of length frames*dim. Label strings are densified to indices in sorted
// order.
Dataset load_manifest(const std::string& path);
void save_manifest(const Dataset& dataset, const std::string& path);

// Gaussian-blob classes: each class mean is drawn on a sphere of radius
// `separation`, each sample's frames are i.i.d. unit-covariance draws around
// the class mean. Deterministic per seed.
Dataset make_synthetic(const SyntheticSpec& spec);

// Seeded shuffle of class indices, then pretrain classes first and
// `classes_per_task` per task after that. Classes left over (when the
// schedule does not cover the whole dataset) belong to no task and their
// samples are excluded from the splits.
TaskSchedule split_schedule(int num_classes, int num_tasks, int classes_per_task,
                            int pretrain_classes, std::uint64_t seed);

// Per-class stratified train/test split, then one TaskBatch per task with
// the cumulative test pool. Deterministic per seed.
TaskSplit make_task_batches(const Dataset& dataset, const TaskSchedule& schedule,
                            double test_fraction, std::uint64_t seed);

}  // namespace replaycl
