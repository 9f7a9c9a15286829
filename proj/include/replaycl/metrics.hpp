#pragma once

#include <map>
#include <string>
#include <vector>

namespace replaycl {

// Lower-triangular accuracy bookkeeping: row i (1-based) holds the per-task
// test accuracies measured after finishing task i; cell (i, j) is defined
// for j <= i only.
class AccuracyMatrix {
public:
    explicit AccuracyMatrix(int num_tasks);

    // Row for task `t` (1-based); `row` must have exactly t entries in [0, 1].
    void set_row(int t, const std::vector<double>& row);

    bool defined(int i, int j) const;
    double at(int i, int j) const;
    int num_tasks() const { return num_tasks_; }
    bool complete() const;  // all rows recorded

    // rows = after-task index, columns = task index, blank for undefined.
    std::string to_csv() const;

private:
    int num_tasks_;
    std::vector<std::vector<double>> rows_;
};

// Mean of the final row: accuracy averaged over all learned tasks.
double acc(const AccuracyMatrix& matrix);

// Backward transfer: mean of R[T][i] - R[i][i] over i < T. More negative
// means more forgetting. Undefined (throws) for T < 2.
double bwt(const AccuracyMatrix& matrix);

struct ClassAccuracy {
    std::map<int, double> per_class;  // classes absent from the batch are absent here
    double overall = 0.0;             // micro-averaged
};

ClassAccuracy per_class_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

}  // namespace replaycl
