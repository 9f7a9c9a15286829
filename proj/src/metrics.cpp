#include "replaycl/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "replaycl/errors.hpp"

namespace replaycl {

AccuracyMatrix::AccuracyMatrix(int num_tasks) : num_tasks_(num_tasks) {
    if (num_tasks < 1) throw contract_error("AccuracyMatrix: need at least one task");
    rows_.resize(static_cast<std::size_t>(num_tasks));
}

void AccuracyMatrix::set_row(int t, const std::vector<double>& row) {
    if (t < 1 || t > num_tasks_) throw contract_error("AccuracyMatrix: task index out of range");
    if (static_cast<int>(row.size()) != t)
        throw contract_error("AccuracyMatrix: row " + std::to_string(t) + " needs " + std::to_string(t) + " entries");
    for (double v : row)
        if (v < 0.0 || v > 1.0) throw contract_error("AccuracyMatrix: accuracy outside [0, 1]");
    rows_[static_cast<std::size_t>(t - 1)] = row;
}

bool AccuracyMatrix::defined(int i, int j) const {
    if (i < 1 || i > num_tasks_ || j < 1 || j > i) return false;
    return static_cast<int>(rows_[static_cast<std::size_t>(i - 1)].size()) == i;
}

double AccuracyMatrix::at(int i, int j) const {
    if (!defined(i, j)) throw contract_error("AccuracyMatrix: cell (" + std::to_string(i) + ", " + std::to_string(j) +
                                             ") is undefined");
    return rows_[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)];
}

bool AccuracyMatrix::complete() const {
    for (int t = 1; t <= num_tasks_; ++t)
        if (static_cast<int>(rows_[static_cast<std::size_t>(t - 1)].size()) != t) return false;
    return true;
}

std::string AccuracyMatrix::to_csv() const {
    std::ostringstream out;
    out << "after_task";
    for (int j = 1; j <= num_tasks_; ++j) out << ",task_" << j;
    out << '\n';
    char buf[40];
    for (int i = 1; i <= num_tasks_; ++i) {
        out << i;
        for (int j = 1; j <= num_tasks_; ++j) {
            out << ',';
            if (defined(i, j)) {
                std::snprintf(buf, sizeof(buf), "%.17g", at(i, j));
                out << buf;
            }
        }
        out << '\n';
    }
    return out.str();
}

double acc(const AccuracyMatrix& matrix) {
    const int T = matrix.num_tasks();
    double sum = 0.0;
    for (int j = 1; j <= T; ++j) {
        if (!matrix.defined(T, j)) throw contract_error("acc: last row incomplete");
        sum += matrix.at(T, j);
    }
    return sum / static_cast<double>(T);
}

double bwt(const AccuracyMatrix& matrix) {
    const int T = matrix.num_tasks();
    if (T < 2) throw contract_error("bwt: undefined for fewer than two tasks");
    double sum = 0.0;
    for (int i = 1; i < T; ++i) {
        if (!matrix.defined(T, i) || !matrix.defined(i, i)) throw contract_error("bwt: required cells undefined");
        sum += matrix.at(T, i) - matrix.at(i, i);
    }
    return sum / static_cast<double>(T - 1);
}

ClassAccuracy per_class_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size()) throw contract_error("per_class_accuracy: length mismatch");
    std::map<int, std::pair<int, int>> hits_total;  // class -> (hits, total)
    int hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto& [h, t] = hits_total[labels[i]];
        ++t;
        if (predictions[i] == labels[i]) {
            ++h;
            ++hits;
        }
    }
    ClassAccuracy out;
    for (const auto& [cls, ht] : hits_total)
        out.per_class[cls] = static_cast<double>(ht.first) / static_cast<double>(ht.second);
    out.overall = labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size());
    return out;
}

}  // namespace replaycl
