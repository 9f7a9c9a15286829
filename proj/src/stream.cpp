#include "replaycl/stream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "replaycl/errors.hpp"
#include "replaycl/rng.hpp"

namespace replaycl {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, sep)) out.push_back(field);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

double parse_double(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw format_error("trailing characters");
        if (!std::isfinite(v)) throw format_error("non-finite value");
        return v;
    } catch (const format_error&) {
        throw format_error(context + ": bad float '" + s + "'");
    } catch (const std::exception&) {
        throw format_error(context + ": bad float '" + s + "'");
    }
}

int parse_int(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(s, &pos);
        if (pos != s.size()) throw format_error("trailing characters");
        return static_cast<int>(v);
    } catch (const std::exception&) {
        throw format_error(context + ": bad integer '" + s + "'");
    }
}

// Shortest text that round-trips an IEEE double exactly.
std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

int TaskSchedule::classes_seen_after(int t) const {
    int n = static_cast<int>(pretrain_classes.size());
    for (int i = 0; i < t && i < num_tasks(); ++i) n += static_cast<int>(tasks[i].size());
    return n;
}

std::optional<int> TaskSchedule::task_of_class(int c) const {
    if (std::binary_search(pretrain_classes.begin(), pretrain_classes.end(), c)) return 0;
    for (int t = 0; t < num_tasks(); ++t) {
        if (std::binary_search(tasks[t].begin(), tasks[t].end(), c)) return t + 1;
    }
    return std::nullopt;
}

Dataset load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open manifest: " + path);

    std::string line;
    if (!std::getline(in, line)) throw format_error(path + ": empty manifest");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,label,frames,dim,features")
        throw format_error(path + ": bad header '" + line + "'");

    struct RawRow {
        std::string id, label;
        Eigen::MatrixXd features;
    };
    std::vector<RawRow> rows;
    std::set<std::string> seen_ids;
    int dataset_dim = -1;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string ctx = path + ":" + std::to_string(line_no);
        const auto fields = split(line, ',');
        if (fields.size() != 5) throw format_error(ctx + ": expected 5 fields, got " + std::to_string(fields.size()));
        RawRow row;
        row.id = fields[0];
        row.label = fields[1];
        if (row.id.empty()) throw format_error(ctx + ": empty id");
        if (row.label.empty()) throw format_error(ctx + ": empty label");
        if (!seen_ids.insert(row.id).second) throw format_error(ctx + ": duplicate id '" + row.id + "'");
        const int frames = parse_int(fields[2], ctx);
        const int dim = parse_int(fields[3], ctx);
        if (frames < 1 || dim < 1) throw format_error(ctx + ": frames and dim must be >= 1");
        if (dataset_dim < 0) dataset_dim = dim;
        if (dim != dataset_dim)
            throw format_error(ctx + ": feature dim " + std::to_string(dim) + " differs from dataset dim " +
                               std::to_string(dataset_dim));
        const auto values = split(fields[4], ';');
        if (static_cast<int>(values.size()) != frames * dim)
            throw format_error(ctx + ": feature list length " + std::to_string(values.size()) + " != frames*dim " +
                               std::to_string(frames * dim));
        row.features.resize(frames, dim);
        for (int r = 0; r < frames; ++r)
            for (int c = 0; c < dim; ++c) row.features(r, c) = parse_double(values[static_cast<std::size_t>(r) * dim + c], ctx);
        rows.push_back(std::move(row));
    }

    std::set<std::string> label_set;
    for (const auto& row : rows) label_set.insert(row.label);
    Dataset ds;
    ds.label_names.assign(label_set.begin(), label_set.end());
    ds.num_classes = static_cast<int>(ds.label_names.size());
    std::map<std::string, int> label_index;
    for (int i = 0; i < ds.num_classes; ++i) label_index[ds.label_names[i]] = i;
    ds.samples.reserve(rows.size());
    for (auto& row : rows) {
        Sample s;
        s.id = std::move(row.id);
        s.features = std::move(row.features);
        s.label = label_index.at(row.label);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

void save_manifest(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write manifest: " + path);
    out << "id,label,frames,dim,features\n";
    for (const auto& s : dataset.samples) {
        if (s.label < 0 || s.label >= dataset.num_classes)
            throw contract_error("save_manifest: label out of range for sample " + s.id);
        out << s.id << ',' << dataset.label_names[static_cast<std::size_t>(s.label)] << ',' << s.features.rows() << ','
            << s.features.cols() << ',';
        for (int r = 0; r < s.features.rows(); ++r) {
            for (int c = 0; c < s.features.cols(); ++c) {
                if (r != 0 || c != 0) out << ';';
                out << format_double(s.features(r, c));
            }
        }
        out << '\n';
    }
    if (!out) throw io_error("write failed: " + path);
}

Dataset make_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 1 || spec.per_class < 1 || spec.feature_dim < 1 || spec.frames < 1)
        throw contract_error("make_synthetic: all counts must be >= 1");
    if (!(spec.separation > 0.0)) throw contract_error("make_synthetic: separation must be > 0");

    const int label_width = static_cast<int>(std::to_string(spec.num_classes - 1).size());
    Dataset ds;
    ds.num_classes = spec.num_classes;
    ds.label_names.resize(static_cast<std::size_t>(spec.num_classes));

    Rng mean_rng(derive_seed({spec.seed, fnv1a64("synthetic-means")}));
    std::vector<Eigen::VectorXd> means;
    means.reserve(static_cast<std::size_t>(spec.num_classes));
    for (int c = 0; c < spec.num_classes; ++c) {
        Eigen::VectorXd m(spec.feature_dim);
        double norm = 0.0;
        do {
            for (int d = 0; d < spec.feature_dim; ++d) m(d) = mean_rng.normal();
            norm = m.norm();
        } while (norm == 0.0);
        means.push_back(m * (spec.separation / norm));
    }

    for (int c = 0; c < spec.num_classes; ++c) {
        std::string idx = std::to_string(c);
        ds.label_names[static_cast<std::size_t>(c)] =
            "c" + std::string(static_cast<std::size_t>(label_width) - idx.size(), '0') + idx;
        for (int i = 0; i < spec.per_class; ++i) {
            Rng rng(derive_seed({spec.seed, fnv1a64("synthetic-sample"), static_cast<std::uint64_t>(c),
                                 static_cast<std::uint64_t>(i)}));
            Sample s;
            s.id = "syn-" + ds.label_names[static_cast<std::size_t>(c)] + "-" + std::to_string(i);
            s.label = c;
            s.features.resize(spec.frames, spec.feature_dim);
            for (int r = 0; r < spec.frames; ++r)
                for (int d = 0; d < spec.feature_dim; ++d) s.features(r, d) = means[static_cast<std::size_t>(c)](d) + rng.normal();
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

TaskSchedule split_schedule(int num_classes, int num_tasks, int classes_per_task, int pretrain_classes,
                            std::uint64_t seed) {
    if (num_tasks < 1 || classes_per_task < 1 || pretrain_classes < 0)
        throw config_error("split_schedule: num_tasks and classes_per_task must be >= 1, pretrain >= 0");
    const long needed = static_cast<long>(pretrain_classes) + static_cast<long>(num_tasks) * classes_per_task;
    if (needed > num_classes)
        throw config_error("split_schedule: schedule needs " + std::to_string(needed) + " classes but dataset has " +
                           std::to_string(num_classes));

    std::vector<int> order(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) order[static_cast<std::size_t>(c)] = c;
    Rng rng(derive_seed({seed, fnv1a64("schedule")}));
    rng.shuffle(order);

    TaskSchedule schedule;
    auto it = order.begin();
    schedule.pretrain_classes.assign(it, it + pretrain_classes);
    std::sort(schedule.pretrain_classes.begin(), schedule.pretrain_classes.end());
    it += pretrain_classes;
    schedule.tasks.resize(static_cast<std::size_t>(num_tasks));
    for (int t = 0; t < num_tasks; ++t) {
        schedule.tasks[static_cast<std::size_t>(t)].assign(it, it + classes_per_task);
        std::sort(schedule.tasks[static_cast<std::size_t>(t)].begin(), schedule.tasks[static_cast<std::size_t>(t)].end());
        it += classes_per_task;
    }
    return schedule;
}

TaskSplit make_task_batches(const Dataset& dataset, const TaskSchedule& schedule, double test_fraction,
                            std::uint64_t seed) {
    if (!(test_fraction > 0.0) || !(test_fraction < 1.0))
        throw config_error("make_task_batches: test_fraction must be in (0, 1)");

    // Per-class sample indices in dataset order.
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) by_class[dataset.samples[i].label].push_back(i);

    std::map<int, std::vector<std::size_t>> train_of_class, test_of_class;
    for (auto& [cls, indices] : by_class) {
        if (!schedule.task_of_class(cls).has_value()) continue;  // class not scheduled
        if (indices.size() < 2)
            throw config_error("make_task_batches: class " + std::to_string(cls) + " has fewer than 2 samples");
        Rng rng(derive_seed({seed, fnv1a64("split"), static_cast<std::uint64_t>(cls)}));
        rng.shuffle(indices);
        const auto n = indices.size();
        auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_fraction + 0.5));
        n_test = std::max<std::size_t>(1, std::min(n_test, n - 1));
        test_of_class[cls].assign(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(n_test));
        train_of_class[cls].assign(indices.begin() + static_cast<std::ptrdiff_t>(n_test), indices.end());
    }

    auto collect = [&](const std::vector<int>& classes, const std::map<int, std::vector<std::size_t>>& table) {
        std::vector<Sample> out;
        for (int cls : classes) {
            const auto it = table.find(cls);
            if (it == table.end()) continue;
            for (auto idx : it->second) out.push_back(dataset.samples[idx]);
        }
        return out;
    };

    TaskSplit split;
    split.pretrain_train = collect(schedule.pretrain_classes, train_of_class);
    split.pretrain_test = collect(schedule.pretrain_classes, test_of_class);

    std::vector<Sample> cumulative_test = split.pretrain_test;
    for (int t = 1; t <= schedule.num_tasks(); ++t) {
        const auto& task_classes = schedule.tasks[static_cast<std::size_t>(t - 1)];
        TaskBatch batch;
        batch.task_index = t;
        batch.train = collect(task_classes, train_of_class);
        auto task_test = collect(task_classes, test_of_class);
        cumulative_test.insert(cumulative_test.end(), task_test.begin(), task_test.end());
        batch.test_cumulative = cumulative_test;
        split.batches.push_back(std::move(batch));
    }
    return split;
}

}  // namespace replaycl
