#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdio>
#include <nlohmann/json.hpp>

#include "replaycl/experiment.hpp"
#include "replaycl/learn.hpp"
#include "replaycl/memory.hpp"
#include "replaycl/metrics.hpp"
#include "replaycl/stream.hpp"
#include "replaycl/uncertainty.hpp"

namespace py = pybind11;
using namespace replaycl;

namespace {

AccuracyMatrix matrix_from_rows(const std::vector<std::vector<double>>& rows) {
    AccuracyMatrix m(static_cast<int>(rows.size()));
    for (std::size_t t = 0; t < rows.size(); ++t) m.set_row(static_cast<int>(t) + 1, rows[t]);
    return m;
}

py::dict summary_dict(const RunResult& r) {
    py::dict d;
    d["acc"] = r.acc;
    if (r.bwt)
        d["bwt"] = *r.bwt;
    else
        d["bwt"] = py::none();
    d["total_backbone_calls"] = r.total_backbone_calls;
    d["total_head_calls"] = r.total_head_calls;
    d["scoring_backbone_calls"] = r.scoring_backbone_calls;
    d["scoring_head_calls"] = r.scoring_head_calls;
    d["wall_time_s"] = r.wall_time_s;
    d["scoring_wall_time_s"] = r.scoring_wall_time_s;
    d["out_dir"] = r.out_dir;
    return d;
}

ExperimentConfig config_from_py(const std::string& config_json) {
    return config_from_json(nlohmann::json::parse(config_json));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Replay-based class-incremental continual learning core";

    // Base first: translators run newest-first, so the specific exceptions
    // must be registered after their base to take precedence.
    py::register_exception<error>(m, "ReplayClError", PyExc_RuntimeError);
    py::register_exception<config_error>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<contract_error>(m, "ContractError", PyExc_ValueError);

    py::class_<Dataset>(m, "Dataset")
        .def_readonly("num_classes", &Dataset::num_classes)
        .def_readonly("label_names", &Dataset::label_names)
        .def("__len__", [](const Dataset& d) { return d.samples.size(); })
        .def("sample", [](const Dataset& d, std::size_t i) {
            if (i >= d.samples.size()) throw py::index_error();
            const auto& s = d.samples[i];
            py::dict out;
            out["id"] = s.id;
            out["label"] = s.label;
            out["features"] = s.features;
            return out;
        });

    m.def("make_synthetic",
          [](int num_classes, int per_class, int feature_dim, int frames, double separation, std::uint64_t seed) {
              SyntheticSpec spec{num_classes, per_class, feature_dim, frames, separation, seed};
              return make_synthetic(spec);
          },
          py::arg("num_classes"), py::arg("per_class"), py::arg("feature_dim"), py::arg("frames"),
          py::arg("separation"), py::arg("seed"));
    m.def("load_manifest", &load_manifest, py::arg("path"));
    m.def("save_manifest", &save_manifest, py::arg("dataset"), py::arg("path"));

    m.def("softmax_t", &softmax_T, py::arg("logits"), py::arg("temperature") = 1.0);
    m.def("lambda_schedule", &lambda_schedule, py::arg("n_prev"), py::arg("n_t"));
    m.def("ce_loss", py::overload_cast<const Eigen::VectorXd&, int>(&ce_loss), py::arg("logits"), py::arg("label"));
    m.def("ce_loss_soft", py::overload_cast<const Eigen::VectorXd&, const Eigen::VectorXd&>(&ce_loss),
          py::arg("logits"), py::arg("soft_label"));
    m.def("kd_loss", &kd_loss, py::arg("student_logits"), py::arg("teacher_logits"), py::arg("n_prev"),
          py::arg("temperature") = 2.0, py::arg("t2_rescale") = false);
    m.def("perturb_embedding", &perturb_embedding, py::arg("embedding"), py::arg("lambda_noise"), py::arg("k"),
          py::arg("seed"));
    m.def("uncertainty_from_probs", &uncertainty_from_true_class_probs, py::arg("true_class_probs"));
    m.def("quota", &quota, py::arg("capacity"), py::arg("num_classes"));

    // Diversity-aware selection on raw (label, score) pairs; returns the
    // selected candidate indices. Thin wrapper around the buffer update.
    m.def("diversity_select",
          [](const std::vector<int>& labels, const std::vector<double>& scores, int capacity) {
              if (labels.size() != scores.size()) throw contract_error("diversity_select: length mismatch");
              ReplayBuffer empty;
              empty.capacity = capacity;
              std::vector<Sample> incoming;
              std::map<std::string, double> score_map;
              char buf[16];
              for (std::size_t i = 0; i < labels.size(); ++i) {
                  std::snprintf(buf, sizeof(buf), "%08zu", i);
                  Sample s;
                  s.id = buf;
                  s.label = labels[i];
                  s.features = Eigen::MatrixXd::Zero(1, 1);
                  incoming.push_back(std::move(s));
                  score_map[buf] = scores[i];
              }
              const auto updated = update_diversity(empty, incoming, capacity, score_map);
              std::vector<std::size_t> selected;
              for (const auto& e : updated.entries) selected.push_back(std::stoull(e.sample.id));
              return selected;
          },
          py::arg("labels"), py::arg("scores"), py::arg("capacity"));

    m.def("acc", [](const std::vector<std::vector<double>>& rows) { return acc(matrix_from_rows(rows)); },
          py::arg("rows"));
    m.def("bwt", [](const std::vector<std::vector<double>>& rows) { return bwt(matrix_from_rows(rows)); },
          py::arg("rows"));

    m.def("run_experiment",
          [](const std::string& config_json) { return summary_dict(run_experiment(config_from_py(config_json))); },
          py::arg("config_json"), "Run one experiment from a JSON config string; returns the summary.");
    m.def("compare_experiments",
          [](const std::string& config_json, const std::vector<std::string>& strategies) {
              const auto rows = compare_experiments(config_from_py(config_json), strategies);
              py::list out;
              for (const auto& row : rows) {
                  py::dict d;
                  d["strategy"] = row.strategy;
                  if (row.result)
                      d["summary"] = summary_dict(*row.result);
                  else
                      d["error"] = row.error;
                  out.append(d);
              }
              return out;
          },
          py::arg("config_json"), py::arg("strategies"));
}
