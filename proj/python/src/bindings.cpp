#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dmix/experiment.hpp"

namespace py = pybind11;
using namespace dmix;

namespace {

ResultMatrix matrix_of(const std::vector<std::vector<double>>& rows) {
  ResultMatrix r(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t i = 0; i < rows[t].size(); ++i) r.record(t, i, rows[t][i]);
  return r;
}

py::dict run_dict(const RunResult& r) {
  std::vector<std::vector<double>> rows;
  for (std::size_t t = 0; t < r.matrix.tasks(); ++t) {
    rows.emplace_back();
    for (std::size_t i = 0; i <= t; ++i) rows.back().push_back(r.matrix.at(t, i));
  }
  py::dict d;
  d["method"] = to_string(r.method);
  d["dataset"] = r.dataset;
  d["seed"] = r.seed;
  d["task_order"] = r.task_ids;
  d["matrix"] = rows;
  d["avg_acc"] = r.avg_acc;
  d["avg_forgetting"] = r.avg_forgetting;
  d["per_task"] = r.per_task;
  d["combined"] = r.combined;
  return d;
}

ExperimentConfig parse_config(const std::string& text) {
  return experiment_config_from_json(nlohmann::json::parse(text));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<SpecError>(m, "SpecError", PyExc_ValueError);
  py::register_exception<MetricsError>(m, "MetricsError", PyExc_ValueError);
  py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);

  m.def("methods", [] {
    std::vector<std::string> out;
    for (Method x : all_methods()) out.push_back(to_string(x));
    return out;
  });
  m.def("default_config", [] { return to_json(ExperimentConfig{}).dump(); });
  m.def("normalize_config", [](const std::string& text) { return to_json(parse_config(text)).dump(); });

  m.def("mean_of", &mean_of);
  m.def("avg_accuracy", [](const std::vector<std::vector<double>>& rows) { return avg_accuracy(matrix_of(rows)); });
  m.def("avg_forgetting", [](const std::vector<std::vector<double>>& rows) { return avg_forgetting(matrix_of(rows)); });

  m.def("data_loss", [](double task, double memory, double lambda) {
    return data_loss(Tensor::scalar(task), Tensor::scalar(memory), lambda).item();
  });
  m.def("total_loss", [](double data, double gate, double eta) {
    return total_loss(Tensor::scalar(data), Tensor::scalar(gate), eta).item();
  });
  m.def("agem_project", [](const std::vector<double>& g, const std::vector<double>& ref) { return agem_project(g, ref); });
  m.def("ewc_penalty", [](const std::vector<double>& theta, const std::vector<double>& fisher,
                          const std::vector<double>& anchor, double strength) {
    Parameter p("w", Tensor::from({theta.size()}, theta));
    std::vector<Parameter*> ps{&p};
    FisherEstimate f;
    f.fisher["w"] = fisher;
    f.anchor["w"] = anchor;
    f.strength = strength;
    return ewc_penalty(ps, f).item();
  });
  m.def("lwf_loss", [](const std::vector<double>& student, const std::vector<double>& teacher, double task_loss,
                       double alpha, double temperature) {
    const Shape s{1, student.size()}, t{1, teacher.size()};
    return lwf_loss(Tensor::from(s, student), Tensor::from(t, teacher), Tensor::scalar(task_loss), alpha, temperature).item();
  });

  m.def("splice_lengths", [](int semantic, int acoustic, double da, double db, std::uint64_t seed) {
    const AudioClip a = synth_clip(semantic, std::nullopt, da, seed);
    const AudioClip b = synth_clip(std::nullopt, acoustic, db, seed + 1);
    return std::vector<std::size_t>{a.samples.size(), b.samples.size(), splice(a, b).samples.size(), overlay(a, b).samples.size()};
  });

  m.def("stream_summary", [](const std::string& config) {
    const ExperimentConfig c = parse_config(config);
    const TaskStream s = build_task_stream(c.corpus);
    const StreamCheck check = check_stream(s);
    py::dict d;
    std::vector<py::dict> tasks;
    for (const auto& t : s.tasks) {
      py::dict td;
      td["task_id"] = t.task_id;
      td["train"] = t.train.size();
      td["val"] = t.val.size();
      td["test"] = t.test.size();
      tasks.push_back(td);
    }
    d["tasks"] = tasks;
    d["combined_tasks"] = s.combined.size();
    d["held_out_pairs"] = s.held_out_pairs;
    d["ok"] = check.ok();
    d["problems"] = check.problems;
    return d;
  });
  m.def("write_corpus", [](const std::string& config, const std::filesystem::path& dir) {
    write_corpus(build_task_stream(parse_config(config).corpus), dir);
  });

  m.def("run_seed", [](const std::string& config, std::uint64_t seed) {
    EncodingCache cache;
    RunResult r;
    {
      py::gil_scoped_release release;
      r = run_seed(parse_config(config), seed, cache);
    }
    return run_dict(r);
  }, py::arg("config"), py::arg("seed"));
  m.def("run_experiment", [](const std::string& config) {
    EncodingCache cache;
    std::vector<RunResult> rs;
    {
      py::gil_scoped_release release;
      rs = run_experiment(parse_config(config), cache);
    }
    std::vector<py::dict> out;
    for (const auto& r : rs) out.push_back(run_dict(r));
    return out;
  });
  m.def("report_csv", [](const std::filesystem::path& root) {
    const auto runs = collect_runs(root);
    return report_csv(summarize(runs));
  });
  m.def("grad_check", [](std::uint64_t seed) {
    const GradCheckReport r = total_loss_gradient_check(seed);
    py::dict d;
    d["max_relative_error"] = r.max_relative_error;
    d["worst_parameter"] = r.worst_parameter;
    d["worst_index"] = r.worst_index;
    d["checked"] = r.checked;
    return d;
  });
}
