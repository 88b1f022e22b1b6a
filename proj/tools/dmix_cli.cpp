#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "dmix/experiment.hpp"

using namespace dmix;
namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::vector<std::uint64_t> seeds;
  std::string order;
  std::string method;
  std::string output;
};

ExperimentConfig configure(const std::string& path, const Overrides& o) {
  ExperimentConfig c = load_experiment_config(path);
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (!o.order.empty()) c.task_order = parse_task_order(o.order);
  if (!o.method.empty()) c.method = method_from_string(o.method);
  if (!o.output.empty()) c.output_dir = o.output;
  validate(c);
  return c;
}

int gen_corpus(const ExperimentConfig& c, const std::string& out) {
  const fs::path dir = out.empty() ? c.output_dir / "corpus" : fs::path(out);
  const TaskStream stream = build_task_stream(c.corpus);
  const StreamCheck check = check_stream(stream);
  for (const auto& p : check.problems) std::fprintf(stderr, "stream: %s\n", p.c_str());
  write_corpus(stream, dir);
  std::size_t clips = 0;
  for (const auto& t : stream.tasks) clips += t.train.size() + t.val.size() + t.test.size();
  for (const auto& t : stream.combined) clips += t.test.size();
  std::printf("wrote %zu clips in %zu tasks (+%zu combined) to %s\n", clips, stream.tasks.size(),
              stream.combined.size(), dir.string().c_str());
  return check.ok() ? 0 : 1;
}

int run(const ExperimentConfig& c) {
  EncodingCache cache;
  for (std::uint64_t seed : c.seeds) {
    ExperimentConfig one = c;
    one.seeds = {seed};
    const RunResult r = run_experiment(one, cache).front();
    std::printf("%s seed %llu  avg_acc %s  forgetting %s", to_string(r.method).c_str(),
                static_cast<unsigned long long>(seed), percent(r.avg_acc).c_str(), percent(r.avg_forgetting).c_str());
    if (!r.combined.empty()) {
      double m = 0.0;
      for (double v : r.combined) m += v;
      std::printf("  combined %s", percent(m / static_cast<double>(r.combined.size())).c_str());
    }
    std::printf("  -> %s\n", run_directory(c, seed).string().c_str());
  }
  return 0;
}

int report(const std::string& target, const std::string& out) {
  const fs::path root = fs::is_directory(target) ? fs::path(target) : load_experiment_config(target).output_dir;
  const auto runs = collect_runs(root);
  if (runs.empty()) {
    std::fprintf(stderr, "report: no metrics.json below %s\n", root.string().c_str());
    return 1;
  }
  const fs::path path = out.empty() ? root / "report.csv" : fs::path(out);
  emit_report(runs, path);
  const auto rows = summarize(runs);
  std::cout << report_csv(rows);
  std::printf("-> %s\n", path.string().c_str());
  return 0;
}

int grad_check(std::vector<std::uint64_t> seeds, double tolerance) {
  if (seeds.empty()) seeds = {1, 2, 3, 4, 5};
  bool ok = true;
  for (std::uint64_t seed : seeds) {
    const GradCheckReport r = total_loss_gradient_check(seed);
    const bool pass = r.max_relative_error < tolerance;
    ok = ok && pass;
    std::printf("seed %llu  max relative error %.3e over %zu values (worst %s[%zu])  %s\n",
                static_cast<unsigned long long>(seed), r.max_relative_error, r.checked, r.worst_parameter.c_str(),
                r.worst_index, pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual event detection with a growing mixture of adapter experts and mixed replay"};
  app.require_subcommand(1);

  std::string config_path, out, report_target;
  Overrides o;
  double tolerance = 1e-4;

  auto* gen = app.add_subcommand("gen-corpus", "Write the synthetic benchmark as WAV files plus a manifest");
  gen->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Corpus directory (default: <output_dir>/corpus)");

  auto* run_cmd = app.add_subcommand("run", "Train and evaluate one method over the curriculum for each seed");
  run_cmd->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", o.seeds, "Seed(s) overriding the config");
  run_cmd->add_option("--order", o.order, "Task order as comma-separated task ids, or 'default'");
  run_cmd->add_option("--method", o.method, "Method overriding the config");
  run_cmd->add_option("--output", o.output, "Output directory overriding the config");

  auto* rep = app.add_subcommand("report", "Aggregate metrics.json files into a summary CSV");
  rep->add_option("target", report_target, "Experiment config or run directory")->required()->check(CLI::ExistingPath);
  rep->add_option("--out", out, "Summary CSV (default: <root>/report.csv)");

  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of the training objective");
  grad->add_option("config", config_path, "Unused; accepted for a uniform command line");
  grad->add_option("--seed", o.seeds, "Seeds (default 1..5)");
  grad->add_option("--tolerance", tolerance, "Maximum relative error")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return gen_corpus(configure(config_path, o), out);
    if (*run_cmd) return run(configure(config_path, o));
    if (*rep) return report(report_target, out);
    if (*grad) return grad_check(o.seeds, tolerance);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const SpecError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
