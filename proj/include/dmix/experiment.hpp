#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmix/baselines.hpp"
#include "dmix/gradcheck.hpp"
#include "dmix/metrics.hpp"

namespace dmix {

struct ExperimentConfig {
  CorpusSpec corpus = default_corpus_spec();
  Method method = Method::double_mixture;
  TrainConfig train;
  ModelConfig model;
  BaselineConfig baseline;
  BackboneSpec backbone;
  std::vector<int> task_order;  // empty means the corpus order
  std::filesystem::path output_dir = "runs";
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

// Throws ConfigError on an unknown method, an empty seed list, an order that
// is not a bijection over the corpus task ids, or invalid nested settings.
void validate(const ExperimentConfig& config);

// Unknown keys are rejected so that typos do not silently fall back to
// defaults. Missing keys take the defaults above.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// "default" or a comma-separated list of task ids.
std::vector<int> parse_task_order(const std::string& text);

// Reorders the tasks so that position k holds the task whose id is
// permutation[k]. Task ids, labels and combined tasks are left untouched.
// Throws ConfigError unless permutation is a bijection over the task ids.
TaskStream permute_order(const TaskStream& stream, std::span<const int> permutation);

// The pretrained decoder body for a backbone spec, built once per process
// and configuration. nullptr when pretraining is disabled.
const MoeDecoderModel* shared_backbone(const ModelConfig& model, const BackboneSpec& spec, EncodingCache& cache);

struct RunResult {
  Method method = Method::double_mixture;
  std::string dataset;
  std::uint64_t seed = 0;
  std::vector<int> task_ids;  // curriculum order
  ResultMatrix matrix{1};
  double avg_acc = 0.0;
  double avg_forgetting = 0.0;
  std::vector<double> per_task;  // final row
  std::vector<double> combined;  // one accuracy per combined test task
  std::vector<TaskRecord> records;
};

// One seed of one method; writes nothing.
RunResult run_seed(const ExperimentConfig& config, std::uint64_t seed, EncodingCache& cache);

// Files every run directory must hold, and nothing else.
const std::vector<std::string>& run_files();
std::filesystem::path run_directory(const ExperimentConfig& config, std::uint64_t seed);
void write_run(const ExperimentConfig& config, const RunResult& result);
// Empty when the directory holds exactly run_files().
std::vector<std::string> check_run_directory(const std::filesystem::path& dir);

// Runs every seed, writes each run directory and checks it. Throws StateError
// when the stream fails its protocol scan or a run directory is malformed.
std::vector<RunResult> run_experiment(const ExperimentConfig& config, EncodingCache& cache);

struct RunSummary {
  std::string method;
  std::string dataset;
  std::uint64_t seed = 0;
  double avg_acc = 0.0;
  double avg_forgetting = 0.0;
};

RunSummary summary_of(const RunResult& result);
// Every metrics.json below root, in path order.
std::vector<RunSummary> collect_runs(const std::filesystem::path& root);

struct ReportRow {
  std::string method;
  std::string dataset;
  double avg_acc_mean = 0.0;
  double avg_acc_std = 0.0;  // population
  double forgetting_mean = 0.0;
  double forgetting_std = 0.0;
  std::size_t seeds = 0;
};

// One row per (method, dataset) in order of first appearance.
std::vector<ReportRow> summarize(std::span<const RunSummary> runs);
// Header method,dataset,avg_acc_mean,avg_acc_std,forgetting_mean,
// forgetting_std,seeds; metrics as two-decimal percentages.
std::string report_csv(std::span<const ReportRow> rows);
void emit_report(std::span<const RunSummary> runs, const std::filesystem::path& path);

// Finite-difference check of the full training objective (task and replay
// cross-entropy, mixing weight 0.5, gate weight 0.1) on a d=16, b=4,
// two-block, two-expert model with every expert, router and head weight
// unfrozen and randomised.
GradCheckReport total_loss_gradient_check(std::uint64_t seed, double epsilon = 1e-6);

}  // namespace dmix
