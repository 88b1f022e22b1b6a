#include "dmix/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "dmix/ops.hpp"
#include "dmix/serialize.hpp"

namespace dmix {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

json train_json(const TrainConfig& c) {
  return {{"lambda", c.lambda},
          {"eta", c.eta},
          {"epochs_per_task", c.epochs_per_task},
          {"batch_size", c.batch_size},
          {"initial_lr", c.initial_lr},
          {"lr_decay_factor", c.lr_decay_factor},
          {"clip_norm", c.clip_norm},
          {"weight_decay", c.weight_decay}};
}

TrainConfig train_from(const json& j) {
  reject_unknown(j, {"lambda", "eta", "epochs_per_task", "batch_size", "initial_lr", "lr_decay_factor", "clip_norm", "weight_decay"}, "train");
  TrainConfig c;
  c.lambda = j.value("lambda", c.lambda);
  c.eta = j.value("eta", c.eta);
  c.epochs_per_task = j.value("epochs_per_task", c.epochs_per_task);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.initial_lr = j.value("initial_lr", c.initial_lr);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  return c;
}

json model_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},           {"heads", c.heads},
          {"bottleneck", c.bottleneck},     {"encoder_blocks", c.encoder_blocks},
          {"decoder_blocks", c.decoder_blocks}, {"ffn_hidden", c.ffn_hidden},
          {"pool", c.pool},                 {"backbone_seed", c.backbone_seed}};
}

ModelConfig model_from(const json& j) {
  reject_unknown(j, {"d_model", "heads", "bottleneck", "encoder_blocks", "decoder_blocks", "ffn_hidden", "pool", "backbone_seed"}, "model");
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.bottleneck = j.value("bottleneck", c.bottleneck);
  c.encoder_blocks = j.value("encoder_blocks", c.encoder_blocks);
  c.decoder_blocks = j.value("decoder_blocks", c.decoder_blocks);
  c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
  c.pool = j.value("pool", c.pool);
  c.backbone_seed = j.value("backbone_seed", c.backbone_seed);
  return c;
}

json baseline_json(const BaselineConfig& c) {
  return {{"ewc_strength", c.ewc_strength}, {"lwf_alpha", c.lwf_alpha}, {"lwf_temperature", c.lwf_temperature}};
}

BaselineConfig baseline_from(const json& j) {
  reject_unknown(j, {"ewc_strength", "lwf_alpha", "lwf_temperature"}, "baseline");
  BaselineConfig c;
  c.ewc_strength = j.value("ewc_strength", c.ewc_strength);
  c.lwf_alpha = j.value("lwf_alpha", c.lwf_alpha);
  c.lwf_temperature = j.value("lwf_temperature", c.lwf_temperature);
  return c;
}

json backbone_json(const BackboneSpec& s) {
  return {{"enabled", s.enabled},
          {"semantic_classes", s.semantic_classes},
          {"acoustic_classes", s.acoustic_classes},
          {"clips_per_class", s.clips_per_class},
          {"mixed_per_round", s.mixed_per_round},
          {"background_noise", s.background_noise},
          {"min_duration_s", s.min_duration_s},
          {"max_duration_s", s.max_duration_s},
          {"epochs", s.epochs},
          {"learning_rate", s.learning_rate},
          {"seed", s.seed}};
}

BackboneSpec backbone_from(const json& j) {
  reject_unknown(j, {"enabled", "semantic_classes", "acoustic_classes", "clips_per_class", "mixed_per_round", "background_noise",
                     "min_duration_s", "max_duration_s", "epochs", "learning_rate", "seed"}, "backbone");
  BackboneSpec s;
  s.enabled = j.value("enabled", s.enabled);
  s.semantic_classes = j.value("semantic_classes", s.semantic_classes);
  s.acoustic_classes = j.value("acoustic_classes", s.acoustic_classes);
  s.clips_per_class = j.value("clips_per_class", s.clips_per_class);
  s.mixed_per_round = j.value("mixed_per_round", s.mixed_per_round);
  s.background_noise = j.value("background_noise", s.background_noise);
  s.min_duration_s = j.value("min_duration_s", s.min_duration_s);
  s.max_duration_s = j.value("max_duration_s", s.max_duration_s);
  s.epochs = j.value("epochs", s.epochs);
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.seed = j.value("seed", s.seed);
  return s;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write " + path.string());
  out << text;
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double population_std(std::span<const double> v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

std::string backbone_key(const ModelConfig& model, const BackboneSpec& spec) {
  ModelConfig m = model;
  m.seed = 0;
  return model_json(m).dump() + backbone_json(spec).dump();
}

constexpr std::uint64_t kGradCheckCorpusSeed = 11;

}  // namespace

void validate(const ExperimentConfig& c) {
  validate_spec(c.corpus);
  validate(c.train);
  if (c.backbone.enabled) validate(c.backbone);
  if (c.seeds.empty()) throw ConfigError("experiment: at least one seed is required");
  if (!c.task_order.empty()) {
    std::vector<int> ids(c.corpus.tasks.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    std::vector<int> sorted = c.task_order;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != ids) throw ConfigError("experiment: task_order must be a permutation of the task ids");
  }
  if (c.backbone.enabled && c.corpus.num_semantic_classes > kBackboneClassOffset) {
    throw ConfigError("experiment: corpus classes overlap the backbone pretraining classes");
  }
}

ExperimentConfig experiment_config_from_json(const json& j) {
  reject_unknown(j, {"corpus", "method", "train", "model", "baseline", "backbone", "task_order", "output_dir", "seeds"}, "experiment");
  ExperimentConfig c;
  if (j.contains("corpus")) c.corpus = j.at("corpus").get<CorpusSpec>();
  if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
  if (j.contains("train")) c.train = train_from(j.at("train"));
  if (j.contains("model")) c.model = model_from(j.at("model"));
  if (j.contains("baseline")) c.baseline = baseline_from(j.at("baseline"));
  if (j.contains("backbone")) c.backbone = backbone_from(j.at("backbone"));
  if (j.contains("task_order")) {
    const json& o = j.at("task_order");
    if (o.is_string()) {
      c.task_order = parse_task_order(o.get<std::string>());
    } else {
      c.task_order = o.get<std::vector<int>>();
    }
  }
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  validate(c);
  return c;
}

json to_json(const ExperimentConfig& c) {
  json order = c.task_order.empty() ? json("default") : json(c.task_order);
  return {{"corpus", c.corpus},
          {"method", to_string(c.method)},
          {"train", train_json(c.train)},
          {"model", model_json(c.model)},
          {"baseline", baseline_json(c.baseline)},
          {"backbone", backbone_json(c.backbone)},
          {"task_order", order},
          {"output_dir", c.output_dir.generic_string()},
          {"seeds", c.seeds}};
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(slurp(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return experiment_config_from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::vector<int> parse_task_order(const std::string& text) {
  if (text.empty() || text == "default") return {};
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("task order: '" + item + "' is not a task id");
    }
  }
  return out;
}

TaskStream permute_order(const TaskStream& stream, std::span<const int> permutation) {
  if (permutation.size() != stream.tasks.size()) {
    throw ConfigError("permute_order: permutation has " + std::to_string(permutation.size()) + " entries for " +
                      std::to_string(stream.tasks.size()) + " tasks");
  }
  TaskStream out = stream;
  out.tasks.clear();
  std::set<int> used;
  for (int id : permutation) {
    auto it = std::find_if(stream.tasks.begin(), stream.tasks.end(), [&](const TaskSplit& t) { return t.task_id == id; });
    if (it == stream.tasks.end() || !used.insert(id).second) {
      throw ConfigError("permute_order: not a bijection over the task ids");
    }
    out.tasks.push_back(*it);
  }
  return out;
}

const MoeDecoderModel* shared_backbone(const ModelConfig& model, const BackboneSpec& spec, EncodingCache& cache) {
  if (!spec.enabled) return nullptr;
  static std::map<std::string, std::unique_ptr<MoeDecoderModel>> built;
  auto& slot = built[backbone_key(model, spec)];
  if (!slot) slot = std::make_unique<MoeDecoderModel>(pretrain_backbone(model, spec, cache));
  return slot.get();
}

RunResult run_seed(const ExperimentConfig& config, std::uint64_t seed, EncodingCache& cache) {
  validate(config);
  TaskStream stream = build_task_stream(config.corpus);
  if (!config.task_order.empty()) stream = permute_order(stream, config.task_order);

  ModelConfig model = config.model;
  model.seed = seed;
  TrainConfig train = config.train;
  train.seed = seed;
  const MoeDecoderModel* backbone = shared_backbone(model, config.backbone, cache);
  ContinualLearner learner(config.method, model, train, config.baseline, cache, stream.combined_mode,
                           stream.held_out_pairs, backbone);

  RunResult result;
  result.method = config.method;
  result.dataset = config.corpus.name;
  result.seed = seed;
  const std::size_t T = stream.tasks.size();
  result.matrix = ResultMatrix(T);
  for (const auto& t : stream.tasks) result.task_ids.push_back(t.task_id);

  if (config.method == Method::mtl) {
    result.records.push_back(learner.learn_joint(stream.tasks));
    std::vector<double> acc(T);
    for (std::size_t i = 0; i < T; ++i) acc[i] = evaluate(learner.model(), stream.tasks[i].test, cache);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i <= t; ++i) result.matrix.record(t, i, acc[i]);
  } else {
    for (std::size_t t = 0; t < T; ++t) {
      result.records.push_back(learner.learn(stream.tasks[t], static_cast<int>(t)));
      for (std::size_t i = 0; i <= t; ++i)
        result.matrix.record(t, i, evaluate(learner.model(), stream.tasks[i].test, cache));
    }
  }
  result.avg_acc = avg_accuracy(result.matrix);
  result.avg_forgetting = avg_forgetting(result.matrix);
  for (std::size_t i = 0; i < T; ++i) result.per_task.push_back(result.matrix.at(T - 1, i));
  for (const auto& c : stream.combined) result.combined.push_back(evaluate(learner.model(), c.test, cache));
  return result;
}

const std::vector<std::string>& run_files() {
  static const std::vector<std::string> files{"config.json", "r_matrix.csv", "metrics.json", "train_log.jsonl",
                                              "plot_data.csv"};
  return files;
}

std::filesystem::path run_directory(const ExperimentConfig& config, std::uint64_t seed) {
  return config.output_dir / to_string(config.method) / ("seed_" + std::to_string(seed));
}

void write_run(const ExperimentConfig& config, const RunResult& r) {
  const std::filesystem::path dir = run_directory(config, r.seed);
  std::filesystem::create_directories(dir);

  ExperimentConfig snapshot = config;
  snapshot.seeds = {r.seed};
  write_text(dir / "config.json", to_json(snapshot).dump(2) + "\n");
  write_text(dir / "r_matrix.csv", r.matrix.to_csv());

  json metrics = {{"method", to_string(r.method)},
                  {"dataset", r.dataset},
                  {"seed", r.seed},
                  {"task_order", r.task_ids},
                  {"avg_acc", r.avg_acc},
                  {"avg_forgetting", r.avg_forgetting},
                  {"per_task", r.per_task},
                  {"combined", r.combined}};
  if (!r.combined.empty()) metrics["combined_mean"] = mean(r.combined);
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");

  std::ostringstream log;
  for (std::size_t k = 0; k < r.records.size(); ++k) {
    for (const auto& e : r.records[k].epochs) {
      const json line = {{"checkpoint", k},
                         {"task_id", r.records[k].task_id},
                         {"epoch", e.epoch},
                         {"train_loss", e.train_loss},
                         {"gate_loss", e.gate_loss},
                         {"val_acc", e.val_acc},
                         {"lr", e.lr}};
      log << line.dump() << '\n';
    }
  }
  write_text(dir / "train_log.jsonl", log.str());

  std::ostringstream plot;
  plot << "checkpoint,trained_task,task,accuracy\n";
  const std::size_t T = r.matrix.tasks();
  for (std::size_t t = 0; t < T; ++t) {
    double seen = 0.0;
    for (std::size_t i = 0; i <= t; ++i) {
      plot << t << ',' << r.task_ids[t] << ',' << r.task_ids[i] << ',' << percent(r.matrix.at(t, i)) << '\n';
      seen += r.matrix.at(t, i);
    }
    plot << t << ',' << r.task_ids[t] << ",mean," << percent(seen / static_cast<double>(t + 1)) << '\n';
  }
  write_text(dir / "plot_data.csv", plot.str());
}

std::vector<std::string> check_run_directory(const std::filesystem::path& dir) {
  std::vector<std::string> problems;
  if (!std::filesystem::is_directory(dir)) return {dir.string() + " is not a directory"};
  std::set<std::string> present;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) present.insert(entry.path().filename().string());
  for (const auto& f : run_files()) {
    if (!present.erase(f)) problems.push_back("missing " + f);
  }
  for (const auto& extra : present) problems.push_back("unexpected " + extra);
  return problems;
}

std::vector<RunResult> run_experiment(const ExperimentConfig& config, EncodingCache& cache) {
  validate(config);
  const StreamCheck check = check_stream(build_task_stream(config.corpus));
  if (!check.ok()) {
    std::string text = "run: stream fails its protocol scan:";
    for (const auto& p : check.problems) text += " " + p + ";";
    throw StateError(text);
  }
  std::vector<RunResult> results;
  for (std::uint64_t seed : config.seeds) {
    results.push_back(run_seed(config, seed, cache));
    write_run(config, results.back());
    const auto problems = check_run_directory(run_directory(config, seed));
    if (!problems.empty()) throw StateError("run: " + run_directory(config, seed).string() + ": " + problems.front());
  }
  return results;
}

RunSummary summary_of(const RunResult& r) {
  return {to_string(r.method), r.dataset, r.seed, r.avg_acc, r.avg_forgetting};
}

std::vector<RunSummary> collect_runs(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> files;
  if (!std::filesystem::is_directory(root)) throw ConfigError("report: " + root.string() + " is not a directory");
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root))
    if (entry.is_regular_file() && entry.path().filename() == "metrics.json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<RunSummary> out;
  for (const auto& f : files) {
    try {
      const json j = json::parse(slurp(f));
      out.push_back({j.at("method").get<std::string>(), j.at("dataset").get<std::string>(),
                     j.at("seed").get<std::uint64_t>(), j.at("avg_acc").get<double>(),
                     j.at("avg_forgetting").get<double>()});
    } catch (const json::exception& e) {
      throw ConfigError(f.string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<ReportRow> summarize(std::span<const RunSummary> runs) {
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> values;
  for (const auto& r : runs) {
    const auto key = std::make_pair(r.method, r.dataset);
    if (!values.count(key)) keys.push_back(key);
    values[key].first.push_back(r.avg_acc);
    values[key].second.push_back(r.avg_forgetting);
  }
  std::vector<ReportRow> rows;
  for (const auto& key : keys) {
    const auto& [acc, fgt] = values.at(key);
    rows.push_back({key.first, key.second, mean(acc), population_std(acc), mean(fgt), population_std(fgt), acc.size()});
  }
  return rows;
}

std::string report_csv(std::span<const ReportRow> rows) {
  std::ostringstream out;
  out << "method,dataset,avg_acc_mean,avg_acc_std,forgetting_mean,forgetting_std,seeds\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.dataset << ',' << percent(r.avg_acc_mean) << ',' << percent(r.avg_acc_std) << ','
        << percent(r.forgetting_mean) << ',' << percent(r.forgetting_std) << ',' << r.seeds << '\n';
  }
  return out.str();
}

void emit_report(std::span<const RunSummary> runs, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto rows = summarize(runs);
  write_text(path, report_csv(rows));
}

GradCheckReport total_loss_gradient_check(std::uint64_t seed, double epsilon) {
  CorpusSpec spec = default_corpus_spec();
  spec.clips_per_class = 10;
  spec.seed = kGradCheckCorpusSeed;
  const TaskStream stream = build_task_stream(spec);

  ModelConfig config;
  config.d_model = 16;
  config.heads = 2;
  config.bottleneck = 4;
  config.encoder_blocks = 1;
  config.decoder_blocks = 2;
  config.ffn_hidden = 32;
  config.seed = seed;
  MoeDecoderModel model(config);
  register_labels(model, stream.tasks[0].train);
  register_labels(model, stream.tasks[1].train);
  model.add_expert(0);
  model.add_expert(1);
  for (std::size_t b = 0; b < config.decoder_blocks; ++b)
    for (auto& e : model.decoder_block(b).experts) {
      e.down.set_frozen(false);
      e.up.set_frozen(false);
    }
  Rng rng(mix_seed(seed, 0x6C0C));
  std::vector<Parameter*> params = model.trainable_parameters();
  for (Parameter* p : params)
    for (double& v : p->value.mutable_data()) v = rng.uniform(-0.5, 0.5);

  EncodingCache cache;
  const std::vector<const AudioClip*> task{&stream.tasks[1].train[0], &stream.tasks[1].train[1]};
  const std::vector<const AudioClip*> replay{&stream.tasks[0].train[0], &stream.tasks[0].train[1]};
  const auto loss = [&] {
    std::vector<RouterTrace> traces;
    std::vector<std::size_t> gold;
    const auto part = [&](const std::vector<const AudioClip*>& clips, std::size_t g) {
      Tensor sum;
      for (std::size_t i = 0; i < clips.size(); ++i) {
        ClipPass pass = clip_loss(model, cache.get(model, *clips[i]), *clips[i]);
        sum = i == 0 ? pass.loss : ops::add(sum, pass.loss);
        traces.push_back(pass.forward.trace);
        gold.push_back(g);
      }
      return ops::scale(sum, 1.0 / static_cast<double>(clips.size()));
    };
    const Tensor data = data_loss(part(task, 1), part(replay, 0), 0.5);
    return total_loss(data, gate_loss(traces, gold), 0.1);
  };
  return grad_check_report(loss, params, epsilon);
}

}  // namespace dmix
