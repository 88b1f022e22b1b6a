#include "dmix/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "dmix/features.hpp"
#include "dmix/rng.hpp"
#include "dmix/serialize.hpp"
#include "dmix/wav.hpp"

namespace dmix {
namespace {

struct PendingClip {
  std::optional<int> semantic;
  std::optional<int> acoustic;
};

AudioClip make_clip(const PendingClip& p, const CorpusSpec& spec, Rng& rng,
                    const std::string& id) {
  const double duration = rng.uniform(spec.min_duration_s, spec.max_duration_s);
  AudioClip clip = synth_clip(p.semantic, p.acoustic, duration, rng.next(), spec.background_noise);
  clip.id = id;
  return clip;
}

void assign_task_ids(AudioClip& clip, const std::map<LabelKey, int>& owner) {
  for (auto& label : clip.labels) label.task_id = owner.at(key_of(label));
}

std::string pad(int v, int width) {
  std::string s = std::to_string(v);
  return std::string(width > static_cast<int>(s.size()) ? width - s.size() : 0, '0') + s;
}

}  // namespace

std::string to_string(CombinedMode mode) {
  switch (mode) {
    case CombinedMode::none: return "none";
    case CombinedMode::splice: return "splice";
    case CombinedMode::overlay: return "overlay";
  }
  return "none";
}

CombinedMode combined_mode_from_string(const std::string& text) {
  if (text == "none") return CombinedMode::none;
  if (text == "splice") return CombinedMode::splice;
  if (text == "overlay") return CombinedMode::overlay;
  throw SpecError("unknown combined mode '" + text + "'");
}

CorpusSpec default_corpus_spec() {
  CorpusSpec spec;
  spec.tasks = {{"task0", {0, 1}, {0}}, {"task1", {2, 3}, {1}}, {"task2", {4, 5}, {2}}};
  return spec;
}

void validate_spec(const CorpusSpec& spec) {
  if (spec.num_semantic_classes < 0 || spec.num_acoustic_classes < 0) {
    throw SpecError("corpus spec: negative class count");
  }
  if (spec.tasks.empty()) throw SpecError("corpus spec: no tasks");
  if (spec.clips_per_class < 10) throw SpecError("corpus spec: clips_per_class must be >= 10");
  if (!(spec.min_duration_s >= 0.5 && spec.max_duration_s <= 4.0 &&
        spec.min_duration_s <= spec.max_duration_s)) {
    throw SpecError("corpus spec: durations must satisfy 0.5 <= min <= max <= 4.0");
  }
  if (!(spec.background_noise >= 0.0)) throw SpecError("corpus spec: background_noise must be >= 0");
  if (spec.combined_mode != CombinedMode::none &&
      (spec.combined_tasks < 1 || spec.combined_clips_per_pair < 1 ||
       !(spec.held_out_fraction > 0.0 && spec.held_out_fraction < 1.0))) {
    throw SpecError("corpus spec: invalid combined-task settings");
  }
  std::map<LabelKey, std::size_t> owner;
  auto claim = [&](EventKind kind, int id, int limit, std::size_t task) {
    if (id < 0 || id >= limit) {
      throw SpecError("corpus spec: " + to_string(kind) + " class " + std::to_string(id) +
                      " out of range");
    }
    auto [it, fresh] = owner.emplace(LabelKey{kind, id}, task);
    if (!fresh) {
      throw SpecError("corpus spec: " + to_string(kind) + " class " + std::to_string(id) +
                      " assigned to tasks " + std::to_string(it->second) + " and " +
                      std::to_string(task));
    }
  };
  for (std::size_t t = 0; t < spec.tasks.size(); ++t) {
    if (spec.tasks[t].semantic.empty() && spec.tasks[t].acoustic.empty()) {
      throw SpecError("corpus spec: task " + std::to_string(t) + " has no classes");
    }
    for (int id : spec.tasks[t].semantic) claim(EventKind::semantic, id, spec.num_semantic_classes, t);
    for (int id : spec.tasks[t].acoustic) claim(EventKind::acoustic, id, spec.num_acoustic_classes, t);
  }
  const auto expected = static_cast<std::size_t>(spec.num_semantic_classes + spec.num_acoustic_classes);
  if (owner.size() != expected) throw SpecError("corpus spec: some classes belong to no task");
  if (spec.combined_mode != CombinedMode::none &&
      (spec.num_semantic_classes == 0 || spec.num_acoustic_classes == 0 ||
       spec.num_semantic_classes * spec.num_acoustic_classes < 2)) {
    throw SpecError("corpus spec: combined mode needs at least two semantic/acoustic pairings");
  }
}

std::vector<AudioClip> TaskStream::cumulative_test(std::size_t t) const {
  std::vector<AudioClip> out;
  for (std::size_t i = 0; i <= t && i < tasks.size(); ++i)
    out.insert(out.end(), tasks[i].test.begin(), tasks[i].test.end());
  return out;
}

TaskStream build_task_stream(const CorpusSpec& spec) {
  validate_spec(spec);
  Rng rng(spec.seed);
  TaskStream stream;
  stream.name = spec.name;
  stream.combined_mode = spec.combined_mode;

  std::map<LabelKey, int> owner;
  for (std::size_t t = 0; t < spec.tasks.size(); ++t) {
    for (int id : spec.tasks[t].semantic) owner[{EventKind::semantic, id}] = static_cast<int>(t);
    for (int id : spec.tasks[t].acoustic) owner[{EventKind::acoustic, id}] = static_cast<int>(t);
  }

  for (std::size_t t = 0; t < spec.tasks.size(); ++t) {
    const TaskGroup& group = spec.tasks[t];
    TaskSplit split;
    split.task_id = static_cast<int>(t);
    split.name = group.name.empty() ? "task" + std::to_string(t) : group.name;

    std::vector<PendingClip> pending;
    for (int id : group.semantic) {
      for (int c = 0; c < spec.clips_per_class; ++c) pending.push_back({id, std::nullopt});
      stream.label_universe[split.task_id].push_back(
          {EventKind::semantic, id, default_class_name(EventKind::semantic, id), split.task_id});
    }
    for (int id : group.acoustic) {
      for (int c = 0; c < spec.clips_per_class; ++c) pending.push_back({std::nullopt, id});
      stream.label_universe[split.task_id].push_back(
          {EventKind::acoustic, id, default_class_name(EventKind::acoustic, id), split.task_id});
    }

    // Stratified 80/10/10 split so every class reaches every split.
    std::map<LabelKey, std::vector<AudioClip>> by_class;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      AudioClip clip = make_clip(pending[i], spec, rng,
                                 "t" + pad(split.task_id, 2) + "-" + pad(static_cast<int>(i), 5));
      assign_task_ids(clip, owner);
      by_class[clip.label_keys().front()].push_back(std::move(clip));
    }
    for (auto& [key, clips] : by_class) {
      std::shuffle(clips.begin(), clips.end(), rng.engine());
      const std::size_t n = clips.size();
      const auto n_held = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))));
      const std::size_t n_train = n - 2 * n_held;
      for (std::size_t i = 0; i < n; ++i) {
        auto& dest = i < n_train ? split.train : (i < n_train + n_held ? split.val : split.test);
        dest.push_back(std::move(clips[i]));
      }
    }
    std::shuffle(split.train.begin(), split.train.end(), rng.engine());
    std::shuffle(split.val.begin(), split.val.end(), rng.engine());
    std::shuffle(split.test.begin(), split.test.end(), rng.engine());
    stream.tasks.push_back(std::move(split));
  }

  if (spec.combined_mode == CombinedMode::none) return stream;

  // Held-out pairings follow a shuffled cyclic design so that every semantic
  // class keeps at least one admissible partner when that is possible.
  const int S = spec.num_semantic_classes, A = spec.num_acoustic_classes;
  std::vector<int> sem_order(static_cast<std::size_t>(S)), aco_order(static_cast<std::size_t>(A));
  std::iota(sem_order.begin(), sem_order.end(), 0);
  std::iota(aco_order.begin(), aco_order.end(), 0);
  std::shuffle(sem_order.begin(), sem_order.end(), rng.engine());
  std::shuffle(aco_order.begin(), aco_order.end(), rng.engine());
  const std::size_t total = static_cast<std::size_t>(S) * static_cast<std::size_t>(A);
  auto held = static_cast<std::size_t>(
      std::ceil(spec.held_out_fraction * static_cast<double>(total)));
  held = std::clamp<std::size_t>(held, 1, total - 1);
  for (int k = 0; k < A && stream.held_out_pairs.size() < held; ++k)
    for (int i = 0; i < S && stream.held_out_pairs.size() < held; ++i)
      stream.held_out_pairs.emplace_back(sem_order[static_cast<std::size_t>(i)],
                                         aco_order[static_cast<std::size_t>((i + k) % A)]);
  std::sort(stream.held_out_pairs.begin(), stream.held_out_pairs.end());
  held = stream.held_out_pairs.size();

  const std::size_t n_combined =
      std::min<std::size_t>(static_cast<std::size_t>(spec.combined_tasks), held);
  for (std::size_t j = 0; j < n_combined; ++j) {
    TaskSplit split;
    split.task_id = static_cast<int>(spec.tasks.size() + j);
    split.name = "combined" + std::to_string(j);
    for (std::size_t p = j; p < held; p += n_combined) {
      const auto [s, a] = stream.held_out_pairs[p];
      for (int c = 0; c < spec.combined_clips_per_pair; ++c) {
        const std::string base = "c" + pad(split.task_id, 2) + "-" + pad(static_cast<int>(split.test.size()), 5);
        AudioClip sem = make_clip({s, std::nullopt}, spec, rng, base + "s");
        AudioClip aco = make_clip({std::nullopt, a}, spec, rng, base + "a");
        assign_task_ids(sem, owner);
        assign_task_ids(aco, owner);
        AudioClip mixed = spec.combined_mode == CombinedMode::splice ? splice(sem, aco) : overlay(sem, aco);
        mixed.id = base;
        split.test.push_back(std::move(mixed));
      }
      for (const auto& l : split.test.back().labels) {
        auto& universe = stream.label_universe[split.task_id];
        if (std::none_of(universe.begin(), universe.end(),
                         [&](const EventLabel& u) { return u.same_event(l); }))
          universe.push_back(l);
      }
    }
    stream.combined.push_back(std::move(split));
  }
  return stream;
}

std::vector<EventPair> event_pairs_in(const std::vector<AudioClip>& clips) {
  std::set<EventPair> out;
  for (const auto& c : clips) {
    const auto s = c.label_of(EventKind::semantic);
    const auto a = c.label_of(EventKind::acoustic);
    if (s && a) out.emplace(s->class_id, a->class_id);
  }
  return {out.begin(), out.end()};
}

StreamCheck check_stream(const TaskStream& stream) {
  StreamCheck check;
  std::map<LabelKey, std::size_t> first_seen;
  std::vector<std::set<LabelKey>> train_sets(stream.tasks.size());
  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    for (const auto& clip : stream.tasks[t].train)
      for (const auto& key : clip.label_keys()) train_sets[t].insert(key);
    for (const auto& key : train_sets[t]) {
      auto [it, fresh] = first_seen.emplace(key, t);
      if (!fresh) {
        check.train_labels_disjoint = false;
        check.problems.push_back("label shared by train splits of tasks " +
                                 std::to_string(it->second) + " and " + std::to_string(t));
      }
    }
  }
  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    std::set<LabelKey> covered;
    for (const auto& clip : stream.cumulative_test(t))
      for (const auto& key : clip.label_keys()) covered.insert(key);
    for (std::size_t i = 0; i <= t; ++i)
      for (const auto& key : train_sets[i])
        if (!covered.count(key)) {
          check.cumulative_test_coverage = false;
          check.problems.push_back("cumulative test at step " + std::to_string(t) +
                                   " misses a label of task " + std::to_string(i));
        }
  }
  std::set<EventPair> train_pairs;
  for (const auto& task : stream.tasks)
    for (const auto& p : event_pairs_in(task.train)) train_pairs.insert(p);
  for (const auto& task : stream.combined)
    for (const auto& p : event_pairs_in(task.test))
      if (train_pairs.count(p)) {
        check.combined_pairs_held_out = false;
        check.problems.push_back("combined pairing appears in a train split");
      }
  return check;
}

ManifestRecord manifest_record(const AudioClip& clip, int task_id, const std::string& split,
                               const std::string& path) {
  ManifestRecord r;
  r.path = path;
  for (const auto& l : clip.labels) {
    r.kinds.push_back(to_string(l.kind));
    r.class_ids.push_back(l.class_id);
  }
  r.task_id = task_id;
  r.split = split;
  return r;
}

std::vector<ManifestRecord> stream_manifest(const TaskStream& stream) {
  std::vector<ManifestRecord> out;
  auto emit = [&](const TaskSplit& task, const std::vector<AudioClip>& clips, const std::string& split) {
    for (const auto& c : clips)
      out.push_back(manifest_record(c, task.task_id, split, split + "/" + c.id + ".wav"));
  };
  for (const auto& task : stream.tasks) {
    emit(task, task.train, "train");
    emit(task, task.val, "val");
    emit(task, task.test, "test");
  }
  for (const auto& task : stream.combined) emit(task, task.test, "test");
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line).get<ManifestRecord>());
  }
  return out;
}

void write_corpus(const TaskStream& stream, const std::filesystem::path& dir) {
  const auto records = stream_manifest(stream);
  std::size_t k = 0;
  auto emit = [&](const std::vector<AudioClip>& clips) {
    for (const auto& c : clips) {
      const auto path = dir / records[k++].path;
      std::filesystem::create_directories(path.parent_path());
      wav_write(c, path);
    }
  };
  for (const auto& task : stream.tasks) {
    emit(task.train);
    emit(task.val);
    emit(task.test);
  }
  for (const auto& task : stream.combined) emit(task.test);
  write_manifest(dir / "manifest.jsonl", records);
}

std::string corpus_spec_to_json(const CorpusSpec& spec) { return nlohmann::json(spec).dump(2); }

CorpusSpec corpus_spec_from_json(const std::string& text) {
  return nlohmann::json::parse(text).get<CorpusSpec>();
}

CorpusSpec load_corpus_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot read corpus spec " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return corpus_spec_from_json(buffer.str());
}

void save_corpus_spec(const CorpusSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << corpus_spec_to_json(spec) << '\n';
}

double nearest_centroid_accuracy(const std::vector<AudioClip>& train,
                                 const std::vector<AudioClip>& test) {
  if (train.empty() || test.empty()) throw std::invalid_argument("nearest_centroid: empty split");
  auto mean_feature = [](const AudioClip& clip) {
    const FeatureSeq f = featurize(clip);
    std::vector<double> m(f.num_bins, 0.0);
    for (std::size_t i = 0; i < f.num_frames; ++i)
      for (std::size_t k = 0; k < f.num_bins; ++k) m[k] += f.at(i, k);
    for (double& v : m) v /= static_cast<double>(f.num_frames);
    return m;
  };
  std::map<std::vector<LabelKey>, std::pair<std::vector<double>, int>> centroids;
  for (const auto& clip : train) {
    auto& [sum, count] = centroids[clip.label_keys()];
    const auto m = mean_feature(clip);
    if (sum.empty()) sum.assign(m.size(), 0.0);
    for (std::size_t k = 0; k < m.size(); ++k) sum[k] += m[k];
    ++count;
  }
  for (auto& [key, entry] : centroids)
    for (double& v : entry.first) v /= entry.second;

  int correct = 0;
  for (const auto& clip : test) {
    const auto m = mean_feature(clip);
    double best = std::numeric_limits<double>::infinity();
    const std::vector<LabelKey>* best_key = nullptr;
    for (const auto& [key, entry] : centroids) {
      double d = 0.0;
      for (std::size_t k = 0; k < m.size(); ++k) d += (m[k] - entry.first[k]) * (m[k] - entry.first[k]);
      if (d < best) {
        best = d;
        best_key = &key;
      }
    }
    if (best_key && *best_key == clip.label_keys()) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace dmix
