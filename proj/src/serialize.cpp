#include "dmix/serialize.hpp"

namespace dmix {

void to_json(nlohmann::json& j, const TaskGroup& g) {
  j = {{"name", g.name}, {"semantic", g.semantic}, {"acoustic", g.acoustic}};
}

void from_json(const nlohmann::json& j, TaskGroup& g) {
  g.name = j.value("name", std::string{});
  g.semantic = j.value("semantic", std::vector<int>{});
  g.acoustic = j.value("acoustic", std::vector<int>{});
}

void to_json(nlohmann::json& j, const CorpusSpec& s) {
  j = {{"name", s.name},
       {"num_semantic_classes", s.num_semantic_classes},
       {"num_acoustic_classes", s.num_acoustic_classes},
       {"clips_per_class", s.clips_per_class},
       {"tasks", s.tasks},
       {"seed", s.seed},
       {"combined_mode", to_string(s.combined_mode)},
       {"combined_tasks", s.combined_tasks},
       {"combined_clips_per_pair", s.combined_clips_per_pair},
       {"held_out_fraction", s.held_out_fraction},
       {"min_duration_s", s.min_duration_s},
       {"max_duration_s", s.max_duration_s},
       {"background_noise", s.background_noise}};
}

void from_json(const nlohmann::json& j, CorpusSpec& s) {
  const CorpusSpec d = default_corpus_spec();
  s.name = j.value("name", d.name);
  s.num_semantic_classes = j.value("num_semantic_classes", d.num_semantic_classes);
  s.num_acoustic_classes = j.value("num_acoustic_classes", d.num_acoustic_classes);
  s.clips_per_class = j.value("clips_per_class", d.clips_per_class);
  s.tasks = j.contains("tasks") ? j.at("tasks").get<std::vector<TaskGroup>>() : d.tasks;
  s.seed = j.value("seed", d.seed);
  s.combined_mode = combined_mode_from_string(j.value("combined_mode", to_string(d.combined_mode)));
  s.combined_tasks = j.value("combined_tasks", d.combined_tasks);
  s.combined_clips_per_pair = j.value("combined_clips_per_pair", d.combined_clips_per_pair);
  s.held_out_fraction = j.value("held_out_fraction", d.held_out_fraction);
  s.min_duration_s = j.value("min_duration_s", d.min_duration_s);
  s.max_duration_s = j.value("max_duration_s", d.max_duration_s);
  s.background_noise = j.value("background_noise", d.background_noise);
}

void to_json(nlohmann::json& j, const ManifestRecord& r) {
  j = {{"path", r.path},
       {"kinds", r.kinds},
       {"class_ids", r.class_ids},
       {"task_id", r.task_id},
       {"split", r.split}};
  if (r.source_task >= 0) j["source_task"] = r.source_task;
}

void from_json(const nlohmann::json& j, ManifestRecord& r) {
  r.path = j.at("path").get<std::string>();
  r.kinds = j.at("kinds").get<std::vector<std::string>>();
  r.class_ids = j.at("class_ids").get<std::vector<int>>();
  r.task_id = j.at("task_id").get<int>();
  r.split = j.at("split").get<std::string>();
  r.source_task = j.value("source_task", -1);
}

}  // namespace dmix
