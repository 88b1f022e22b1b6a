#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dmix/audio.hpp"

namespace dmix {

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class CombinedMode { none, splice, overlay };

std::string to_string(CombinedMode mode);
CombinedMode combined_mode_from_string(const std::string& text);

struct TaskGroup {
  std::string name;
  std::vector<int> semantic;
  std::vector<int> acoustic;
};

struct CorpusSpec {
  std::string name = "synthetic";
  int num_semantic_classes = 6;
  int num_acoustic_classes = 3;
  int clips_per_class = 67;
  std::vector<TaskGroup> tasks;
  std::uint64_t seed = 7;
  CombinedMode combined_mode = CombinedMode::none;
  // Test-only tasks built from held-out (semantic, acoustic) pairings.
  int combined_tasks = 4;
  int combined_clips_per_pair = 10;
  double held_out_fraction = 0.5;
  double min_duration_s = 1.0;
  double max_duration_s = 2.0;
  double background_noise = 0.0;  // see synth_clip
};

// 6 semantic + 3 acoustic classes in three tasks of {2 semantic, 1 acoustic}.
CorpusSpec default_corpus_spec();

// Throws SpecError when a class is unassigned, assigned twice, or out of range.
void validate_spec(const CorpusSpec& spec);

struct TaskSplit {
  int task_id = 0;
  std::string name;
  std::vector<AudioClip> train;
  std::vector<AudioClip> val;
  std::vector<AudioClip> test;
};

using EventPair = std::pair<int, int>;  // (semantic class, acoustic class)

struct TaskStream {
  std::string name;
  CombinedMode combined_mode = CombinedMode::none;
  std::vector<TaskSplit> tasks;
  // Test-only combined-event tasks; never trained on.
  std::vector<TaskSplit> combined;
  std::map<int, std::vector<EventLabel>> label_universe;
  // Pairings reserved for the combined test tasks.
  std::vector<EventPair> held_out_pairs;

  // Union of the test splits of tasks 0..t in stream order.
  std::vector<AudioClip> cumulative_test(std::size_t t) const;
};

TaskStream build_task_stream(const CorpusSpec& spec);

struct StreamCheck {
  bool train_labels_disjoint = true;
  bool cumulative_test_coverage = true;
  bool combined_pairs_held_out = true;
  std::vector<std::string> problems;
  bool ok() const {
    return train_labels_disjoint && cumulative_test_coverage && combined_pairs_held_out;
  }
};

// Manifest-level scan of the protocol invariants.
StreamCheck check_stream(const TaskStream& stream);

std::vector<EventPair> event_pairs_in(const std::vector<AudioClip>& clips);

struct ManifestRecord {
  std::string path;
  std::vector<std::string> kinds;
  std::vector<int> class_ids;
  int task_id = 0;
  std::string split;
  int source_task = -1;  // memory manifests only

  bool operator==(const ManifestRecord&) const = default;
};

std::vector<ManifestRecord> stream_manifest(const TaskStream& stream);
ManifestRecord manifest_record(const AudioClip& clip, int task_id, const std::string& split,
                               const std::string& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

// Writes every clip as WAV under dir plus dir/manifest.jsonl.
void write_corpus(const TaskStream& stream, const std::filesystem::path& dir);

CorpusSpec load_corpus_spec(const std::filesystem::path& path);
void save_corpus_spec(const CorpusSpec& spec, const std::filesystem::path& path);
std::string corpus_spec_to_json(const CorpusSpec& spec);
CorpusSpec corpus_spec_from_json(const std::string& text);

// Mean-feature nearest-centroid classifier over exact label sets; used as a
// learnability oracle for the benchmark.
double nearest_centroid_accuracy(const std::vector<AudioClip>& train,
                                 const std::vector<AudioClip>& test);

}  // namespace dmix
