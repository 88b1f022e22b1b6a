#include "dmix/memory.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dmix/rng.hpp"

namespace dmix {
namespace {

template <typename T>
void fisher_yates(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng.index(i)]);
}

bool is_single(const MemoryEntry& e, EventKind kind) {
  return !e.mixed && e.clip.labels.size() == 1 && e.clip.labels.front().kind == kind;
}

}  // namespace

std::size_t retained_count(std::size_t n, const CapacityPolicy& policy) {
  const auto want = static_cast<std::size_t>(std::ceil(policy.fraction * static_cast<double>(n) - 1e-9));
  const std::size_t hi = std::min(policy.max_per_task, n);
  return std::clamp(want, std::min(policy.min_per_task, hi), hi);
}

std::size_t ReplayMemory::plain_count() const {
  return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [](const MemoryEntry& e) { return !e.mixed; }));
}

std::size_t ReplayMemory::mixed_count() const { return size() - plain_count(); }

int ReplayMemory::max_source_task() const {
  int m = -1;
  for (const auto& e : entries_) m = std::max(m, e.source_task);
  return m;
}

void ReplayMemory::add(std::vector<MemoryEntry> entries) {
  for (auto& e : entries) entries_.push_back(std::move(e));
}

std::size_t ReplayMemory::refresh_mixed(CombinedMode mode, std::uint64_t seed, std::span<const EventPair> forbidden) {
  if (mode == CombinedMode::none) return 0;
  std::vector<MemoryEntry> plain, semantic, acoustic;
  for (auto& e : entries_) {
    if (e.mixed) continue;
    if (is_single(e, EventKind::semantic)) semantic.push_back(e);
    if (is_single(e, EventKind::acoustic)) acoustic.push_back(e);
    plain.push_back(std::move(e));
  }
  entries_ = std::move(plain);
  if (semantic.empty() || acoustic.empty()) return 0;
  std::vector<MemoryEntry> fresh;
  try {
    fresh = make_mixed_samples(semantic, acoustic, mode, entries_.size(), seed, forbidden);
  } catch (const MemoryError&) {
    return 0;
  }
  const std::size_t added = fresh.size();
  add(std::move(fresh));
  return added;
}

std::vector<MemoryEntry> select_exemplars(std::span<const AudioClip> task_train, int task_id,
                                          std::uint64_t seed, const CapacityPolicy& policy) {
  if (task_train.empty()) throw MemoryError("select_exemplars: empty train set for task " + std::to_string(task_id));
  std::map<std::vector<LabelKey>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < task_train.size(); ++i) groups[task_train[i].label_keys()].push_back(i);

  std::vector<std::size_t> quota(groups.size(), 0);
  std::vector<std::size_t> sizes;
  for (const auto& [key, members] : groups) sizes.push_back(members.size());
  std::size_t remaining = retained_count(task_train.size(), policy);
  while (remaining > 0) {
    for (std::size_t g = 0; g < quota.size() && remaining > 0; ++g) {
      if (quota[g] < sizes[g]) {
        ++quota[g];
        --remaining;
      }
    }
  }

  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(task_id)));
  std::vector<MemoryEntry> out;
  std::size_t g = 0;
  for (auto& [key, members] : groups) {
    fisher_yates(members, rng);
    std::vector<std::size_t> chosen(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota[g++]));
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t i : chosen) out.push_back({task_train[i], task_id, false});
  }
  return out;
}

std::vector<MemoryEntry> make_mixed_samples(std::span<const MemoryEntry> semantic_pool,
                                            std::span<const MemoryEntry> acoustic_pool,
                                            CombinedMode mode, std::size_t count, std::uint64_t seed,
                                            std::span<const EventPair> forbidden) {
  if (semantic_pool.empty() || acoustic_pool.empty()) throw MemoryError("make_mixed_samples: empty pool");
  if (mode == CombinedMode::none) throw MemoryError("make_mixed_samples: mode must be splice or overlay");
  const auto class_of = [](const MemoryEntry& e, EventKind kind) {
    const auto l = e.clip.label_of(kind);
    if (!l) throw MemoryError("make_mixed_samples: clip " + e.clip.id + " lacks a " + to_string(kind) + " label");
    return l->class_id;
  };
  std::vector<std::pair<std::size_t, std::size_t>> admissible;
  for (std::size_t i = 0; i < semantic_pool.size(); ++i) {
    const int s = class_of(semantic_pool[i], EventKind::semantic);
    for (std::size_t j = 0; j < acoustic_pool.size(); ++j) {
      const EventPair pair{s, class_of(acoustic_pool[j], EventKind::acoustic)};
      if (std::find(forbidden.begin(), forbidden.end(), pair) == forbidden.end()) admissible.emplace_back(i, j);
    }
  }
  if (admissible.empty()) throw MemoryError("make_mixed_samples: every pairing is forbidden");

  Rng rng(seed);
  std::vector<MemoryEntry> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const auto [i, j] = admissible[rng.index(admissible.size())];
    const AudioClip& a = semantic_pool[i].clip;
    const AudioClip& b = acoustic_pool[j].clip;
    out.push_back({mode == CombinedMode::splice ? splice(a, b) : overlay(a, b), semantic_pool[i].source_task, true});
  }
  return out;
}

std::vector<const MemoryEntry*> sample_batch(const ReplayMemory& memory, std::size_t batch_size, std::uint64_t seed) {
  if (memory.empty()) throw MemoryError("sample_batch: memory is empty");
  Rng rng(seed);
  std::vector<const MemoryEntry*> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) out.push_back(&memory.entries()[rng.index(memory.size())]);
  return out;
}

std::vector<ManifestRecord> memory_manifest(const ReplayMemory& memory) {
  std::vector<ManifestRecord> out;
  for (const auto& e : memory.entries()) {
    ManifestRecord r = manifest_record(e.clip, e.source_task, e.mixed ? "memory-mixed" : "memory",
                                       "memory/" + e.clip.id + ".wav");
    r.source_task = e.source_task;
    out.push_back(std::move(r));
  }
  return out;
}

void write_memory_manifest(const ReplayMemory& memory, const std::filesystem::path& path) {
  write_manifest(path, memory_manifest(memory));
}

}  // namespace dmix
