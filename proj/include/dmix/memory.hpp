#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "dmix/audio.hpp"
#include "dmix/corpus.hpp"

namespace dmix {

class MemoryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CapacityPolicy {
  double fraction = 0.10;
  std::size_t min_per_task = 20;
  std::size_t max_per_task = 100;
};

// clamp(ceil(fraction * n), min_per_task, min(max_per_task, n)).
std::size_t retained_count(std::size_t task_train_size, const CapacityPolicy& policy = {});

struct MemoryEntry {
  AudioClip clip;
  int source_task = 0;  // position of the source task in the curriculum
  bool mixed = false;
};

class ReplayMemory {
 public:
  explicit ReplayMemory(CapacityPolicy policy = {}) : policy_(policy) {}

  const CapacityPolicy& policy() const { return policy_; }
  const std::vector<MemoryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t plain_count() const;
  std::size_t mixed_count() const;
  int max_source_task() const;  // -1 when empty

  void add(std::vector<MemoryEntry> entries);

  // Replaces every mixed sample with a fresh set, one per plain entry, paired
  // uniformly over all plain entries so later tasks are covered as well.
  // Leaves no mixed samples (returning 0) when the plain entries hold no
  // semantic or no acoustic clip yet, or when no admissible pairing exists.
  std::size_t refresh_mixed(CombinedMode mode, std::uint64_t seed, std::span<const EventPair> forbidden);

 private:
  CapacityPolicy policy_;
  std::vector<MemoryEntry> entries_;
};

// Seeded class-stratified sample without replacement of retained_count clips.
// Throws MemoryError on an empty train set.
std::vector<MemoryEntry> select_exemplars(std::span<const AudioClip> task_train, int task_id,
                                          std::uint64_t seed, const CapacityPolicy& policy = {});

// Draws count (semantic, acoustic) pairs uniformly from the admissible pool
// pairings and composes them by splice or overlay. Each result carries the
// semantic clip's source task. Throws MemoryError when a pool is empty, the
// mode is none, or every pairing is forbidden.
std::vector<MemoryEntry> make_mixed_samples(std::span<const MemoryEntry> semantic_pool,
                                            std::span<const MemoryEntry> acoustic_pool,
                                            CombinedMode mode, std::size_t count, std::uint64_t seed,
                                            std::span<const EventPair> forbidden);

// Uniform with replacement. Throws MemoryError on an empty memory.
std::vector<const MemoryEntry*> sample_batch(const ReplayMemory& memory, std::size_t batch_size,
                                             std::uint64_t seed);

std::vector<ManifestRecord> memory_manifest(const ReplayMemory& memory);
void write_memory_manifest(const ReplayMemory& memory, const std::filesystem::path& path);

}  // namespace dmix
