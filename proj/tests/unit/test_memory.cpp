#include <doctest.h>

#include <cmath>
#include <set>

#include "dmix/memory.hpp"
#include "dmix/rng.hpp"

using namespace dmix;

namespace {

std::vector<AudioClip> fake_task(std::size_t n, int classes, EventKind kind, int first_class = 0) {
  std::vector<AudioClip> out;
  for (std::size_t i = 0; i < n; ++i) {
    AudioClip c;
    c.id = "x" + std::to_string(i);
    c.samples.assign(8, 0.1);
    const int k = first_class + static_cast<int>(i % static_cast<std::size_t>(classes));
    c.labels = {{kind, k, default_class_name(kind, k), 0}};
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<MemoryEntry> as_entries(const std::vector<AudioClip>& clips, int task) {
  std::vector<MemoryEntry> out;
  for (const auto& c : clips) out.push_back({c, task, false});
  return out;
}

}  // namespace

TEST_CASE("retained counts follow the clamp rule") {
  CHECK(retained_count(500) == 50);
  CHECK(retained_count(50) == 20);
  CHECK(retained_count(5000) == 100);
  CHECK(retained_count(201) == 21);
  CHECK(retained_count(12) == 12);
  for (std::size_t n = 1; n < 3000; n += 7) {
    const std::size_t c = retained_count(n);
    CHECK(c <= n);
    CHECK(c <= 100);
    CHECK(c >= std::min<std::size_t>(20, n));
  }
}

TEST_CASE("select_exemplars sizes, stratification and determinism") {
  const auto task = fake_task(500, 5, EventKind::semantic);
  const auto picked = select_exemplars(task, 2, 9);
  CHECK(picked.size() == 50);
  std::map<int, int> per_class;
  std::set<std::string> ids;
  for (const auto& e : picked) {
    CHECK(e.source_task == 2);
    CHECK_FALSE(e.mixed);
    ++per_class[e.clip.labels[0].class_id];
    ids.insert(e.clip.id);
  }
  CHECK(ids.size() == 50);
  for (const auto& [k, n] : per_class) CHECK(n == 10);

  CHECK(select_exemplars(fake_task(50, 2, EventKind::acoustic), 0, 1).size() == 20);
  CHECK(select_exemplars(fake_task(5000, 3, EventKind::semantic), 0, 1).size() == 100);

  const auto again = select_exemplars(task, 2, 9);
  for (std::size_t i = 0; i < picked.size(); ++i) CHECK(again[i].clip.id == picked[i].clip.id);
  const auto other = select_exemplars(task, 2, 10);
  bool differs = false;
  for (std::size_t i = 0; i < picked.size(); ++i) differs |= other[i].clip.id != picked[i].clip.id;
  CHECK(differs);

  CHECK_THROWS_AS(select_exemplars(std::vector<AudioClip>{}, 0, 1), MemoryError);
}

TEST_CASE("memory size after several tasks is the sum of clamped counts") {
  ReplayMemory memory;
  const std::size_t sizes[] = {201, 50, 1200, 7};
  std::size_t expected = 0;
  for (int t = 0; t < 4; ++t) {
    memory.add(select_exemplars(fake_task(sizes[t], 3, EventKind::semantic, 3 * t), t, 4));
    expected += retained_count(sizes[t]);
    CHECK(memory.size() == expected);
    CHECK(memory.max_source_task() == t);
  }
}

TEST_CASE("make_mixed_samples contract and forbidden-pair scan") {
  const auto sem = as_entries(fake_task(12, 4, EventKind::semantic), 0);
  const auto aco = as_entries(fake_task(6, 3, EventKind::acoustic), 1);
  const auto spliced = make_mixed_samples(sem, aco, CombinedMode::splice, 10, 3, {});
  REQUIRE(spliced.size() == 10);
  for (const auto& e : spliced) {
    REQUIRE(e.clip.labels.size() == 2);
    CHECK(e.clip.label_of(EventKind::semantic).has_value());
    CHECK(e.clip.label_of(EventKind::acoustic).has_value());
    CHECK(e.clip.samples.size() == 16);
    CHECK(e.source_task == 0);
    CHECK(e.mixed);
  }

  std::vector<EventPair> all;
  for (int s = 0; s < 4; ++s)
    for (int a = 0; a < 3; ++a) all.emplace_back(s, a);
  CHECK_THROWS_AS(make_mixed_samples(sem, aco, CombinedMode::overlay, 5, 3, all), MemoryError);
  CHECK_THROWS_AS(make_mixed_samples(sem, {}, CombinedMode::splice, 5, 3, {}), MemoryError);
  CHECK_THROWS_AS(make_mixed_samples(sem, aco, CombinedMode::none, 5, 3, {}), MemoryError);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<EventPair> forbidden;
    for (const auto& p : all)
      if (rng.uniform() < 0.6) forbidden.push_back(p);
    if (forbidden.size() == all.size()) forbidden.pop_back();
    const auto mixed = make_mixed_samples(sem, aco, CombinedMode::overlay, 200, seed, forbidden);
    std::size_t violations = 0;
    for (const auto& e : mixed) {
      const EventPair p{e.clip.label_of(EventKind::semantic)->class_id, e.clip.label_of(EventKind::acoustic)->class_id};
      violations += std::count(forbidden.begin(), forbidden.end(), p);
    }
    CHECK(violations == 0);
  }
}

TEST_CASE("refresh_mixed rebuilds one mixed sample per plain entry") {
  ReplayMemory memory;
  memory.add(as_entries(fake_task(20, 2, EventKind::semantic), 0));
  CHECK(memory.refresh_mixed(CombinedMode::splice, 1, {}) == 0);
  memory.add(as_entries(fake_task(20, 1, EventKind::acoustic), 1));
  CHECK(memory.refresh_mixed(CombinedMode::splice, 1, {}) == 40);
  CHECK(memory.plain_count() == 40);
  CHECK(memory.mixed_count() == 40);
  const auto first = memory.entries();
  CHECK(memory.refresh_mixed(CombinedMode::splice, 1, {}) == 40);
  CHECK(memory.size() == 80);
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(memory.entries()[i].clip.id == first[i].clip.id);
  CHECK(memory.refresh_mixed(CombinedMode::none, 2, {}) == 0);
  const std::vector<EventPair> forbid_all{{0, 0}, {1, 0}};
  memory.add(as_entries(fake_task(4, 2, EventKind::semantic), 2));
  CHECK(memory.refresh_mixed(CombinedMode::splice, 3, forbid_all) == 0);
  CHECK(memory.mixed_count() == 0);
  CHECK(memory.max_source_task() == 2);
}

TEST_CASE("sample_batch draws uniformly with replacement") {
  ReplayMemory one;
  one.add(as_entries(fake_task(1, 1, EventKind::semantic), 0));
  const auto batch = sample_batch(one, 4, 1);
  REQUIRE(batch.size() == 4);
  for (const auto* e : batch) CHECK(e == &one.entries()[0]);

  ReplayMemory five;
  five.add(as_entries(fake_task(5, 5, EventKind::semantic), 0));
  CHECK(sample_batch(five, 16, 7) == sample_batch(five, 16, 7));

  const std::size_t draws = 10000;
  std::map<const MemoryEntry*, std::size_t> counts;
  for (const auto* e : sample_batch(five, draws, 11)) ++counts[e];
  const double expected = draws / 5.0;
  const double sigma = std::sqrt(draws * 0.2 * 0.8);
  CHECK(counts.size() == 5);
  for (const auto& [e, n] : counts) CHECK(std::abs(static_cast<double>(n) - expected) <= 3 * sigma);

  CHECK_THROWS_AS(sample_batch(ReplayMemory{}, 4, 1), MemoryError);
}

TEST_CASE("memory manifest records the source task") {
  ReplayMemory memory;
  memory.add(as_entries(fake_task(3, 3, EventKind::acoustic), 4));
  const auto records = memory_manifest(memory);
  REQUIRE(records.size() == 3);
  for (const auto& r : records) {
    CHECK(r.source_task == 4);
    CHECK(r.split == "memory");
  }
}
