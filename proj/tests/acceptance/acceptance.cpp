// Prints one PASS/FAIL line per acceptance criterion. Pass criterion numbers
// to run a subset; the exit status counts the failures.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "dmix/experiment.hpp"
#include "dmix/ops.hpp"
#include "dmix/rng.hpp"

using namespace dmix;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

ExperimentConfig config_named(const std::string& name) {
  ExperimentConfig c = load_experiment_config(fs::path(DMIX_CONFIG_DIR) / (name + ".json"));
  c.output_dir = fs::temp_directory_path() / "dmix_acceptance" / name;
  return c;
}

EncodingCache& shared_cache() {
  static EncodingCache cache;
  return cache;
}

Outcome metric_oracle() {
  const double a = mean_of({81.00, 76.85, 67.87, 69.38, 66.52});
  const double b = mean_of({85.00, 70.00, 72.10, 69.40, 68.82});
  return {std::abs(a - 72.32) <= 0.01 && std::abs(b - 73.06) <= 0.01, fmt("%.4f", a) + " and " + fmt("%.4f", b)};
}

Outcome unit_suite() {
  std::vector<std::string> bad;
  Rng rng(1);

  AdapterExpert fresh;
  fresh.down = Parameter("down", uniform_init({8, 3}, 8, rng));
  fresh.up = Parameter("up", Tensor::zeros({3, 8}));
  const Tensor h = uniform_init({5, 8}, 1, rng);
  const Tensor same = adapter_forward(fresh, h);
  if (!std::equal(h.data().begin(), h.data().end(), same.data().begin())) bad.push_back("zero-init identity");

  const Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
  Router ramp{Parameter("g", Tensor::from({3, 2}, {0.5, 0, 1, 0, 1.5, 0}))};  // logits [1, 2, 3]
  const Routing r = route(ramp, x);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  const double oracle[3] = {std::exp(1.0) / z, std::exp(2.0) / z, std::exp(3.0) / z};
  double sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    sum += r.weights.data()[i];
    if (std::abs(r.weights.data()[i] - oracle[i]) > 1e-4) bad.push_back("softmax oracle");
  }
  if (std::abs(sum - 1.0) > 1e-9) bad.push_back("weights sum");
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(4), p = 1 + rng.index(5);
    std::vector<AdapterExpert> experts(n);
    for (auto& e : experts) {
      e.down = Parameter("down", uniform_init({6, 2}, 6, rng));
      e.up = Parameter("up", uniform_init({2, 6}, 2, rng));
    }
    Router router{Parameter("g", uniform_init({n, 6}, 6, rng))};
    const Tensor in = uniform_init({p, 6}, 1, rng);
    const MoeOutput out = moe_forward(experts, router, in);
    for (std::size_t row = 0; row < p; ++row) {
      double wsum = 0.0;
      for (std::size_t i = 0; i < n; ++i) wsum += out.weights.at(row, i);
      if (std::abs(wsum - 1.0) > 1e-9) bad.push_back("weights sum");
    }
    std::vector<Tensor> each;
    for (const auto& e : experts) each.push_back(adapter_forward(e, in));
    for (std::size_t row = 0; row < p; ++row) {
      for (std::size_t col = 0; col < 6; ++col) {
        double direct = 0.0;
        for (std::size_t i = 0; i < n; ++i) direct += out.weights.at(row, i) * each[i].at(row, col);
        if (std::abs(direct - out.output.at(row, col)) > 1e-12) bad.push_back("weighted sum");
      }
    }
  }

  if (data_loss(Tensor::scalar(2.0), Tensor::scalar(1.0), 0.5).item() != 1.5) bad.push_back("data loss");
  const double total = total_loss(Tensor::scalar(1.5), Tensor::scalar(0.2), 0.1).item();
  if (total != 1.5 + 0.1 * 0.2) bad.push_back("total loss");
  std::sort(bad.begin(), bad.end());
  bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
  const bool ok = bad.empty();
  std::string detail = ok ? "adapter identity, routing, mixture and loss arithmetic" : "failed:";
  for (const auto& b : bad) detail += " " + b;
  return {ok, detail};
}

Outcome gradient_acceptance() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) worst = std::max(worst, total_loss_gradient_check(seed).max_relative_error);
  return {worst < 1e-4, fmt("max relative error %.2e over 5 seeds", worst)};
}

std::map<Method, std::vector<RunResult>> run_methods(const ExperimentConfig& base, const std::vector<Method>& methods) {
  std::map<Method, std::vector<RunResult>> out;
  for (Method m : methods) {
    ExperimentConfig c = base;
    c.method = m;
    out[m] = run_experiment(c, shared_cache());
  }
  return out;
}

Outcome continual_ordering() {
  const ExperimentConfig base = config_named("single_event");
  const std::vector<Method> cl{Method::double_mixture, Method::er, Method::ft, Method::agem, Method::ewc, Method::lwf};
  std::vector<Method> all = cl;
  all.push_back(Method::mtl);
  const auto runs = run_methods(base, all);
  const auto forgetting = [&](Method m) {
    std::vector<double> v;
    for (const auto& r : runs.at(m)) v.push_back(r.avg_forgetting);
    return mean(v);
  };
  const double dm = forgetting(Method::double_mixture), er = forgetting(Method::er), ft = forgetting(Method::ft);
  int mtl_wins = 0;
  const std::size_t seeds = runs.at(Method::mtl).size();
  for (std::size_t s = 0; s < seeds; ++s) {
    double best_cl = 0.0;
    for (Method m : cl) best_cl = std::max(best_cl, runs.at(m)[s].avg_acc);
    if (runs.at(Method::mtl)[s].avg_acc >= best_cl) ++mtl_wins;
  }
  const bool ok = dm < er && er < ft && dm <= ft - 0.10 && mtl_wins >= 2;
  std::string detail = "forgetting DM " + percent(dm) + " ER " + percent(er) + " FT " + percent(ft);
  for (Method m : {Method::agem, Method::ewc, Method::lwf}) detail += " " + to_string(m) + " " + percent(forgetting(m));
  detail += "; MTL best in " + std::to_string(mtl_wins) + "/" + std::to_string(seeds) + " seeds";
  return {ok, detail};
}

Outcome ablation_ordering() {
  const ExperimentConfig base = config_named("splice");
  const std::vector<Method> methods{Method::double_mixture, Method::double_mixture_no_experts, Method::double_mixture_no_memory};
  const auto runs = run_methods(base, methods);
  std::map<Method, double> combined;
  for (Method m : methods) {
    std::vector<double> v;
    for (const auto& r : runs.at(m)) v.push_back(mean(r.combined));
    combined[m] = mean(v);
  }
  const double dm = combined[Method::double_mixture];
  const bool ok = dm > combined[Method::double_mixture_no_experts] && dm > combined[Method::double_mixture_no_memory];
  return {ok, "combined acc DM " + percent(dm) + " w/o experts " + percent(combined[Method::double_mixture_no_experts]) +
                  " w/o memory " + percent(combined[Method::double_mixture_no_memory])};
}

ReplayMemory curriculum_memory(const TaskStream& stream, std::uint64_t seed) {
  ReplayMemory memory;
  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    memory.add(select_exemplars(stream.tasks[t].train, static_cast<int>(t), seed + t));
    memory.refresh_mixed(stream.combined_mode, seed * 31 + t, stream.held_out_pairs);
  }
  return memory;
}

Outcome benchmark_properties() {
  Rng rng(2024);
  int additive = 0;
  for (int i = 0; i < 1000; ++i) {
    const AudioClip a = synth_clip(static_cast<int>(rng.index(6)), std::nullopt, rng.uniform(0.5, 2.0), rng.index(1u << 30));
    const AudioClip b = synth_clip(std::nullopt, static_cast<int>(rng.index(3)), rng.uniform(0.5, 2.0), rng.index(1u << 30));
    const AudioClip s = splice(a, b);
    if (s.samples.size() == a.samples.size() + b.samples.size() && s.sample_rate == a.sample_rate) ++additive;
  }

  ExperimentConfig splice_cfg = config_named("splice"), overlay_cfg = config_named("overlay");
  overlay_cfg.corpus.seed = splice_cfg.corpus.seed;
  const TaskStream ss = build_task_stream(splice_cfg.corpus), so = build_task_stream(overlay_cfg.corpus);
  const auto mean_duration = [](const TaskStream& s) {
    std::vector<double> d;
    for (const auto& c : s.combined)
      for (const auto& clip : c.test) d.push_back(clip.duration_s());
    return mean(d);
  };
  const double ds = mean_duration(ss), dov = mean_duration(so);

  std::size_t violations = 0, mixed = 0;
  for (const TaskStream* s : {&ss, &so}) {
    std::set<EventPair> test_pairs;
    for (const auto& c : s->combined)
      for (const auto& p : event_pairs_in(c.test)) test_pairs.insert(p);
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const ReplayMemory memory = curriculum_memory(*s, seed);
      std::vector<AudioClip> clips;
      for (const auto& e : memory.entries())
        if (e.mixed) clips.push_back(e.clip);
      mixed += clips.size();
      for (const auto& p : event_pairs_in(clips)) violations += test_pairs.count(p);
    }
  }
  const bool ok = additive == 1000 && ds > dov && violations == 0 && mixed > 0;
  return {ok, std::to_string(additive) + "/1000 additive splices; mean duration splice " + fmt("%.2f s", ds) +
                  " vs overlay " + fmt("%.2f s", dov) + "; " + std::to_string(violations) + " held-out pairings in " +
                  std::to_string(mixed) + " mixed memory samples"};
}

std::uint64_t expert_checksum(const MoeDecoderModel& model, std::size_t expert) {
  std::vector<const Parameter*> ps;
  for (std::size_t b = 0; b < model.config().decoder_blocks; ++b) {
    ps.push_back(&model.decoder_block(b).experts.at(expert).down);
    ps.push_back(&model.decoder_block(b).experts.at(expert).up);
  }
  return parameter_checksum(ps);
}

Outcome protocol_invariants() {
  std::vector<std::string> bad;
  std::size_t streams = 0;
  for (const char* name : {"single_event", "splice", "overlay"}) {
    const ExperimentConfig c = config_named(name);
    const TaskStream s = build_task_stream(c.corpus);
    std::vector<int> order(s.tasks.size());
    std::iota(order.rbegin(), order.rend(), 0);
    for (const TaskStream& t : {s, permute_order(s, order)}) {
      ++streams;
      const StreamCheck check = check_stream(t);
      if (!check.ok()) bad.push_back(std::string(name) + " stream");
      for (const auto& r : stream_manifest(t))
        if (r.split != "train" && r.split != "val" && r.split != "test" && r.split != "combined") bad.push_back("manifest split " + r.split);
    }
  }

  // Full mixture curriculum on the splice stream with the pretrained body.
  const ExperimentConfig c = config_named("splice");
  const TaskStream stream = build_task_stream(c.corpus);
  ModelConfig mc = c.model;
  mc.seed = 1;
  TrainConfig tc = c.train;
  tc.seed = 1;
  const MoeDecoderModel* backbone = shared_backbone(mc, c.backbone, shared_cache());
  ContinualLearner learner(Method::double_mixture, mc, tc, c.baseline, shared_cache(), stream.combined_mode,
                           stream.held_out_pairs, backbone);
  const std::uint64_t encoder = learner.model().encoder_checksum();
  std::vector<std::uint64_t> frozen;
  std::size_t expert_checks = 0;
  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    learner.learn(stream.tasks[t], static_cast<int>(t));
    for (std::size_t e = 0; e < frozen.size(); ++e, ++expert_checks)
      if (expert_checksum(learner.model(), e) != frozen[e]) bad.push_back("expert " + std::to_string(e) + " changed");
    frozen.push_back(expert_checksum(learner.model(), t));
  }
  if (learner.model().encoder_checksum() != encoder) bad.push_back("encoder changed");

  ExperimentConfig single = config_named("single_event");
  EncodingCache a, b;
  const RunResult r1 = run_seed(single, 1, a), r2 = run_seed(single, 1, b);
  bool exact = r1.matrix.to_csv() == r2.matrix.to_csv() && r1.avg_acc == r2.avg_acc && r1.avg_forgetting == r2.avg_forgetting;
  for (std::size_t t = 0; exact && t < r1.records.size(); ++t)
    for (std::size_t e = 0; e < r1.records[t].epochs.size(); ++e)
      exact = exact && r1.records[t].epochs[e].train_loss == r2.records[t].epochs[e].train_loss;
  if (!exact) bad.push_back("rerun differs");

  std::string detail = std::to_string(streams) + " streams scanned, encoder fixed over " +
                       std::to_string(stream.tasks.size()) + " tasks, " + std::to_string(expert_checks) +
                       " frozen-expert checks, rerun bit-exact";
  if (!bad.empty()) {
    detail = "failed:";
    for (const auto& s : bad) detail += " " + s + ";";
  }
  return {bad.empty(), detail};
}

Outcome baseline_oracles() {
  Rng rng(8);
  double worst = 0.0;
  int fired = 0;
  bool never_opposes = true;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + rng.index(32);
    std::vector<double> g(n), ref(n);
    for (auto& v : g) v = rng.uniform(-1, 1);
    for (auto& v : ref) v = rng.uniform(-1, 1);
    const auto out = agem_project(g, ref);
    const double d = std::inner_product(out.begin(), out.end(), ref.begin(), 0.0);
    if (std::inner_product(g.begin(), g.end(), ref.begin(), 0.0) < 0.0) {
      ++fired;
      worst = std::max(worst, std::abs(d));
    }
    never_opposes = never_opposes && d >= -1e-10;
  }

  Parameter p("w", Tensor::from({1}, {2.0}, true));
  std::vector<Parameter*> params{&p};
  FisherEstimate f;
  f.fisher["w"] = {1.0};
  f.anchor["w"] = {1.0};
  f.strength = 1.0;
  const double ewc = ewc_penalty(params, f).item();
  f.anchor["w"] = {2.0};
  const double at_anchor = ewc_penalty(params, f).item();

  const Tensor logits = Tensor::from({3, 4}, {0.1, -2.0, 1.5, 0.0, 3.0, 0.2, -0.7, 1.1, 0.0, 0.0, 0.4, -0.4});
  const double lwf = lwf_loss(logits, logits, Tensor::scalar(0.0), 1.0, 2.0).item();

  const bool ok = worst <= 1e-10 && fired > 0 && never_opposes && ewc == 0.5 && at_anchor == 0.0 && std::abs(lwf) < 1e-12;
  return {ok, "A-GEM |g'.g_ref| " + fmt("%.1e", worst) + " over " + std::to_string(fired) + " projections; EWC " +
                  fmt("%.3f", ewc) + " and " + fmt("%.1f", at_anchor) + " at anchor; LwF term " + fmt("%.1e", lwf)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric oracle", metric_oracle},
      {"model and loss unit suite", unit_suite},
      {"gradient acceptance", gradient_acceptance},
      {"continual ordering", continual_ordering},
      {"ablation ordering", ablation_ordering},
      {"benchmark properties", benchmark_properties},
      {"protocol invariants", protocol_invariants},
      {"baseline oracles", baseline_oracles},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto started = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    failures += o.pass ? 0 : 1;
    std::printf("criterion %d %s  %s: %s  (%.1f s)\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures;
}
