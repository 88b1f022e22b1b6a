#include "dmix/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include "dmix/ops.hpp"
#include "dmix/rng.hpp"

namespace dmix {
namespace {

std::uint64_t fnv_words(std::uint64_t h, std::uint64_t word) {
  for (int i = 0; i < 8; ++i) {
    h ^= (word >> (8 * i)) & 0xFF;
    h *= 0x100000001B3ull;
  }
  return h;
}

std::uint64_t encoder_key(const ModelConfig& c) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (std::uint64_t v : {static_cast<std::uint64_t>(c.d_model), static_cast<std::uint64_t>(c.heads),
                          static_cast<std::uint64_t>(c.encoder_blocks), static_cast<std::uint64_t>(c.ffn_hidden),
                          static_cast<std::uint64_t>(c.pool), static_cast<std::uint64_t>(c.num_bins), c.backbone_seed})
    h = fnv_words(h, v);
  return h;
}

// Rows of the block-summed router logits, one per decoded position.
Tensor summed_router_logits(const RouterTrace& trace) {
  if (trace.logits.empty()) throw std::invalid_argument("gate_loss: empty router trace");
  Tensor total = trace.logits.front();
  for (std::size_t b = 1; b < trace.logits.size(); ++b) {
    if (trace.logits[b].shape() != total.shape()) {
      throw std::invalid_argument("gate_loss: decoder blocks disagree on the expert count");
    }
    total = ops::add(total, trace.logits[b]);
  }
  return total;
}

std::vector<std::size_t> prefix_of(const std::vector<std::size_t>& target) {
  std::vector<std::size_t> prefix{kBos};
  prefix.insert(prefix.end(), target.begin(), target.end() - 1);
  return prefix;
}

}  // namespace

void validate(const TrainConfig& c) {
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) throw ConfigError("train config: lambda must lie in [0, 1]");
  if (!(c.eta >= 0.0)) throw ConfigError("train config: eta must be non-negative");
  if (c.epochs_per_task < 1) throw ConfigError("train config: epochs_per_task must be >= 1");
  if (c.batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(c.initial_lr > 0.0)) throw ConfigError("train config: initial_lr must be positive");
  if (!(c.lr_decay_factor > 0.0 && c.lr_decay_factor <= 1.0)) throw ConfigError("train config: lr_decay_factor must lie in (0, 1]");
  if (!(c.clip_norm > 0.0)) throw ConfigError("train config: clip_norm must be positive");
  if (!(c.weight_decay >= 0.0)) throw ConfigError("train config: weight_decay must be non-negative");
}

Tensor data_loss(const Tensor& task_loss, const Tensor& memory_loss, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("data_loss: lambda " + std::to_string(lambda) + " outside [0, 1]");
  }
  if (lambda == 1.0) return task_loss;
  return ops::add(ops::scale(task_loss, lambda), ops::scale(memory_loss, 1.0 - lambda));
}

Tensor gate_loss(std::span<const RouterTrace> traces, std::span<const std::size_t> gold) {
  if (traces.size() != gold.size()) throw std::invalid_argument("gate_loss: one gold id per trace required");
  if (traces.empty()) throw std::invalid_argument("gate_loss: empty batch");
  Tensor total;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const Tensor summed = summed_router_logits(traces[i]);
    if (gold[i] >= summed.cols()) {
      throw std::invalid_argument("gate_loss: gold id " + std::to_string(gold[i]) + " but only " +
                                  std::to_string(summed.cols()) + " experts");
    }
    const std::vector<std::size_t> targets(summed.rows(), gold[i]);
    const Tensor l = ops::cross_entropy_rows(summed, targets);
    total = i == 0 ? l : ops::add(total, l);
  }
  return ops::scale(total, 1.0 / static_cast<double>(traces.size()));
}

Tensor total_loss(const Tensor& data, const Tensor& gate, double eta) {
  if (eta == 0.0) return data;
  return ops::add(data, ops::scale(gate, eta));
}

std::uint64_t clip_fingerprint(const AudioClip& clip) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : clip.id) h = fnv_words(h, static_cast<unsigned char>(c));
  h = fnv_words(h, static_cast<std::uint64_t>(clip.sample_rate));
  for (double s : clip.samples) {
    std::uint64_t bits;
    std::memcpy(&bits, &s, sizeof bits);
    h = (h ^ bits) * 0x100000001B3ull;
  }
  return h;
}

const EncodedClip& EncodingCache::get(const MoeDecoderModel& model, const AudioClip& clip) {
  const std::uint64_t enc = encoder_key(model.config());
  const std::uint64_t fp = clip_fingerprint(clip);
  // Cross-attention keys and values come from frozen backbone weights that
  // no training stage touches, so they are shared by every model seed.
  const auto attached_key = std::make_pair(fnv_words(enc, model.config().decoder_blocks), fp);
  if (auto it = attached_.find(attached_key); it != attached_.end()) return it->second;
  auto key = std::make_pair(enc, fp);
  auto mem = memory_.find(key);
  if (mem == memory_.end()) mem = memory_.emplace(key, model.encode_memory(featurize(clip))).first;
  return attached_.emplace(attached_key, model.attach(mem->second)).first->second;
}

ClipPass clip_loss(const MoeDecoderModel& model, const EncodedClip& encoded, const AudioClip& clip) {
  const std::vector<std::size_t> target = model.target_tokens(clip);
  ClipPass pass;
  pass.forward = model.forward(encoded, prefix_of(target));
  pass.loss = ops::cross_entropy_rows(pass.forward.logits, target);
  return pass;
}

double evaluate(const MoeDecoderModel& model, std::span<const AudioClip> clips, EncodingCache& cache) {
  if (clips.empty()) throw std::invalid_argument("evaluate: empty clip set");
  std::size_t correct = 0;
  for (const auto& clip : clips) {
    std::vector<LabelKey> predicted;
    for (const auto& l : model.decode_greedy(cache.get(model, clip))) predicted.push_back(key_of(l));
    if (predicted == clip.label_keys()) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(clips.size());
}

void register_labels(MoeDecoderModel& model, std::span<const AudioClip> clips) {
  std::map<LabelKey, EventLabel> seen;
  for (const auto& clip : clips)
    for (const auto& l : clip.labels) seen.emplace(key_of(l), l);
  for (const auto& [key, label] : seen) model.ensure_token(label);
}

TaskRecord fit(MoeDecoderModel& model, std::span<const AudioClip> train, std::span<const AudioClip> val,
               int task_id, std::uint64_t seed, const TrainConfig& config, EncodingCache& cache,
               const FitHooks& hooks) {
  validate(config);
  if (train.empty()) throw std::invalid_argument("fit: empty train split");
  const auto started = std::chrono::steady_clock::now();
  std::vector<Parameter*> params = model.trainable_parameters();
  AdamWConfig adam;
  adam.learning_rate = config.initial_lr;
  adam.weight_decay = config.weight_decay;
  adam.clip_norm = config.clip_norm;
  OptimizerState optimizer(adam);

  TaskRecord record;
  record.task_id = task_id;
  double best_val = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= config.epochs_per_task; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);

    double loss_sum = 0.0, gate_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<const AudioClip*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&train[order[i]]);
      const std::uint64_t step_seed = mix_seed(seed, 1000003ull * static_cast<std::uint64_t>(epoch) + steps);
      zero_grads(params);
      const StepLoss step = hooks.step(batch, step_seed);
      step.total.backward();
      if (hooks.after_backward) hooks.after_backward(params, step_seed);
      clip_gradients(params, config.clip_norm);
      adamw_step(optimizer, params);
      loss_sum += step.total.item();
      gate_sum += step.gate;
      ++steps;
    }
    zero_grads(params);

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(steps);
    log.gate_loss = gate_sum / static_cast<double>(steps);
    log.val_acc = val.empty() ? 0.0 : evaluate(model, val, cache);
    log.lr = optimizer.config.learning_rate;
    record.val_curve.push_back(log.val_acc);
    record.epochs.push_back(log);
    if (log.val_acc > best_val) {
      best_val = log.val_acc;
    } else {
      optimizer.config.learning_rate *= config.lr_decay_factor;
    }
  }
  record.final_lr = optimizer.config.learning_rate;
  record.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return record;
}

TaskRecord train_task(MoeDecoderModel& model, const TaskSplit& task, int task_index,
                      const ReplayMemory& memory, const TrainConfig& config, EncodingCache& cache,
                      const DoubleMixtureOptions& options) {
  validate(config);
  const int own = options.shared_expert && model.num_experts() == 1 ? 0 : model.expert_index_of(task_index);
  if (own < 0) throw StateError("train_task: no expert for task " + std::to_string(task_index) + "; call add_expert first");
  register_labels(model, task.train);
  const bool replay = options.use_memory && !memory.empty();
  const bool gated = options.use_gate && config.eta > 0.0;

  FitHooks hooks;
  hooks.step = [&](std::span<const AudioClip* const> batch, std::uint64_t step_seed) {
    std::vector<RouterTrace> traces;
    std::vector<std::size_t> gold;
    const auto batch_loss = [&](const std::vector<std::pair<const AudioClip*, int>>& items) {
      Tensor sum;
      for (std::size_t i = 0; i < items.size(); ++i) {
        ClipPass pass = clip_loss(model, cache.get(model, *items[i].first), *items[i].first);
        sum = i == 0 ? pass.loss : ops::add(sum, pass.loss);
        if (gated) {
          traces.push_back(std::move(pass.forward.trace));
          gold.push_back(static_cast<std::size_t>(items[i].second));
        }
      }
      return ops::scale(sum, 1.0 / static_cast<double>(items.size()));
    };

    std::vector<std::pair<const AudioClip*, int>> task_items;
    for (const AudioClip* c : batch) task_items.emplace_back(c, own);
    Tensor data = batch_loss(task_items);
    if (replay) {
      std::vector<std::pair<const AudioClip*, int>> replay_items;
      for (const MemoryEntry* e : sample_batch(memory, batch.size(), step_seed)) {
        // Mixed samples carry the source task of their semantic clip.
        const int expert = model.expert_index_of(e->source_task);
        replay_items.emplace_back(&e->clip, expert < 0 ? own : expert);
      }
      data = data_loss(data, batch_loss(replay_items), config.lambda);
    }
    StepLoss out;
    if (gated) {
      const Tensor gate = gate_loss(traces, gold);
      out.gate = gate.item();
      out.total = total_loss(data, gate, config.eta);
    } else {
      out.total = data;
    }
    return out;
  };
  return fit(model, task.train, task.val, task.task_id, mix_seed(config.seed, 0x7A5C0000ull + static_cast<std::uint64_t>(task_index)),
             config, cache, hooks);
}

void validate(const BackboneSpec& s) {
  if (s.semantic_classes < 1 || s.acoustic_classes < 1 || s.clips_per_class < 2 || s.mixed_per_round < 0) {
    throw ConfigError("backbone: class and clip counts must be positive");
  }
  if (!(s.min_duration_s >= 0.5 && s.min_duration_s <= s.max_duration_s && s.max_duration_s <= 4.0)) {
    throw ConfigError("backbone: durations must satisfy 0.5 <= min <= max <= 4");
  }
  if (!(s.background_noise >= 0.0)) throw ConfigError("backbone: background_noise must be >= 0");
  if (s.epochs < 1 || !(s.learning_rate > 0.0)) throw ConfigError("backbone: epochs and learning_rate must be positive");
}

std::vector<AudioClip> backbone_corpus(const BackboneSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  std::uint64_t clip_seed = mix_seed(spec.seed, 0xB0B0);
  const auto clip = [&](std::optional<int> s, std::optional<int> a) {
    return synth_clip(s, a, rng.uniform(spec.min_duration_s, spec.max_duration_s), clip_seed++, spec.background_noise);
  };
  std::vector<AudioClip> out;
  for (int round = 0; round < spec.clips_per_class; ++round) {
    for (int s = 0; s < spec.semantic_classes; ++s) out.push_back(clip(kBackboneClassOffset + s, std::nullopt));
    for (int a = 0; a < spec.acoustic_classes; ++a) out.push_back(clip(std::nullopt, kBackboneClassOffset + a));
    for (int m = 0; m < spec.mixed_per_round; ++m) {
      const int s = kBackboneClassOffset + static_cast<int>(rng.index(static_cast<std::size_t>(spec.semantic_classes)));
      const int a = kBackboneClassOffset + static_cast<int>(rng.index(static_cast<std::size_t>(spec.acoustic_classes)));
      const AudioClip sem = clip(s, std::nullopt), aco = clip(std::nullopt, a);
      out.push_back(m % 2 == 0 ? splice(sem, aco) : overlay(sem, aco));
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = "backbone-" + std::to_string(i);
  return out;
}

MoeDecoderModel pretrain_backbone(const ModelConfig& config, const BackboneSpec& spec, EncodingCache& cache) {
  const std::vector<AudioClip> corpus = backbone_corpus(spec);
  TaskSplit split;
  split.name = "backbone";
  const std::size_t n_val = std::max<std::size_t>(1, corpus.size() / 10);
  split.train.assign(corpus.begin(), corpus.end() - static_cast<std::ptrdiff_t>(n_val));
  split.val.assign(corpus.end() - static_cast<std::ptrdiff_t>(n_val), corpus.end());

  ModelConfig scratch = config;
  scratch.seed = spec.seed;
  MoeDecoderModel model(scratch);
  register_labels(model, corpus);
  model.add_expert(0);
  for (Parameter* p : model.body_parameters()) p->set_frozen(false);
  TrainConfig train;
  train.initial_lr = spec.learning_rate;
  train.epochs_per_task = spec.epochs;
  train.seed = spec.seed;
  const ReplayMemory none;
  train_task(model, split, 0, none, train, cache);
  for (Parameter* p : model.parameters()) p->set_frozen(true);
  return model;
}

}  // namespace dmix
