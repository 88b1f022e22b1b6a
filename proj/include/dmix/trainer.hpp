#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dmix/corpus.hpp"
#include "dmix/memory.hpp"
#include "dmix/model.hpp"
#include "dmix/optim.hpp"

namespace dmix {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct TrainConfig {
  double lambda = 0.5;
  double eta = 0.1;
  int epochs_per_task = 10;
  std::size_t batch_size = 16;
  double initial_lr = 1e-4;
  double lr_decay_factor = 0.8;
  double clip_norm = 5.0;
  double weight_decay = 0.01;
  std::uint64_t seed = 1;
};

// Throws ConfigError on out-of-range values.
void validate(const TrainConfig& config);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double gate_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
};

struct TaskRecord {
  int task_id = 0;
  std::vector<double> val_curve;
  std::vector<EpochLog> epochs;
  double final_lr = 0.0;
  double wall_time_s = 0.0;  // never written to run outputs
};

// L_data = lambda L_task + (1 - lambda) L_memory. Throws ConfigError for
// lambda outside [0, 1].
Tensor data_loss(const Tensor& task_loss, const Tensor& memory_loss, double lambda);

// Per instance the router logits of every decoder block are summed and scored
// by cross-entropy against the gold expert id at every decoded position; the
// result is averaged over positions, then over the batch. Throws
// std::invalid_argument when a gold id is not below the expert count.
Tensor gate_loss(std::span<const RouterTrace> traces, std::span<const std::size_t> gold);

Tensor total_loss(const Tensor& data, const Tensor& gate, double eta);

// Encoder outputs and cross-attention keys/values keyed by clip content and
// backbone configuration. Valid because neither depends on trainable weights.
class EncodingCache {
 public:
  const EncodedClip& get(const MoeDecoderModel& model, const AudioClip& clip);
  std::size_t size() const { return memory_.size(); }

 private:
  std::map<std::pair<std::uint64_t, std::uint64_t>, Tensor> memory_;
  std::map<std::pair<std::uint64_t, std::uint64_t>, EncodedClip> attached_;
};

std::uint64_t clip_fingerprint(const AudioClip& clip);

// Teacher-forced token cross-entropy of one clip, averaged over positions.
struct ClipPass {
  Tensor loss;
  ForwardResult forward;
};
ClipPass clip_loss(const MoeDecoderModel& model, const EncodedClip& encoded, const AudioClip& clip);

// Fraction of clips whose decoded label set equals the gold label set.
// Throws std::invalid_argument on an empty clip list.
double evaluate(const MoeDecoderModel& model, std::span<const AudioClip> clips, EncodingCache& cache);

// Adds vocabulary tokens for every label in clips, in sorted label order.
void register_labels(MoeDecoderModel& model, std::span<const AudioClip> clips);

// Loss of one minibatch as built by a method. gate is recorded for the log
// only; the tape of total carries everything that is optimised.
struct StepLoss {
  Tensor total;
  double gate = 0.0;
};

struct FitHooks {
  std::function<StepLoss(std::span<const AudioClip* const> batch, std::uint64_t step_seed)> step;
  // Runs after backward and before clipping (A-GEM projects here).
  std::function<void(std::span<Parameter* const> params, std::uint64_t step_seed)> after_backward;
};

// The shared epoch loop: seeded shuffles, minibatches, clipping, AdamW on the
// model's unfrozen parameters, validation accuracy after every epoch and the
// plateau learning-rate decay.
TaskRecord fit(MoeDecoderModel& model, std::span<const AudioClip> train, std::span<const AudioClip> val,
               int task_id, std::uint64_t seed, const TrainConfig& config, EncodingCache& cache,
               const FitHooks& hooks);

struct DoubleMixtureOptions {
  bool use_gate = true;
  bool use_memory = true;
  // Train the single expert created for the first task on every task.
  bool shared_expert = false;
};

// One task of the mixture method. task_index is the position of the task in
// the curriculum and doubles as the owner of its expert and as the gold
// router id; replay instances use their source task. Throws StateError when
// the task has no expert.
TaskRecord train_task(MoeDecoderModel& model, const TaskSplit& task, int task_index,
                      const ReplayMemory& memory, const TrainConfig& config, EncodingCache& cache,
                      const DoubleMixtureOptions& options = {});

// Generic pretraining of the decoder body on synthetic classes disjoint from
// any benchmark class: single events plus spliced and overlaid pairs. Stands
// in for a pretrained backbone; the result is frozen before use.
inline constexpr int kBackboneClassOffset = 1000;

struct BackboneSpec {
  bool enabled = false;
  int semantic_classes = 12;
  int acoustic_classes = 6;
  int clips_per_class = 15;
  int mixed_per_round = 18;  // pairs added per round of single-event clips
  double background_noise = 0.4;
  double min_duration_s = 1.0;
  double max_duration_s = 2.0;
  int epochs = 10;
  double learning_rate = 3e-3;
  std::uint64_t seed = 99;

  bool operator==(const BackboneSpec&) const = default;
};

// Throws ConfigError on non-positive counts or an invalid duration range.
void validate(const BackboneSpec& spec);
std::vector<AudioClip> backbone_corpus(const BackboneSpec& spec);
// Trains body_parameters() of a scratch model over backbone_corpus and
// returns it with every parameter refrozen; use with adopt_backbone.
MoeDecoderModel pretrain_backbone(const ModelConfig& config, const BackboneSpec& spec, EncodingCache& cache);

}  // namespace dmix
