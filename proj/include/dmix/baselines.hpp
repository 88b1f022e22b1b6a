#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmix/trainer.hpp"

namespace dmix {

enum class Method {
  double_mixture,
  double_mixture_no_experts,
  double_mixture_no_memory,
  ft,
  mtl,
  er,
  agem,
  ewc,
  lwf,
};

std::string to_string(Method method);
// Throws ConfigError on unknown names.
Method method_from_string(const std::string& name);
const std::vector<Method>& all_methods();

// Diagonal Fisher values and anchor values per parameter name.
struct FisherEstimate {
  std::map<std::string, std::vector<double>> fisher;
  std::map<std::string, std::vector<double>> anchor;
  double strength = 100.0;
};

// (strength / 2) * sum F (theta - theta*)^2 over the parameters named in the
// estimate. A parameter that grew since anchoring is compared on its leading
// elements; the new tail carries zero importance. Throws DimensionError when
// a parameter is smaller than its stored estimate.
Tensor ewc_penalty(std::span<Parameter* const> params, const FisherEstimate& fisher);

// Mean squared gradient of the per-clip log-likelihood over clips, for every
// given parameter.
std::map<std::string, std::vector<double>> empirical_fisher(MoeDecoderModel& model, std::span<Parameter* const> params,
                                                            std::span<const AudioClip> clips, EncodingCache& cache);

// g unchanged when g . g_ref >= 0 or g_ref is zero, otherwise g minus its
// component along g_ref.
std::vector<double> agem_project(std::span<const double> g, std::span<const double> g_ref);

// task_loss + alpha T^2 KL(softmax(teacher / T) || softmax(student / T)),
// the KL averaged over rows. Both logit tensors must already be restricted to
// the old-class columns.
Tensor lwf_loss(const Tensor& student_logits, const Tensor& teacher_logits, const Tensor& task_loss,
                double alpha, double temperature);

struct BaselineConfig {
  double ewc_strength = 100.0;
  double lwf_alpha = 1.0;
  double lwf_temperature = 2.0;
};

// Drives one method over a curriculum task by task. Mixture variants grow an
// expert per task; every other method trains one shared adapter per block.
class ContinualLearner {
 public:
  ContinualLearner(Method method, ModelConfig model_config, TrainConfig train, BaselineConfig baseline,
                   EncodingCache& cache, CombinedMode mix_mode = CombinedMode::none,
                   std::vector<EventPair> forbidden_pairs = {}, const MoeDecoderModel* backbone = nullptr);

  Method method() const { return method_; }
  // Trains on the task at curriculum position index, then updates memory,
  // Fisher estimate or teacher for the next task. Not valid for MTL.
  TaskRecord learn(const TaskSplit& task, int index);
  // Joint training over the union of the given tasks (MTL).
  TaskRecord learn_joint(std::span<const TaskSplit> tasks);

  MoeDecoderModel& model() { return model_; }
  const MoeDecoderModel& model() const { return model_; }
  const ReplayMemory& memory() const { return memory_; }

 private:
  TaskRecord learn_shared(const TaskSplit& task, int index);

  Method method_;
  TrainConfig train_;
  BaselineConfig baseline_;
  EncodingCache& cache_;
  CombinedMode mix_mode_;
  std::vector<EventPair> forbidden_;
  MoeDecoderModel model_;
  ReplayMemory memory_;
  std::optional<FisherEstimate> fisher_;
  std::optional<MoeDecoderModel> teacher_;
};

}  // namespace dmix
