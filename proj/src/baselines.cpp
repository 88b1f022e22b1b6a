#include "dmix/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dmix/ops.hpp"
#include "dmix/rng.hpp"

namespace dmix {
namespace {

constexpr std::uint64_t kExemplarTag = 0xE5E5;
constexpr std::uint64_t kMixTag = 0x313E;
constexpr std::uint64_t kSharedTag = 0x5A4E;
constexpr std::uint64_t kReplayTag = 0x4E7A;

std::vector<double> flatten_grads(std::span<Parameter* const> params) {
  std::vector<double> out;
  for (const Parameter* p : params) {
    if (p->value.has_grad()) {
      const auto g = p->value.grad();
      out.insert(out.end(), g.begin(), g.end());
    } else {
      out.insert(out.end(), p->value.size(), 0.0);
    }
  }
  return out;
}

void write_grads(std::span<Parameter* const> params, std::span<const double> flat) {
  std::size_t offset = 0;
  for (Parameter* p : params) {
    auto g = p->value.mutable_grad();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), g.size(), g.begin());
    offset += g.size();
  }
}

Tensor mean_clip_loss(const MoeDecoderModel& model, std::span<const AudioClip* const> clips, EncodingCache& cache) {
  Tensor sum;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const Tensor l = clip_loss(model, cache.get(model, *clips[i]), *clips[i]).loss;
    sum = i == 0 ? l : ops::add(sum, l);
  }
  return ops::scale(sum, 1.0 / static_cast<double>(clips.size()));
}

std::vector<const AudioClip*> replay_clips(const ReplayMemory& memory, std::size_t n, std::uint64_t seed) {
  std::vector<const AudioClip*> out;
  for (const MemoryEntry* e : sample_batch(memory, n, mix_seed(seed, kReplayTag))) out.push_back(&e->clip);
  return out;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::double_mixture: return "double_mixture";
    case Method::double_mixture_no_experts: return "double_mixture_no_experts";
    case Method::double_mixture_no_memory: return "double_mixture_no_memory";
    case Method::ft: return "ft";
    case Method::mtl: return "mtl";
    case Method::er: return "er";
    case Method::agem: return "agem";
    case Method::ewc: return "ewc";
    case Method::lwf: return "lwf";
  }
  return "unknown";
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods{Method::double_mixture, Method::double_mixture_no_experts,
                                           Method::double_mixture_no_memory, Method::ft, Method::mtl,
                                           Method::er, Method::agem, Method::ewc, Method::lwf};
  return methods;
}

Method method_from_string(const std::string& name) {
  for (Method m : all_methods())
    if (to_string(m) == name) return m;
  throw ConfigError("unknown method '" + name + "'");
}

Tensor ewc_penalty(std::span<Parameter* const> params, const FisherEstimate& estimate) {
  Tensor total = Tensor::scalar(0.0);
  for (const Parameter* p : params) {
    auto f = estimate.fisher.find(p->name);
    if (f == estimate.fisher.end()) continue;
    const auto& anchor = estimate.anchor.at(p->name);
    if (f->second.size() != anchor.size() || p->value.size() < f->second.size()) {
      throw DimensionError("ewc_penalty: estimate for " + p->name + " has " + std::to_string(f->second.size()) +
                           " values but the parameter has " + std::to_string(p->value.size()));
    }
    std::vector<double> fisher(p->value.size(), 0.0), theta_star(p->value.size(), 0.0);
    std::copy(f->second.begin(), f->second.end(), fisher.begin());
    std::copy(anchor.begin(), anchor.end(), theta_star.begin());
    const Tensor diff = ops::sub(p->value, Tensor::from(p->value.shape(), std::move(theta_star)));
    const Tensor weighted = ops::mul(ops::mul(diff, diff), Tensor::from(p->value.shape(), std::move(fisher)));
    total = ops::add(total, ops::sum(weighted));
  }
  return ops::scale(total, estimate.strength / 2.0);
}

std::map<std::string, std::vector<double>> empirical_fisher(MoeDecoderModel& model, std::span<Parameter* const> params,
                                                            std::span<const AudioClip> clips, EncodingCache& cache) {
  if (clips.empty()) throw std::invalid_argument("empirical_fisher: no clips");
  std::map<std::string, std::vector<double>> out;
  for (const Parameter* p : params) out[p->name].assign(p->value.size(), 0.0);
  for (const auto& clip : clips) {
    zero_grads(params);
    clip_loss(model, cache.get(model, clip), clip).loss.backward();
    for (const Parameter* p : params) {
      if (!p->value.has_grad()) continue;
      auto& acc = out[p->name];
      const auto g = p->value.grad();
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * g[i];
    }
  }
  zero_grads(params);
  for (auto& [name, values] : out)
    for (double& v : values) v /= static_cast<double>(clips.size());
  return out;
}

std::vector<double> agem_project(std::span<const double> g, std::span<const double> g_ref) {
  if (g.size() != g_ref.size()) throw DimensionError("agem_project: gradient lengths differ");
  const double dot = std::inner_product(g.begin(), g.end(), g_ref.begin(), 0.0);
  const double ref_sq = std::inner_product(g_ref.begin(), g_ref.end(), g_ref.begin(), 0.0);
  std::vector<double> out(g.begin(), g.end());
  if (dot >= 0.0 || ref_sq <= 0.0) return out;
  const double factor = dot / ref_sq;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= factor * g_ref[i];
  return out;
}

Tensor lwf_loss(const Tensor& student_logits, const Tensor& teacher_logits, const Tensor& task_loss,
                double alpha, double temperature) {
  if (student_logits.shape() != teacher_logits.shape()) {
    throw DimensionError("lwf_loss: student " + shape_string(student_logits.shape()) + " vs teacher " +
                         shape_string(teacher_logits.shape()));
  }
  if (!(temperature > 0.0)) throw std::invalid_argument("lwf_loss: temperature must be positive");
  if (alpha == 0.0) return task_loss;
  const std::size_t rows = student_logits.rows();
  Tensor p_teacher;
  double neg_entropy = 0.0;
  {
    NoGradGuard no_grad;
    p_teacher = ops::softmax_rows(ops::scale(teacher_logits.detach(), 1.0 / temperature));
    const Tensor log_p = ops::log_softmax_rows(ops::scale(teacher_logits.detach(), 1.0 / temperature));
    for (std::size_t i = 0; i < p_teacher.size(); ++i) neg_entropy += p_teacher.data()[i] * log_p.data()[i];
  }
  const Tensor log_student = ops::log_softmax_rows(ops::scale(student_logits, 1.0 / temperature));
  const Tensor cross = ops::sum(ops::mul(log_student, p_teacher));
  // KL summed over rows = sum p log p - sum p log q, then averaged over rows.
  const Tensor kl = ops::scale(ops::sub(Tensor::scalar(neg_entropy), cross), 1.0 / static_cast<double>(rows));
  return ops::add(task_loss, ops::scale(kl, alpha * temperature * temperature));
}

ContinualLearner::ContinualLearner(Method method, ModelConfig model_config, TrainConfig train,
                                   BaselineConfig baseline, EncodingCache& cache, CombinedMode mix_mode,
                                   std::vector<EventPair> forbidden_pairs, const MoeDecoderModel* backbone)
    : method_(method),
      train_(train),
      baseline_(baseline),
      cache_(cache),
      mix_mode_(mix_mode),
      forbidden_(std::move(forbidden_pairs)),
      model_(model_config) {
  validate(train_);
  if (backbone) model_.adopt_backbone(*backbone);
}

TaskRecord ContinualLearner::learn(const TaskSplit& task, int index) {
  if (method_ == Method::mtl) throw StateError("learn: MTL trains jointly, use learn_joint");
  const bool mixture = method_ == Method::double_mixture || method_ == Method::double_mixture_no_experts ||
                       method_ == Method::double_mixture_no_memory;
  if (!mixture) return learn_shared(task, index);

  DoubleMixtureOptions options;
  options.use_memory = method_ != Method::double_mixture_no_memory;
  options.use_gate = method_ != Method::double_mixture_no_experts;
  options.shared_expert = method_ == Method::double_mixture_no_experts;
  if (!options.shared_expert) {
    model_.add_expert(index);
  } else if (model_.num_experts() == 0) {
    model_.add_expert(0);
  }
  TaskRecord record = train_task(model_, task, index, memory_, train_, cache_, options);
  if (options.use_memory) {
    memory_.add(select_exemplars(task.train, index, mix_seed(train_.seed, kExemplarTag)));
    memory_.refresh_mixed(mix_mode_, mix_seed(train_.seed, kMixTag + static_cast<std::uint64_t>(index)), forbidden_);
  }
  return record;
}

TaskRecord ContinualLearner::learn_shared(const TaskSplit& task, int index) {
  if (model_.num_experts() == 0) model_.add_expert(0);
  const std::size_t old_vocab = model_.vocab_size();
  register_labels(model_, task.train);
  const bool replay = (method_ == Method::er || method_ == Method::agem) && !memory_.empty();
  const bool ewc = method_ == Method::ewc && fisher_.has_value();
  // The teacher is the model as it left the previous task; cloning after the
  // vocabulary grew lets it read prefixes that contain new tokens.
  const bool lwf = method_ == Method::lwf && index > 0 && old_vocab > kEos + 1;
  if (lwf) {
    teacher_ = model_.clone();
    for (Parameter* p : teacher_->parameters()) p->set_frozen(true);
  }

  FitHooks hooks;
  hooks.step = [&](std::span<const AudioClip* const> batch, std::uint64_t step_seed) {
    StepLoss out;
    if (lwf) {
      Tensor sum;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const AudioClip& clip = *batch[i];
        ClipPass pass = clip_loss(model_, cache_.get(model_, clip), clip);
        Tensor teacher_logits;
        {
          NoGradGuard no_grad;
          std::vector<std::size_t> prefix{kBos};
          const auto target = model_.target_tokens(clip);
          prefix.insert(prefix.end(), target.begin(), target.end() - 1);
          teacher_logits = teacher_->forward(cache_.get(*teacher_, clip), prefix).logits;
        }
        const Tensor student_old = ops::slice_cols(pass.forward.logits, kEos, old_vocab - kEos);
        const Tensor teacher_old = ops::slice_cols(teacher_logits, kEos, old_vocab - kEos);
        const Tensor l = lwf_loss(student_old, teacher_old, pass.loss, baseline_.lwf_alpha, baseline_.lwf_temperature);
        sum = i == 0 ? l : ops::add(sum, l);
      }
      out.total = ops::scale(sum, 1.0 / static_cast<double>(batch.size()));
      return out;
    }
    Tensor task_loss = mean_clip_loss(model_, batch, cache_);
    if (method_ == Method::er && replay) {
      const auto replayed = replay_clips(memory_, batch.size(), step_seed);
      task_loss = data_loss(task_loss, mean_clip_loss(model_, replayed, cache_), 0.5);
    }
    if (ewc) {
      const auto params = model_.trainable_parameters();
      task_loss = ops::add(task_loss, ewc_penalty(params, *fisher_));
    }
    out.total = task_loss;
    return out;
  };
  if (method_ == Method::agem && replay) {
    hooks.after_backward = [&](std::span<Parameter* const> params, std::uint64_t step_seed) {
      const std::vector<double> g = flatten_grads(params);
      zero_grads(params);
      mean_clip_loss(model_, replay_clips(memory_, train_.batch_size, step_seed), cache_).backward();
      const std::vector<double> g_ref = flatten_grads(params);
      write_grads(params, agem_project(g, g_ref));
    };
  }

  TaskRecord record = fit(model_, task.train, task.val, task.task_id,
                          mix_seed(train_.seed, kSharedTag + static_cast<std::uint64_t>(index)), train_, cache_, hooks);

  if (method_ == Method::er || method_ == Method::agem) {
    memory_.add(select_exemplars(task.train, index, mix_seed(train_.seed, kExemplarTag)));
  } else if (method_ == Method::ewc) {
    auto params = model_.trainable_parameters();
    auto fresh = empirical_fisher(model_, params, task.train, cache_);
    FisherEstimate next;
    next.strength = baseline_.ewc_strength;
    for (const Parameter* p : params) {
      auto& f = next.fisher[p->name];
      f = fresh.at(p->name);
      if (fisher_) {
        if (auto old = fisher_->fisher.find(p->name); old != fisher_->fisher.end())
          for (std::size_t i = 0; i < old->second.size(); ++i) f[i] += old->second[i];
      }
      next.anchor[p->name].assign(p->value.data().begin(), p->value.data().end());
    }
    fisher_ = std::move(next);
  } else if (method_ == Method::lwf) {
    teacher_.reset();
  }
  return record;
}

TaskRecord ContinualLearner::learn_joint(std::span<const TaskSplit> tasks) {
  if (tasks.empty()) throw std::invalid_argument("learn_joint: no tasks");
  if (model_.num_experts() > 0) throw StateError("learn_joint: model already has experts");
  std::vector<AudioClip> train, val;
  std::vector<int> ids;
  for (const auto& t : tasks) {
    train.insert(train.end(), t.train.begin(), t.train.end());
    val.insert(val.end(), t.val.begin(), t.val.end());
    ids.push_back(t.task_id);
  }
  // Canonical order makes the joint phase independent of the task order.
  const auto by_id = [](const AudioClip& a, const AudioClip& b) { return a.id < b.id; };
  std::sort(train.begin(), train.end(), by_id);
  std::sort(val.begin(), val.end(), by_id);
  std::sort(ids.begin(), ids.end());
  register_labels(model_, train);
  // The same expert set as the mixture method, all trained at once with the
  // gate supervised by each clip's task.
  for (int id : ids) model_.add_expert(id);
  for (std::size_t b = 0; b < model_.config().decoder_blocks; ++b)
    for (auto& e : model_.decoder_block(b).experts) {
      e.down.set_frozen(false);
      e.up.set_frozen(false);
    }
  const bool gated = train_.eta > 0.0;
  FitHooks hooks;
  hooks.step = [&](std::span<const AudioClip* const> batch, std::uint64_t) {
    std::vector<RouterTrace> traces;
    std::vector<std::size_t> gold;
    Tensor sum;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      ClipPass pass = clip_loss(model_, cache_.get(model_, *batch[i]), *batch[i]);
      sum = i == 0 ? pass.loss : ops::add(sum, pass.loss);
      if (gated) {
        traces.push_back(std::move(pass.forward.trace));
        gold.push_back(static_cast<std::size_t>(model_.expert_index_of(batch[i]->labels.front().task_id)));
      }
    }
    const Tensor data = ops::scale(sum, 1.0 / static_cast<double>(batch.size()));
    if (!gated) return StepLoss{data, 0.0};
    const Tensor gate = gate_loss(traces, gold);
    return StepLoss{total_loss(data, gate, train_.eta), gate.item()};
  };
  return fit(model_, train, val, -1, mix_seed(train_.seed, kSharedTag), train_, cache_, hooks);
}

}  // namespace dmix
