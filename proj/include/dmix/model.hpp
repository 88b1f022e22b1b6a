#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmix/audio.hpp"
#include "dmix/features.hpp"
#include "dmix/optim.hpp"
#include "dmix/rng.hpp"
#include "dmix/tensor.hpp"

namespace dmix {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t bottleneck = 16;
  std::size_t encoder_blocks = 2;
  std::size_t decoder_blocks = 2;
  std::size_t ffn_hidden = 128;
  std::size_t pool = 4;  // feature frames averaged per encoder position
  std::size_t num_bins = kNumBins;
  std::uint64_t seed = 1;          // decoder, experts and vocabulary rows
  std::uint64_t backbone_seed = 17; // frozen encoder and decoder body, shared across runs

  bool operator==(const ModelConfig&) const = default;
};

// Bottleneck adapter: E(H) = H + relu(H W_down) W_up.
struct AdapterExpert {
  Parameter down;  // d x b
  Parameter up;    // b x d, zero at creation so a new expert is the identity
  int owner_task = 0;
};

Tensor adapter_forward(const AdapterExpert& expert, const Tensor& h);

// Gate scores G(x) = W_g m(x) for the mean-pooled input m(x). The weight is
// stored one row per expert (N x d) so growth appends a row.
struct Router {
  Parameter weight;
  std::size_t num_experts() const { return weight.value.rows(); }
};

struct Routing {
  Tensor logits;   // 1 x N
  Tensor weights;  // 1 x N, softmax of logits
};

// Routes on the mean over all rows of block_input.
Routing route(const Router& router, const Tensor& block_input);

struct MoeOutput {
  Tensor output;   // p x d
  Tensor logits;   // p x N, row i routes on the mean of input rows 0..i
  Tensor weights;  // p x N
};

// O(x) = sum_i alpha_i E_i(x). Each position routes on the running mean of the
// block input up to and including itself, so teacher-forced training sees the
// same routing as incremental greedy decoding.
MoeOutput moe_forward(std::span<const AdapterExpert> experts, const Router& router,
                      const Tensor& block_input);

struct RouterTrace {
  std::vector<Tensor> logits;   // one p x N tensor per decoder block
  std::vector<Tensor> weights;  // same shapes, rows sum to 1
};

struct AttentionWeights {
  Parameter query, key, value, output;  // d x d each
};

struct EncoderBlock {
  AttentionWeights attention;
  Parameter ffn_in, ffn_in_bias, ffn_out, ffn_out_bias;
};

struct DecoderBlock {
  AttentionWeights self_attention;
  AttentionWeights cross_attention;
  std::vector<AdapterExpert> experts;
  Router router;
};

// Frozen encoder output plus the per-block cross-attention keys/values, which
// depend only on frozen weights and so can be cached per clip.
struct EncodedClip {
  Tensor memory;
  std::vector<Tensor> cross_keys;
  std::vector<Tensor> cross_values;
};

struct ForwardResult {
  Tensor logits;  // prefix_len x vocab
  Tensor hidden;  // prefix_len x d, normalised decoder output fed to the head
  RouterTrace trace;
};

inline constexpr std::size_t kBos = 0;
inline constexpr std::size_t kEos = 1;

// Frozen transformer encoder over log-magnitude features and a decoder whose
// blocks host a growing mixture of adapter experts behind a softmax router.
class MoeDecoderModel {
 public:
  explicit MoeDecoderModel(ModelConfig config = {});

  const ModelConfig& config() const { return config_; }

  // Vocabulary: BOS, EOS, then one token per event class in first-seen order.
  std::size_t vocab_size() const { return vocab_.size() + 2; }
  std::optional<std::size_t> token_of(const LabelKey& key) const;
  std::size_t ensure_token(const EventLabel& label);
  const EventLabel& label_of_token(std::size_t token) const;
  // Label tokens (semantic first) followed by EOS. Throws ModelError on unknown labels.
  std::vector<std::size_t> target_tokens(const AudioClip& clip) const;

  // Appends one identity expert per decoder block for task_id, grows every
  // router by a zero row, and freezes all earlier experts.
  void add_expert(int task_id);
  std::size_t num_experts() const;
  bool has_expert_for(int task_id) const;
  int expert_index_of(int task_id) const;

  EncodedClip encode(const FeatureSeq& features) const;
  // The two halves of encode: the frozen encoder output alone depends only on
  // the encoder configuration, so it can be shared between models.
  Tensor encode_memory(const FeatureSeq& features) const;
  EncodedClip attach(const Tensor& memory) const;
  ForwardResult forward(const EncodedClip& clip, std::span<const std::size_t> prefix) const;
  ForwardResult forward(const FeatureSeq& features, std::span<const std::size_t> prefix) const;

  // Argmax chain from BOS until EOS or max_len tokens; BOS is never emitted
  // and ties go to the lowest token index. Returned tokens exclude EOS.
  std::vector<std::size_t> decode_tokens(const EncodedClip& clip, std::size_t max_len = 4) const;
  std::vector<EventLabel> decode_greedy(const EncodedClip& clip, std::size_t max_len = 4) const;
  std::vector<EventLabel> decode_greedy(const FeatureSeq& features, std::size_t max_len = 4) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  // Unfrozen parameters: current experts, routers and the output head.
  std::vector<Parameter*> trainable_parameters();
  std::vector<const Parameter*> encoder_parameters() const;

  std::uint64_t encoder_checksum() const;
  std::uint64_t checksum() const;

  // Deep copy; the clone shares no storage with this model.
  MoeDecoderModel clone() const;

  // Decoder self-attention plus cross-attention query and output weights:
  // the part of the frozen backbone a pretraining stage may tune. Cross
  // keys and values are excluded so cached attachments stay valid.
  std::vector<Parameter*> body_parameters();
  // Copies the body weights of a model with the same backbone configuration.
  // Throws ModelError on a configuration mismatch.
  void adopt_backbone(const MoeDecoderModel& source);

  DecoderBlock& decoder_block(std::size_t i) { return decoder_.at(i); }
  const DecoderBlock& decoder_block(std::size_t i) const { return decoder_.at(i); }
  Parameter& head_weight() { return head_weight_; }
  Parameter& head_bias() { return head_bias_; }

  void save(const std::filesystem::path& path) const;
  // Throws ModelError when the file is malformed or its dimensions disagree
  // with expected (when given).
  static MoeDecoderModel load(const std::filesystem::path& path,
                              std::optional<ModelConfig> expected = std::nullopt);

 private:
  Tensor embed_prefix(std::span<const std::size_t> prefix) const;

  ModelConfig config_;
  Rng rng_;
  Parameter input_proj_, input_bias_;
  std::vector<EncoderBlock> encoder_;
  std::vector<DecoderBlock> decoder_;
  Parameter embedding_;  // vocab x d, frozen
  Parameter head_weight_;  // vocab x d
  Parameter head_bias_;    // vocab
  std::vector<EventLabel> vocab_;
  std::map<LabelKey, std::size_t> token_index_;
};

// FNV-1a over the bit patterns of the given parameters.
std::uint64_t parameter_checksum(std::span<const Parameter* const> params);

}  // namespace dmix
