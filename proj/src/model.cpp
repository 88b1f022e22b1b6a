#include "dmix/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dmix/ops.hpp"

namespace dmix {
namespace {

constexpr int kCheckpointVersion = 1;

Parameter frozen_param(std::string name, Tensor value) {
  return Parameter(std::move(name), std::move(value), true);
}

Parameter trainable_param(std::string name, Tensor value) {
  return Parameter(std::move(name), std::move(value), false);
}

AttentionWeights make_attention(const std::string& prefix, std::size_t d, Rng& rng) {
  return {frozen_param(prefix + ".q", uniform_init({d, d}, d, rng)),
          frozen_param(prefix + ".k", uniform_init({d, d}, d, rng)),
          frozen_param(prefix + ".v", uniform_init({d, d}, d, rng)),
          frozen_param(prefix + ".o", uniform_init({d, d}, d, rng))};
}

Tensor positional_encoding(std::size_t rows, std::size_t d) {
  std::vector<double> pe(rows * d);
  for (std::size_t pos = 0; pos < rows; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      pe[pos * d + i] = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  return Tensor::from({rows, d}, std::move(pe));
}

Tensor attend(const Tensor& queries_in, const Tensor& keys, const Tensor& values,
              const AttentionWeights& w, std::size_t heads, bool causal) {
  const std::size_t d = queries_in.cols();
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor q = ops::matmul(queries_in, w.query.value);
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = ops::slice_cols(q, h * dh, dh);
    const Tensor kh = ops::slice_cols(keys, h * dh, dh);
    const Tensor vh = ops::slice_cols(values, h * dh, dh);
    const Tensor att = ops::softmax_rows(ops::scale(ops::matmul_nt(qh, kh), scale), causal);
    outputs.push_back(ops::matmul(att, vh));
  }
  return ops::matmul(heads == 1 ? outputs.front() : ops::concat_cols(outputs), w.output.value);
}

Tensor append_row(const Tensor& base, std::span<const double> row) {
  const std::size_t cols = row.size();
  std::vector<double> data(base.data().begin(), base.data().end());
  data.insert(data.end(), row.begin(), row.end());
  const std::size_t rows = data.size() / cols;
  return Tensor::from({rows, cols}, std::move(data));
}

std::vector<double> uniform_row(std::size_t n, double bound, Rng& rng) {
  std::vector<double> row(n);
  for (double& v : row) v = rng.uniform(-bound, bound);
  return row;
}

void hash_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001B3ull;
  }
}

}  // namespace

std::uint64_t parameter_checksum(std::span<const Parameter* const> params) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const Parameter* p : params) {
    hash_bytes(h, p->name.data(), p->name.size());
    const auto data = p->value.data();
    hash_bytes(h, data.data(), data.size() * sizeof(double));
  }
  return h;
}

Tensor adapter_forward(const AdapterExpert& expert, const Tensor& h) {
  if (h.cols() != expert.down.value.rows()) {
    throw DimensionError("adapter_forward: input width " + std::to_string(h.cols()) +
                         " does not match expert width " + std::to_string(expert.down.value.rows()));
  }
  return ops::add(h, ops::matmul(ops::relu(ops::matmul(h, expert.down.value)), expert.up.value));
}

Routing route(const Router& router, const Tensor& block_input) {
  if (router.num_experts() == 0) throw ModelError("route: router has no experts");
  Routing r;
  r.logits = ops::matmul_nt(ops::mean_rows(block_input), router.weight.value);
  r.weights = ops::softmax_rows(r.logits);
  return r;
}

MoeOutput moe_forward(std::span<const AdapterExpert> experts, const Router& router,
                      const Tensor& block_input) {
  if (experts.empty()) throw ModelError("moe_forward: no experts");
  if (experts.size() != router.num_experts()) {
    throw ModelError("moe_forward: " + std::to_string(experts.size()) + " experts but router has " +
                     std::to_string(router.num_experts()) + " outputs");
  }
  MoeOutput out;
  out.logits = ops::matmul_nt(ops::prefix_mean_rows(block_input), router.weight.value);
  out.weights = ops::softmax_rows(out.logits);
  for (std::size_t i = 0; i < experts.size(); ++i) {
    const Tensor weighted =
        ops::mul_col(adapter_forward(experts[i], block_input), ops::slice_cols(out.weights, i, 1));
    out.output = i == 0 ? weighted : ops::add(out.output, weighted);
  }
  return out;
}

MoeDecoderModel::MoeDecoderModel(ModelConfig config) : config_(config), rng_(config.seed) {
  const std::size_t d = config_.d_model;
  if (d == 0 || config_.heads == 0 || d % config_.heads != 0) {
    throw ModelError("model: d_model must be a positive multiple of heads");
  }
  if (config_.bottleneck == 0 || config_.bottleneck >= d) {
    throw ModelError("model: bottleneck must satisfy 0 < b < d");
  }
  if (config_.pool == 0 || config_.decoder_blocks == 0) throw ModelError("model: invalid config");

  Rng enc_rng(config_.backbone_seed);
  input_proj_ = frozen_param("enc.in.w", uniform_init({config_.num_bins, d}, config_.num_bins, enc_rng));
  input_bias_ = frozen_param("enc.in.b", uniform_init({d}, config_.num_bins, enc_rng));
  for (std::size_t b = 0; b < config_.encoder_blocks; ++b) {
    const std::string p = "enc." + std::to_string(b);
    EncoderBlock block{make_attention(p + ".attn", d, enc_rng), {}, {}, {}, {}};
    block.ffn_in = frozen_param(p + ".ffn.w1", uniform_init({d, config_.ffn_hidden}, d, enc_rng));
    block.ffn_in_bias = frozen_param(p + ".ffn.b1", uniform_init({config_.ffn_hidden}, d, enc_rng));
    block.ffn_out = frozen_param(p + ".ffn.w2", uniform_init({config_.ffn_hidden, d}, config_.ffn_hidden, enc_rng));
    block.ffn_out_bias = frozen_param(p + ".ffn.b2", uniform_init({d}, config_.ffn_hidden, enc_rng));
    encoder_.push_back(std::move(block));
  }
  for (std::size_t b = 0; b < config_.decoder_blocks; ++b) {
    const std::string p = "dec." + std::to_string(b);
    DecoderBlock block;
    block.self_attention = make_attention(p + ".self", d, enc_rng);
    block.cross_attention = make_attention(p + ".cross", d, enc_rng);
    block.router.weight = trainable_param(p + ".router", Tensor::zeros({0, d}));
    decoder_.push_back(std::move(block));
  }
  embedding_ = frozen_param("dec.embed", uniform_init({2, d}, 1, rng_));
  head_weight_ = trainable_param("head.w", uniform_init({2, d}, d, rng_));
  head_bias_ = trainable_param("head.b", Tensor::zeros({2}));
}

std::optional<std::size_t> MoeDecoderModel::token_of(const LabelKey& key) const {
  auto it = token_index_.find(key);
  if (it == token_index_.end()) return std::nullopt;
  return it->second;
}

std::size_t MoeDecoderModel::ensure_token(const EventLabel& label) {
  if (auto t = token_of(key_of(label))) return *t;
  const std::size_t d = config_.d_model;
  const std::size_t token = vocab_size();
  embedding_ = frozen_param(embedding_.name, append_row(embedding_.value, uniform_row(d, 1.0, rng_)));
  head_weight_ = trainable_param(
      head_weight_.name,
      append_row(head_weight_.value, uniform_row(d, 1.0 / std::sqrt(static_cast<double>(d)), rng_)));
  std::vector<double> bias(head_bias_.value.data().begin(), head_bias_.value.data().end());
  bias.push_back(0.0);
  head_bias_ = trainable_param(head_bias_.name, Tensor::from({token + 1}, std::move(bias)));
  vocab_.push_back(label);
  token_index_[key_of(label)] = token;
  return token;
}

const EventLabel& MoeDecoderModel::label_of_token(std::size_t token) const {
  if (token < 2 || token >= vocab_size()) throw ModelError("model: token has no event label");
  return vocab_[token - 2];
}

std::vector<std::size_t> MoeDecoderModel::target_tokens(const AudioClip& clip) const {
  std::vector<std::size_t> out;
  for (const auto& key : clip.label_keys()) {
    auto t = token_of(key);
    if (!t) throw ModelError("model: label '" + to_string(key.kind) + " " + std::to_string(key.class_id) + "' is not in the vocabulary");
    out.push_back(*t);
  }
  out.push_back(kEos);
  return out;
}

void MoeDecoderModel::add_expert(int task_id) {
  if (has_expert_for(task_id)) {
    throw ModelError("add_expert: task " + std::to_string(task_id) + " already owns an expert");
  }
  const std::size_t d = config_.d_model;
  for (std::size_t b = 0; b < decoder_.size(); ++b) {
    DecoderBlock& block = decoder_[b];
    for (auto& e : block.experts) {
      e.down.set_frozen(true);
      e.up.set_frozen(true);
    }
    const std::string p = "dec." + std::to_string(b) + ".expert." + std::to_string(block.experts.size());
    AdapterExpert expert;
    expert.down = trainable_param(p + ".down", uniform_init({d, config_.bottleneck}, d, rng_));
    expert.up = trainable_param(p + ".up", Tensor::zeros({config_.bottleneck, d}));
    expert.owner_task = task_id;
    block.experts.push_back(std::move(expert));
    const std::vector<double> zero_row(d, 0.0);
    block.router.weight = trainable_param(block.router.weight.name, append_row(block.router.weight.value, zero_row));
  }
}

std::size_t MoeDecoderModel::num_experts() const { return decoder_.front().experts.size(); }

bool MoeDecoderModel::has_expert_for(int task_id) const { return expert_index_of(task_id) >= 0; }

int MoeDecoderModel::expert_index_of(int task_id) const {
  const auto& experts = decoder_.front().experts;
  for (std::size_t i = 0; i < experts.size(); ++i)
    if (experts[i].owner_task == task_id) return static_cast<int>(i);
  return -1;
}

EncodedClip MoeDecoderModel::encode(const FeatureSeq& features) const {
  return attach(encode_memory(features));
}

Tensor MoeDecoderModel::encode_memory(const FeatureSeq& features) const {
  if (features.num_bins != config_.num_bins) {
    throw DimensionError("encode: expected " + std::to_string(config_.num_bins) + " bins, got " +
                         std::to_string(features.num_bins));
  }
  if (features.num_frames == 0) throw DimensionError("encode: no frames");
  NoGradGuard no_grad;
  const std::size_t bins = features.num_bins;
  const std::size_t rows = (features.num_frames + config_.pool - 1) / config_.pool;
  std::vector<double> pooled(rows * bins, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t begin = r * config_.pool;
    const std::size_t end = std::min(features.num_frames, begin + config_.pool);
    for (std::size_t f = begin; f < end; ++f)
      for (std::size_t k = 0; k < bins; ++k) pooled[r * bins + k] += features.at(f, k);
    for (std::size_t k = 0; k < bins; ++k) pooled[r * bins + k] /= static_cast<double>(end - begin);
  }
  Tensor x = ops::add_row(ops::matmul(Tensor::from({rows, bins}, std::move(pooled)), input_proj_.value),
                          input_bias_.value);
  x = ops::add(x, positional_encoding(rows, config_.d_model));
  for (const auto& block : encoder_) {
    const Tensor a = ops::layer_norm_rows(x);
    x = ops::add(x, attend(a, ops::matmul(a, block.attention.key.value),
                           ops::matmul(a, block.attention.value.value), block.attention,
                           config_.heads, false));
    const Tensor f = ops::layer_norm_rows(x);
    const Tensor hidden = ops::relu(ops::add_row(ops::matmul(f, block.ffn_in.value), block.ffn_in_bias.value));
    x = ops::add(x, ops::add_row(ops::matmul(hidden, block.ffn_out.value), block.ffn_out_bias.value));
  }
  return ops::layer_norm_rows(x);
}

EncodedClip MoeDecoderModel::attach(const Tensor& memory) const {
  if (memory.rank() != 2 || memory.cols() != config_.d_model) throw DimensionError("attach: memory width mismatch");
  NoGradGuard no_grad;
  EncodedClip out;
  out.memory = memory;
  for (const auto& block : decoder_) {
    out.cross_keys.push_back(ops::matmul(out.memory, block.cross_attention.key.value));
    out.cross_values.push_back(ops::matmul(out.memory, block.cross_attention.value.value));
  }
  return out;
}

Tensor MoeDecoderModel::embed_prefix(std::span<const std::size_t> prefix) const {
  const std::size_t d = config_.d_model;
  std::vector<double> rows(prefix.size() * d);
  const auto table = embedding_.value.data();
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (prefix[i] >= vocab_size()) throw ModelError("forward: unknown token " + std::to_string(prefix[i]));
    std::copy_n(table.begin() + static_cast<std::ptrdiff_t>(prefix[i] * d), d, rows.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return ops::add(Tensor::from({prefix.size(), d}, std::move(rows)), positional_encoding(prefix.size(), d));
}

ForwardResult MoeDecoderModel::forward(const EncodedClip& clip, std::span<const std::size_t> prefix) const {
  if (prefix.empty() || prefix.front() != kBos) throw ModelError("forward: prefix must start with BOS");
  if (num_experts() == 0) throw ModelError("forward: model has no experts; call add_expert first");
  if (clip.cross_keys.size() != decoder_.size()) throw ModelError("forward: encoded clip does not match this model");
  ForwardResult result;
  Tensor x = embed_prefix(prefix);
  for (std::size_t b = 0; b < decoder_.size(); ++b) {
    const DecoderBlock& block = decoder_[b];
    const Tensor a = ops::layer_norm_rows(x);
    x = ops::add(x, attend(a, ops::matmul(a, block.self_attention.key.value),
                           ops::matmul(a, block.self_attention.value.value), block.self_attention,
                           config_.heads, true));
    x = ops::add(x, attend(ops::layer_norm_rows(x), clip.cross_keys[b], clip.cross_values[b],
                           block.cross_attention, config_.heads, false));
    MoeOutput moe = moe_forward(block.experts, block.router, x);
    x = moe.output;
    result.trace.logits.push_back(std::move(moe.logits));
    result.trace.weights.push_back(std::move(moe.weights));
  }
  result.hidden = ops::layer_norm_rows(x);
  result.logits = ops::add_row(ops::matmul_nt(result.hidden, head_weight_.value), head_bias_.value);
  return result;
}

ForwardResult MoeDecoderModel::forward(const FeatureSeq& features, std::span<const std::size_t> prefix) const {
  return forward(encode(features), prefix);
}

std::vector<std::size_t> MoeDecoderModel::decode_tokens(const EncodedClip& clip, std::size_t max_len) const {
  NoGradGuard no_grad;
  std::vector<std::size_t> prefix{kBos};
  std::vector<std::size_t> out;
  while (out.size() < max_len) {
    const Tensor logits = forward(clip, prefix).logits;
    const std::size_t v = logits.cols();
    const auto last = logits.data().subspan((logits.rows() - 1) * v, v);
    std::size_t best = kEos;
    for (std::size_t t = kEos + 1; t < v; ++t)
      if (last[t] > last[best]) best = t;
    if (best == kEos) break;
    out.push_back(best);
    prefix.push_back(best);
  }
  return out;
}

std::vector<EventLabel> MoeDecoderModel::decode_greedy(const EncodedClip& clip, std::size_t max_len) const {
  std::vector<EventLabel> labels;
  for (std::size_t t : decode_tokens(clip, max_len)) {
    const EventLabel& l = label_of_token(t);
    if (std::none_of(labels.begin(), labels.end(), [&](const EventLabel& x) { return x.same_event(l); }))
      labels.push_back(l);
  }
  std::sort(labels.begin(), labels.end(),
            [](const EventLabel& a, const EventLabel& b) { return key_of(a) < key_of(b); });
  return labels;
}

std::vector<EventLabel> MoeDecoderModel::decode_greedy(const FeatureSeq& features, std::size_t max_len) const {
  return decode_greedy(encode(features), max_len);
}

std::vector<Parameter*> MoeDecoderModel::parameters() {
  std::vector<Parameter*> out{&input_proj_, &input_bias_};
  for (auto& b : encoder_) {
    for (Parameter* p : {&b.attention.query, &b.attention.key, &b.attention.value, &b.attention.output,
                         &b.ffn_in, &b.ffn_in_bias, &b.ffn_out, &b.ffn_out_bias})
      out.push_back(p);
  }
  for (auto& b : decoder_) {
    for (AttentionWeights* w : {&b.self_attention, &b.cross_attention})
      for (Parameter* p : {&w->query, &w->key, &w->value, &w->output}) out.push_back(p);
    for (auto& e : b.experts) {
      out.push_back(&e.down);
      out.push_back(&e.up);
    }
    out.push_back(&b.router.weight);
  }
  out.push_back(&embedding_);
  out.push_back(&head_weight_);
  out.push_back(&head_bias_);
  return out;
}

std::vector<const Parameter*> MoeDecoderModel::parameters() const {
  auto mutable_params = const_cast<MoeDecoderModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

std::vector<Parameter*> MoeDecoderModel::trainable_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : parameters())
    if (!p->frozen) out.push_back(p);
  return out;
}

std::vector<const Parameter*> MoeDecoderModel::encoder_parameters() const {
  std::vector<const Parameter*> out;
  for (const Parameter* p : parameters())
    if (p->name.rfind("enc.", 0) == 0) out.push_back(p);
  return out;
}

std::uint64_t MoeDecoderModel::encoder_checksum() const { return parameter_checksum(encoder_parameters()); }

std::uint64_t MoeDecoderModel::checksum() const { return parameter_checksum(parameters()); }

std::vector<Parameter*> MoeDecoderModel::body_parameters() {
  std::vector<Parameter*> out;
  for (auto& b : decoder_) {
    for (Parameter* p : {&b.self_attention.query, &b.self_attention.key, &b.self_attention.value,
                         &b.self_attention.output, &b.cross_attention.query, &b.cross_attention.output})
      out.push_back(p);
  }
  return out;
}

void MoeDecoderModel::adopt_backbone(const MoeDecoderModel& source) {
  const ModelConfig& a = config_;
  const ModelConfig& b = source.config_;
  if (a.d_model != b.d_model || a.heads != b.heads || a.encoder_blocks != b.encoder_blocks ||
      a.decoder_blocks != b.decoder_blocks || a.ffn_hidden != b.ffn_hidden || a.pool != b.pool ||
      a.num_bins != b.num_bins || a.backbone_seed != b.backbone_seed) {
    throw ModelError("adopt_backbone: backbone configurations differ");
  }
  auto dst = body_parameters();
  auto src = const_cast<MoeDecoderModel&>(source).body_parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value.clone(!dst[i]->frozen);
}

MoeDecoderModel MoeDecoderModel::clone() const {
  MoeDecoderModel copy = *this;
  auto dst = copy.parameters();
  for (Parameter* p : dst) *p = p->clone();
  return copy;
}

void MoeDecoderModel::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format"] = "dmix-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config"] = {{"d_model", config_.d_model},       {"heads", config_.heads},
                 {"bottleneck", config_.bottleneck}, {"encoder_blocks", config_.encoder_blocks},
                 {"decoder_blocks", config_.decoder_blocks}, {"ffn_hidden", config_.ffn_hidden},
                 {"pool", config_.pool},             {"num_bins", config_.num_bins},
                 {"seed", config_.seed},             {"backbone_seed", config_.backbone_seed}};
  std::ostringstream rng_state;
  rng_state << const_cast<Rng&>(rng_).engine();
  j["rng_state"] = rng_state.str();
  auto& vocab = j["vocab"] = nlohmann::json::array();
  for (const auto& l : vocab_)
    vocab.push_back({{"kind", to_string(l.kind)}, {"class_id", l.class_id},
                     {"class_name", l.class_name}, {"task_id", l.task_id}});
  auto& experts = j["experts"] = nlohmann::json::array();
  for (std::size_t b = 0; b < decoder_.size(); ++b)
    for (std::size_t i = 0; i < decoder_[b].experts.size(); ++i)
      experts.push_back({{"block", b}, {"index", i}, {"owner_task", decoder_[b].experts[i].owner_task},
                         {"frozen", decoder_[b].experts[i].down.frozen}});
  auto& params = j["parameters"] = nlohmann::json::object();
  for (const Parameter* p : parameters())
    params[p->name] = {{"shape", p->value.shape()},
                       {"data", std::vector<double>(p->value.data().begin(), p->value.data().end())}};
  std::ofstream out(path);
  if (!out) throw ModelError("checkpoint: cannot write " + path.string());
  out << j.dump();
}

MoeDecoderModel MoeDecoderModel::load(const std::filesystem::path& path, std::optional<ModelConfig> expected) {
  std::ifstream in(path);
  if (!in) throw ModelError("checkpoint: cannot read " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("checkpoint: malformed file: ") + e.what());
  }
  try {
    if (j.at("format") != "dmix-checkpoint" || j.at("version") != kCheckpointVersion) {
      throw ModelError("checkpoint: unsupported format or version");
    }
    const auto& c = j.at("config");
    ModelConfig config;
    config.d_model = c.at("d_model");
    config.heads = c.at("heads");
    config.bottleneck = c.at("bottleneck");
    config.encoder_blocks = c.at("encoder_blocks");
    config.decoder_blocks = c.at("decoder_blocks");
    config.ffn_hidden = c.at("ffn_hidden");
    config.pool = c.at("pool");
    config.num_bins = c.at("num_bins");
    config.seed = c.at("seed");
    config.backbone_seed = c.at("backbone_seed");
    if (expected && !(*expected == config)) {
      throw ModelError("checkpoint: dimensions do not match the expected model configuration");
    }
    MoeDecoderModel model(config);
    for (const auto& v : j.at("vocab"))
      model.ensure_token({event_kind_from_string(v.at("kind")), v.at("class_id"), v.at("class_name"), v.at("task_id")});
    std::vector<std::pair<int, bool>> owners;
    for (const auto& e : j.at("experts"))
      if (e.at("block") == 0) owners.emplace_back(e.at("owner_task").get<int>(), e.at("frozen").get<bool>());
    for (const auto& [owner, frozen] : owners) model.add_expert(owner);

    const auto& params = j.at("parameters");
    auto targets = model.parameters();
    if (params.size() != targets.size()) throw ModelError("checkpoint: parameter count mismatch");
    for (Parameter* p : targets) {
      const auto& entry = params.at(p->name);
      const Shape shape = entry.at("shape").get<Shape>();
      if (shape != p->value.shape()) {
        throw ModelError("checkpoint: shape mismatch for " + p->name + ": " + shape_string(shape) +
                         " vs " + shape_string(p->value.shape()));
      }
      const auto data = entry.at("data").get<std::vector<double>>();
      if (data.size() != p->value.size()) throw ModelError("checkpoint: data length mismatch for " + p->name);
      std::copy(data.begin(), data.end(), p->value.mutable_data().begin());
    }
    // Restore per-expert freeze flags (the last expert may have been frozen too).
    for (auto& block : model.decoder_)
      for (std::size_t i = 0; i < block.experts.size(); ++i) {
        block.experts[i].down.set_frozen(owners[i].second);
        block.experts[i].up.set_frozen(owners[i].second);
      }
    std::istringstream rng_state(j.at("rng_state").get<std::string>());
    rng_state >> model.rng_.engine();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("checkpoint: malformed file: ") + e.what());
  }
}

}  // namespace dmix
