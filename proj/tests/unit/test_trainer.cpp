#include <doctest.h>

#include <cmath>

#include "dmix/gradcheck.hpp"
#include "dmix/ops.hpp"
#include "dmix/trainer.hpp"

using namespace dmix;

namespace {

RouterTrace trace_of(std::vector<std::vector<double>> per_block, std::size_t experts) {
  RouterTrace t;
  for (auto& row : per_block) {
    const std::size_t rows = row.size() / experts;
    t.logits.push_back(Tensor::from({rows, experts}, std::move(row)));
  }
  return t;
}

CorpusSpec tiny_spec() {
  CorpusSpec spec = default_corpus_spec();
  spec.clips_per_class = 10;
  return spec;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.initial_lr = 3e-3;
  c.epochs_per_task = 2;
  c.batch_size = 8;
  return c;
}

ModelConfig small_model(std::uint64_t seed) {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.bottleneck = 4;
  c.encoder_blocks = 1;
  c.decoder_blocks = 2;
  c.ffn_hidden = 16;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("data_loss examples and convexity") {
  const Tensor task = Tensor::scalar(2.0), memory = Tensor::scalar(1.0);
  CHECK(data_loss(task, memory, 1.0).item() == 2.0);
  CHECK(data_loss(task, Tensor::scalar(123.0), 1.0).item() == 2.0);
  CHECK(data_loss(task, memory, 0.5).item() == 1.5);
  for (double lambda : {0.0, 0.2, 0.5, 0.9}) CHECK(data_loss(Tensor::scalar(0.7), Tensor::scalar(0.7), lambda).item() == doctest::Approx(0.7).epsilon(1e-15));
  CHECK_THROWS_AS(data_loss(task, memory, 1.5), ConfigError);
  CHECK_THROWS_AS(data_loss(task, memory, -0.1), ConfigError);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform(0, 5), b = rng.uniform(0, 5), l = rng.uniform();
    const double v = data_loss(Tensor::scalar(a), Tensor::scalar(b), l).item();
    CHECK(v >= std::min(a, b) - 1e-12);
    CHECK(v <= std::max(a, b) + 1e-12);
  }
}

TEST_CASE("gate_loss examples") {
  const std::vector<RouterTrace> one{trace_of({{0.7}, {-1.3}}, 1)};
  const std::vector<std::size_t> gold0{0};
  CHECK(gate_loss(one, gold0).item() == doctest::Approx(0.0).epsilon(1e-15));

  const std::vector<RouterTrace> flat{trace_of({{0, 0}, {0, 0}}, 2), trace_of({{0, 0}, {0, 0}}, 2)};
  const std::vector<std::size_t> gold_any{1, 0};
  CHECK(gate_loss(flat, gold_any).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  const std::vector<RouterTrace> hand{trace_of({{2, 0}}, 2)};
  CHECK(gate_loss(hand, gold0).item() == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-14));
  CHECK(std::abs(gate_loss(hand, gold0).item() - 0.1269) < 1e-4);

  // Blocks are summed before the softmax.
  const std::vector<RouterTrace> split{trace_of({{1, 0}, {1, 0}}, 2)};
  CHECK(gate_loss(split, gold0).item() == doctest::Approx(gate_loss(hand, gold0).item()).epsilon(1e-14));

  const std::vector<std::size_t> gold2{2};
  CHECK_THROWS_AS(gate_loss(hand, gold2), std::invalid_argument);
}

TEST_CASE("gate_loss falls as the summed logits move toward the gold one-hot") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<double> base{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const std::size_t gold = rng.index(2);
    double previous = std::numeric_limits<double>::infinity();
    for (int step = 0; step <= 10; ++step) {
      std::vector<double> logits = base;
      logits[gold] += 0.5 * step;
      logits[1 - gold] -= 0.5 * step;
      const std::vector<RouterTrace> traces{trace_of({logits}, 2)};
      const std::vector<std::size_t> g{gold};
      const double loss = gate_loss(traces, g).item();
      CHECK(loss < previous);
      previous = loss;
    }
  }
}

TEST_CASE("total_loss examples") {
  CHECK(total_loss(Tensor::scalar(1.5), Tensor::scalar(9.0), 0.0).item() == 1.5);
  CHECK(total_loss(Tensor::scalar(1.5), Tensor::scalar(0.2), 0.1).item() == doctest::Approx(1.52).epsilon(1e-15));
  double previous = -1.0;
  for (double gate = 0.0; gate < 3.0; gate += 0.25) {
    const double v = total_loss(Tensor::scalar(1.0), Tensor::scalar(gate), 0.1).item();
    CHECK(v > previous);
    previous = v;
  }
}

TEST_CASE("total loss gradient matches finite differences for every trainable group") {
  const TaskStream stream = build_task_stream(tiny_spec());
  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    MoeDecoderModel model(small_model(seed));
    register_labels(model, stream.tasks[0].train);
    register_labels(model, stream.tasks[1].train);
    model.add_expert(0);
    model.add_expert(1);
    Rng rng(seed);
    std::vector<Parameter*> params = model.trainable_parameters();
    // Previous experts are frozen after growth; open them for the check so
    // both experts and their router rows carry gradient.
    for (std::size_t b = 0; b < 2; ++b)
      for (auto& e : model.decoder_block(b).experts) {
        e.down.set_frozen(false);
        e.up.set_frozen(false);
      }
    params = model.trainable_parameters();
    for (Parameter* p : params)
      for (double& v : p->value.mutable_data()) v = rng.uniform(-0.5, 0.5);

    EncodingCache cache;
    const std::vector<const AudioClip*> task{&stream.tasks[1].train[0], &stream.tasks[1].train[1]};
    const std::vector<const AudioClip*> replay{&stream.tasks[0].train[0]};
    const auto loss = [&] {
      std::vector<RouterTrace> traces;
      std::vector<std::size_t> gold;
      const auto part = [&](const std::vector<const AudioClip*>& clips, std::size_t g) {
        Tensor sum;
        for (std::size_t i = 0; i < clips.size(); ++i) {
          ClipPass pass = clip_loss(model, cache.get(model, *clips[i]), *clips[i]);
          sum = i == 0 ? pass.loss : ops::add(sum, pass.loss);
          traces.push_back(pass.forward.trace);
          gold.push_back(g);
        }
        return ops::scale(sum, 1.0 / static_cast<double>(clips.size()));
      };
      const Tensor data = data_loss(part(task, 1), part(replay, 0), 0.5);
      return total_loss(data, gate_loss(traces, gold), 0.1);
    };
    const GradCheckReport report = grad_check_report(loss, params, 1e-6);
    INFO("worst " << report.worst_parameter << " at " << report.worst_index);
    CHECK(report.max_relative_error < 1e-4);
  }
}

TEST_CASE("train_task requires an expert and keeps frozen weights intact") {
  const TaskStream stream = build_task_stream(tiny_spec());
  EncodingCache cache;
  MoeDecoderModel model;
  ReplayMemory memory;
  CHECK_THROWS_AS(train_task(model, stream.tasks[0], 0, memory, quick_config(), cache), StateError);

  const std::uint64_t encoder_before = model.encoder_checksum();
  model.add_expert(0);
  const TaskRecord first = train_task(model, stream.tasks[0], 0, memory, quick_config(), cache);
  for (const auto& e : first.epochs) CHECK(e.gate_loss == 0.0);  // one expert, no replay

  memory.add(select_exemplars(stream.tasks[0].train, 0, 1));
  model.add_expert(1);
  std::vector<const Parameter*> expert0;
  for (std::size_t b = 0; b < 2; ++b) {
    expert0.push_back(&model.decoder_block(b).experts[0].down);
    expert0.push_back(&model.decoder_block(b).experts[0].up);
  }
  const std::uint64_t frozen_before = parameter_checksum(expert0);
  const TaskRecord second = train_task(model, stream.tasks[1], 1, memory, quick_config(), cache);
  CHECK(parameter_checksum(expert0) == frozen_before);
  CHECK(model.encoder_checksum() == encoder_before);
  CHECK(second.task_id == stream.tasks[1].task_id);
  for (const auto& e : second.epochs) CHECK(e.gate_loss > 0.0);
}

TEST_CASE("learning rate only decays by the configured factor") {
  const TaskStream stream = build_task_stream(tiny_spec());
  EncodingCache cache;
  MoeDecoderModel model;
  model.add_expert(0);
  TrainConfig config = quick_config();
  config.epochs_per_task = 6;
  const TaskRecord record = train_task(model, stream.tasks[0], 0, {}, config, cache);
  REQUIRE(record.epochs.size() == 6);
  CHECK(record.epochs[0].lr == config.initial_lr);
  double best = -1.0;
  for (std::size_t i = 1; i < record.epochs.size(); ++i) {
    const bool improved = record.epochs[i - 1].val_acc > best;
    best = std::max(best, record.epochs[i - 1].val_acc);
    const double expected = improved ? record.epochs[i - 1].lr : record.epochs[i - 1].lr * 0.8;
    CHECK(record.epochs[i].lr == doctest::Approx(expected).epsilon(1e-15));
  }
}

TEST_CASE("training is bit-exact for equal seeds") {
  const TaskStream stream = build_task_stream(tiny_spec());
  std::uint64_t sums[2];
  for (int run = 0; run < 2; ++run) {
    EncodingCache cache;
    MoeDecoderModel model;
    model.add_expert(0);
    train_task(model, stream.tasks[0], 0, {}, quick_config(), cache);
    sums[run] = model.checksum();
  }
  CHECK(sums[0] == sums[1]);
}

TEST_CASE("two separable classes are learned") {
  CorpusSpec spec;
  spec.num_semantic_classes = 2;
  spec.num_acoustic_classes = 0;
  spec.clips_per_class = 40;
  spec.background_noise = 0.2;
  spec.tasks = {{"pair", {0, 1}, {}}};
  const TaskStream stream = build_task_stream(spec);
  EncodingCache cache;
  MoeDecoderModel model;
  model.add_expert(0);
  TrainConfig config;
  config.initial_lr = 3e-3;
  config.epochs_per_task = 30;
  const ReplayMemory none;
  train_task(model, stream.tasks[0], 0, none, config, cache);
  const double centroid = nearest_centroid_accuracy(stream.tasks[0].train, stream.tasks[0].test);
  CHECK(centroid >= 0.9);
  CHECK(evaluate(model, stream.tasks[0].train, cache) >= 0.95);
}

TEST_CASE("evaluate uses exact label-set matches") {
  const TaskStream stream = build_task_stream(tiny_spec());
  EncodingCache cache;
  MoeDecoderModel model;
  model.add_expert(0);
  register_labels(model, stream.tasks[0].train);
  std::vector<AudioClip> class0;
  for (const auto& c : stream.tasks[0].train)
    if (c.labels.size() == 1 && c.labels[0].kind == EventKind::semantic && c.labels[0].class_id == 0) class0.push_back(c);
  REQUIRE_FALSE(class0.empty());
  const std::size_t token = *model.token_of({EventKind::semantic, 0});
  for (double& v : model.head_weight().value.mutable_data()) v = 0.0;
  model.head_bias().value.mutable_data()[token] = 10.0;
  CHECK(evaluate(model, class0, cache) == 1.0);

  // A two-event clip whose prediction only names its semantic event is wrong.
  AudioClip both = synth_clip(0, 0, 1.0, 5);
  both.labels[0].task_id = 0;
  const std::vector<AudioClip> combined{both};
  CHECK(evaluate(model, combined, cache) == 0.0);
  CHECK_THROWS_AS(evaluate(model, std::vector<AudioClip>{}, cache), std::invalid_argument);
}

TEST_CASE("an untrained model scores near chance") {
  CorpusSpec spec = default_corpus_spec();
  spec.clips_per_class = 34;  // about 200 clips over 6 semantic classes
  spec.num_acoustic_classes = 0;
  spec.tasks = {{"all", {0, 1, 2, 3, 4, 5}, {}}};
  const TaskStream stream = build_task_stream(spec);
  std::vector<AudioClip> clips = stream.tasks[0].train;
  clips.insert(clips.end(), stream.tasks[0].val.begin(), stream.tasks[0].val.end());
  clips.insert(clips.end(), stream.tasks[0].test.begin(), stream.tasks[0].test.end());
  EncodingCache cache;
  MoeDecoderModel model;
  model.add_expert(0);
  register_labels(model, clips);
  CHECK(clips.size() >= 200);
  CHECK(evaluate(model, clips, cache) < 2.0 / 6.0);
}
