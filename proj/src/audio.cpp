#include "dmix/audio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <numbers>

#include "dmix/rng.hpp"

namespace dmix {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kSlots = 8;
constexpr int kNoiseComponents = 24;
constexpr double kRampSeconds = 0.005;

constexpr std::array<const char*, 8> kSemanticNames = {
    "conflict", "movement", "scenario", "talk", "life", "action", "process", "justice"};
constexpr std::array<const char*, 5> kAcousticNames = {"nature", "animal", "human", "domestic",
                                                       "urban"};

void add_semantic(std::vector<double>& out, int k, Rng& rng) {
  const double carrier = 400.0 + 40.0 * k;
  const std::uint8_t pattern = semantic_slot_pattern(k);
  const double amplitude = rng.uniform(0.45, 0.6);
  const double harmonic = rng.uniform(0.15, 0.3);
  const double phase = rng.uniform(0.0, kTwoPi);
  const double noise = rng.uniform(0.01, 0.03);
  const std::size_t n = out.size();
  const double slot_len = static_cast<double>(n) / kSlots;
  const double ramp = kRampSeconds * kSampleRate;

  for (int s = 0; s < kSlots; ++s) {
    if (!((pattern >> s) & 1u)) continue;
    // Bursts occupy the middle 80% of a slot with a small onset jitter.
    const double jitter = rng.uniform(-0.05, 0.05) * slot_len;
    const double begin = std::max(0.0, s * slot_len + 0.1 * slot_len + jitter);
    const double end = std::min(static_cast<double>(n), begin + 0.8 * slot_len);
    for (auto i = static_cast<std::size_t>(begin); i < static_cast<std::size_t>(end); ++i) {
      const double t = static_cast<double>(i) / kSampleRate;
      const double from_edge = std::min(i - begin, end - i);
      const double env = from_edge >= ramp ? 1.0 : 0.5 - 0.5 * std::cos(std::numbers::pi * from_edge / ramp);
      out[i] += amplitude * env *
                (std::sin(kTwoPi * carrier * t + phase) +
                 harmonic * std::sin(kTwoPi * 2.0 * carrier * t + 2.0 * phase));
    }
  }
  for (double& v : out) v += noise * rng.uniform(-1.0, 1.0);
}

void add_acoustic(std::vector<double>& out, int m, Rng& rng) {
  const double tone = 100.0 + 25.0 * m;
  // The noise band and its component frequencies are fixed per class; only
  // phases and levels vary from clip to clip.
  Rng band_rng(mix_seed(0xAC0u, static_cast<std::uint64_t>(m)));
  const double center = 1200.0 + std::fmod(350.0 * m, 2400.0);
  std::array<double, kNoiseComponents> freqs{};
  for (double& f : freqs) f = center + band_rng.uniform(-150.0, 150.0);

  const double tone_amp = rng.uniform(0.2, 0.35);
  const double tone_phase = rng.uniform(0.0, kTwoPi);
  const double noise_amp = rng.uniform(0.035, 0.05);
  std::array<double, kNoiseComponents> phases{};
  for (double& p : phases) p = rng.uniform(0.0, kTwoPi);

  for (std::size_t i = 0; i < out.size(); ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    double v = tone_amp * std::sin(kTwoPi * tone * t + tone_phase);
    for (int c = 0; c < kNoiseComponents; ++c) v += noise_amp * std::sin(kTwoPi * freqs[c] * t + phases[c]);
    out[i] += v;
  }
}

std::vector<EventLabel> merge_labels(const std::vector<EventLabel>& a,
                                     const std::vector<EventLabel>& b) {
  std::vector<EventLabel> out = a;
  for (const auto& label : b) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const EventLabel& l) { return l.kind == label.kind; });
    if (it == out.end()) {
      out.push_back(label);
    } else if (!it->same_event(label)) {
      throw std::invalid_argument("clip composition: two different " + to_string(label.kind) +
                                  " events in one clip");
    }
  }
  std::sort(out.begin(), out.end(),
            [](const EventLabel& x, const EventLabel& y) { return key_of(x) < key_of(y); });
  return out;
}

void require_same_rate(const AudioClip& a, const AudioClip& b) {
  if (a.sample_rate != b.sample_rate) {
    throw std::invalid_argument("clip composition: sample rates differ (" +
                                std::to_string(a.sample_rate) + " vs " +
                                std::to_string(b.sample_rate) + ")");
  }
}

}  // namespace

std::string to_string(EventKind kind) {
  return kind == EventKind::semantic ? "semantic" : "acoustic";
}

EventKind event_kind_from_string(const std::string& text) {
  if (text == "semantic") return EventKind::semantic;
  if (text == "acoustic") return EventKind::acoustic;
  throw std::invalid_argument("unknown event kind '" + text + "'");
}

std::string default_class_name(EventKind kind, int class_id) {
  const auto idx = static_cast<std::size_t>(class_id);
  if (kind == EventKind::semantic && idx < kSemanticNames.size()) return kSemanticNames[idx];
  if (kind == EventKind::acoustic && idx < kAcousticNames.size()) return kAcousticNames[idx];
  return to_string(kind) + "_" + std::to_string(class_id);
}

std::optional<EventLabel> AudioClip::label_of(EventKind kind) const {
  for (const auto& l : labels)
    if (l.kind == kind) return l;
  return std::nullopt;
}

std::vector<LabelKey> AudioClip::label_keys() const {
  std::vector<LabelKey> keys;
  for (const auto& l : labels) keys.push_back(key_of(l));
  std::sort(keys.begin(), keys.end());
  return keys;
}

std::uint8_t semantic_slot_pattern(int class_id) {
  // At least three bursts and at least one gap, so every motif is audible and gated.
  for (std::uint64_t attempt = 0;; ++attempt) {
    const auto bits = static_cast<std::uint8_t>(
        mix_seed(0x5E3A11u + attempt, static_cast<std::uint64_t>(class_id)) & 0xFFu);
    const int ones = std::popcount(bits);
    if (ones >= 3 && ones <= 6) return bits;
  }
}

void peak_normalize(std::vector<double>& samples, double target) {
  double peak = 0.0;
  for (double v : samples) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) return;
  const double g = target / peak;
  for (double& v : samples) v *= g;
}

AudioClip synth_clip(std::optional<int> semantic, std::optional<int> acoustic, double duration_s,
                     std::uint64_t seed, double background_noise) {
  if (!semantic && !acoustic) throw std::invalid_argument("synth_clip: no event class given");
  if (!(duration_s >= 0.5 && duration_s <= 4.0)) {
    throw std::invalid_argument("synth_clip: duration must lie in [0.5, 4.0] s");
  }
  if ((semantic && *semantic < 0) || (acoustic && *acoustic < 0)) {
    throw std::invalid_argument("synth_clip: class ids must be non-negative");
  }
  if (!(background_noise >= 0.0)) throw std::invalid_argument("synth_clip: background_noise must be >= 0");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * kSampleRate));
  Rng rng(seed);
  AudioClip clip;
  clip.sample_rate = kSampleRate;

  std::vector<double> sem(n, 0.0), aco(n, 0.0);
  if (semantic) {
    add_semantic(sem, *semantic, rng);
    clip.labels.push_back({EventKind::semantic, *semantic,
                           default_class_name(EventKind::semantic, *semantic), 0});
  }
  if (acoustic) {
    add_acoustic(aco, *acoustic, rng);
    clip.labels.push_back({EventKind::acoustic, *acoustic,
                           default_class_name(EventKind::acoustic, *acoustic), 0});
  }

  if (background_noise > 0.0) {
    std::vector<double>& target = semantic ? sem : aco;
    const double level = background_noise * rng.uniform(0.5, 1.5);
    for (double& v : target) v += level * rng.uniform(-1.0, 1.0);
  }

  if (semantic && acoustic) {
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) clip.samples[i] = sem[i] + 0.5 * aco[i];
    peak_normalize(clip.samples, 0.9);
  } else {
    clip.samples = semantic ? std::move(sem) : std::move(aco);
    double peak = 0.0;
    for (double v : clip.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0.9) peak_normalize(clip.samples, 0.9);
  }
  return clip;
}

AudioClip splice(const AudioClip& a, const AudioClip& b) {
  require_same_rate(a, b);
  AudioClip out;
  out.id = a.id + "+" + b.id;
  out.sample_rate = a.sample_rate;
  out.samples.reserve(a.samples.size() + b.samples.size());
  out.samples.insert(out.samples.end(), a.samples.begin(), a.samples.end());
  out.samples.insert(out.samples.end(), b.samples.begin(), b.samples.end());
  out.labels = merge_labels(a.labels, b.labels);
  return out;
}

AudioClip overlay(const AudioClip& a, const AudioClip& b) {
  require_same_rate(a, b);
  AudioClip out;
  out.id = a.id + "*" + b.id;
  out.sample_rate = a.sample_rate;
  out.samples.assign(std::max(a.samples.size(), b.samples.size()), 0.0);
  for (std::size_t i = 0; i < a.samples.size(); ++i) out.samples[i] += a.samples[i];
  for (std::size_t i = 0; i < b.samples.size(); ++i) out.samples[i] += 0.5 * b.samples[i];
  double peak = 0.0;
  for (double v : out.samples) peak = std::max(peak, std::abs(v));
  if (peak > 1.0) peak_normalize(out.samples, 0.9);
  out.labels = merge_labels(a.labels, b.labels);
  return out;
}

}  // namespace dmix
