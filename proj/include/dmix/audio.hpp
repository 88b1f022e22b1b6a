#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmix {

inline constexpr int kSampleRate = 8000;

enum class EventKind { semantic, acoustic };

std::string to_string(EventKind kind);
EventKind event_kind_from_string(const std::string& text);

struct EventLabel {
  EventKind kind = EventKind::semantic;
  int class_id = 0;
  std::string class_name;
  int task_id = 0;

  // Identity is (kind, class_id); name and task are annotations.
  bool same_event(const EventLabel& other) const {
    return kind == other.kind && class_id == other.class_id;
  }
};

struct LabelKey {
  EventKind kind;
  int class_id;
  auto operator<=>(const LabelKey&) const = default;
};

inline LabelKey key_of(const EventLabel& label) { return {label.kind, label.class_id}; }

std::string default_class_name(EventKind kind, int class_id);

struct AudioClip {
  std::string id;
  std::vector<double> samples;
  int sample_rate = kSampleRate;
  // Sorted semantic-first; at most one label of each kind.
  std::vector<EventLabel> labels;

  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
  std::optional<EventLabel> label_of(EventKind kind) const;
  std::vector<LabelKey> label_keys() const;
};

// Renders a synthetic clip. Semantic class k is a pulse-train motif on a
// 400 + 40k Hz carrier gated by a class-specific 8-slot on/off pattern;
// acoustic class m is a 100 + 25m Hz tone over class-specific band-limited
// noise. Both present: summed at gains 1.0 / 0.5, peak-normalised to 0.9.
// background_noise > 0 adds white noise whose per-clip level is drawn from
// [0.5, 1.5] x background_noise, before any normalisation.
// Throws std::invalid_argument when no class is given or the duration is
// outside [0.5, 4.0] s.
AudioClip synth_clip(std::optional<int> semantic, std::optional<int> acoustic, double duration_s,
                     std::uint64_t seed, double background_noise = 0.0);

// The 8-slot gate used for semantic class k (bit i = slot i).
std::uint8_t semantic_slot_pattern(int class_id);

AudioClip splice(const AudioClip& a, const AudioClip& b);
AudioClip overlay(const AudioClip& a, const AudioClip& b);

// Scales in place so the largest |sample| equals target. No-op on silence.
void peak_normalize(std::vector<double>& samples, double target);

}  // namespace dmix
