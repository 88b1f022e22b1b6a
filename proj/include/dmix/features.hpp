#pragma once

#include <cstddef>
#include <vector>

#include "dmix/audio.hpp"

namespace dmix {

inline constexpr std::size_t kWindowSamples = 200;  // 25 ms at 8 kHz
inline constexpr std::size_t kHopSamples = 80;      // 10 ms at 8 kHz
inline constexpr std::size_t kNumBins = 64;         // 0 .. 4 kHz, 62.5 Hz apart
inline constexpr double kLogFloor = -10.0;

// Log-magnitude STFT frames, row-major num_frames x num_bins.
struct FeatureSeq {
  std::size_t num_frames = 0;
  std::size_t num_bins = kNumBins;
  std::vector<double> frames;
  double frame_hop_s = static_cast<double>(kHopSamples) / kSampleRate;
  double frame_len_s = static_cast<double>(kWindowSamples) / kSampleRate;

  double at(std::size_t frame, std::size_t bin) const { return frames[frame * num_bins + bin]; }
};

// Frequency in Hz at the centre of bin k.
double bin_center_hz(std::size_t bin);

std::size_t frame_count(std::size_t num_samples);

// Hann-windowed magnitude spectrum on 64 linearly spaced bins, natural log
// clamped below at -10. Throws std::invalid_argument for clips shorter than
// one window.
FeatureSeq featurize(const AudioClip& clip);

}  // namespace dmix
