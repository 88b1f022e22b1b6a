#include "dmix/features.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dmix {
namespace {

struct DftTables {
  std::array<double, kWindowSamples> window{};
  std::vector<double> cos_table = std::vector<double>(kNumBins * kWindowSamples);
  std::vector<double> sin_table = std::vector<double>(kNumBins * kWindowSamples);

  DftTables() {
    for (std::size_t n = 0; n < kWindowSamples; ++n)
      window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                       static_cast<double>(kWindowSamples - 1));
    for (std::size_t k = 0; k < kNumBins; ++k) {
      const double w = 2.0 * std::numbers::pi * bin_center_hz(k) / kSampleRate;
      for (std::size_t n = 0; n < kWindowSamples; ++n) {
        cos_table[k * kWindowSamples + n] = std::cos(w * static_cast<double>(n)) * window[n];
        sin_table[k * kWindowSamples + n] = std::sin(w * static_cast<double>(n)) * window[n];
      }
    }
  }
};

const DftTables& tables() {
  static const DftTables t;
  return t;
}

}  // namespace

double bin_center_hz(std::size_t bin) {
  return static_cast<double>(bin) * (kSampleRate / 2.0) / static_cast<double>(kNumBins);
}

std::size_t frame_count(std::size_t num_samples) {
  if (num_samples < kWindowSamples) return 0;
  return 1 + (num_samples - kWindowSamples) / kHopSamples;
}

FeatureSeq featurize(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate) {
    throw std::invalid_argument("featurize: expected 8000 Hz audio, got " +
                                std::to_string(clip.sample_rate));
  }
  if (clip.samples.size() < kWindowSamples) {
    throw std::invalid_argument("featurize: clip shorter than one 25 ms window");
  }
  const auto& t = tables();
  FeatureSeq out;
  out.num_frames = frame_count(clip.samples.size());
  out.frames.resize(out.num_frames * kNumBins);
  const double floor_mag = std::exp(kLogFloor);
  for (std::size_t f = 0; f < out.num_frames; ++f) {
    const double* x = clip.samples.data() + f * kHopSamples;
    for (std::size_t k = 0; k < kNumBins; ++k) {
      const double* c = t.cos_table.data() + k * kWindowSamples;
      const double* s = t.sin_table.data() + k * kWindowSamples;
      double re = 0.0, im = 0.0;
      for (std::size_t n = 0; n < kWindowSamples; ++n) {
        re += x[n] * c[n];
        im -= x[n] * s[n];
      }
      const double mag = std::sqrt(re * re + im * im);
      out.frames[f * kNumBins + k] = mag > floor_mag ? std::log(mag) : kLogFloor;
    }
  }
  return out;
}

}  // namespace dmix
