#pragma once

#include <filesystem>
#include <stdexcept>

#include "dmix/audio.hpp"

namespace dmix {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 16-bit PCM, mono, little-endian RIFF/WAVE.
void wav_write(const AudioClip& clip, const std::filesystem::path& path);
// Labels are not stored in WAV files; the returned clip has none.
AudioClip wav_read(const std::filesystem::path& path);

}  // namespace dmix
