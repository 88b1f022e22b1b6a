#include "dmix/wav.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace dmix {
namespace {

constexpr double kPcmScale = 32767.0;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFFu));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_tag(std::vector<std::uint8_t>& out, const char (&tag)[5]) {
  out.insert(out.end(), tag, tag + 4);
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  if (at + 4 > in.size()) throw FormatError("wav: truncated header");
  return static_cast<std::uint32_t>(in[at]) | static_cast<std::uint32_t>(in[at + 1]) << 8 |
         static_cast<std::uint32_t>(in[at + 2]) << 16 | static_cast<std::uint32_t>(in[at + 3]) << 24;
}

std::uint16_t get_u16(const std::vector<std::uint8_t>& in, std::size_t at) {
  if (at + 2 > in.size()) throw FormatError("wav: truncated header");
  return static_cast<std::uint16_t>(in[at] | in[at + 1] << 8);
}

bool tag_is(const std::vector<std::uint8_t>& in, std::size_t at, const char* tag) {
  return at + 4 <= in.size() && std::memcmp(in.data() + at, tag, 4) == 0;
}

}  // namespace

void wav_write(const AudioClip& clip, const std::filesystem::path& path) {
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (double s : clip.samples) {
    const double q = std::round(std::clamp(s, -1.0, 1.0) * kPcmScale);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw FormatError("wav: cannot open " + path.string() + " for writing");
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw FormatError("wav: write failed for " + path.string());
}

AudioClip wav_read(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw FormatError("wav: cannot open " + path.string());
  const std::vector<std::uint8_t> in((std::istreambuf_iterator<char>(file)),
                                     std::istreambuf_iterator<char>());
  if (!tag_is(in, 0, "RIFF") || !tag_is(in, 8, "WAVE")) throw FormatError("wav: not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint32_t rate = 0;
  std::size_t at = 12;
  while (at + 8 <= in.size()) {
    const std::uint32_t chunk = get_u32(in, at + 4);
    const std::size_t body = at + 8;
    if (tag_is(in, at, "fmt ")) {
      if (chunk < 16) throw FormatError("wav: short fmt chunk");
      const std::uint16_t format = get_u16(in, body);
      const std::uint16_t channels = get_u16(in, body + 2);
      rate = get_u32(in, body + 4);
      const std::uint16_t bits = get_u16(in, body + 14);
      if (format != 1) throw FormatError("wav: only PCM encoding is supported");
      if (channels != 1) throw FormatError("wav: only mono is supported");
      if (bits != 16) throw FormatError("wav: only 16-bit samples are supported");
      have_fmt = true;
    } else if (tag_is(in, at, "data")) {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
      if (body + chunk > in.size()) throw FormatError("wav: truncated data chunk");
      if (chunk % 2 != 0) throw FormatError("wav: odd data chunk size");
      AudioClip clip;
      clip.id = path.stem().string();
      clip.sample_rate = static_cast<int>(rate);
      clip.samples.resize(chunk / 2);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        const auto q = static_cast<std::int16_t>(get_u16(in, body + 2 * i));
        clip.samples[i] = std::max(-1.0, static_cast<double>(q) / kPcmScale);
      }
      return clip;
    }
    at = body + chunk + (chunk & 1u);
  }
  throw FormatError("wav: missing " + std::string(have_fmt ? "data" : "fmt") + " chunk");
}

}  // namespace dmix
