#include "mgvq/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "mgvq/error.hpp"

namespace mgvq {

namespace {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T read_le(const std::vector<char>& buf, std::size_t pos) {
  if (pos + sizeof(T) > buf.size()) throw FormatError("truncated WAV header");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  return v;
}

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path, double expected_rate) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open WAV file " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw FormatError(path.string() + ": not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_pos = 0, data_len = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id(buf.data() + pos, 4);
    const auto len = read_le<std::uint32_t>(buf, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      format = read_le<std::uint16_t>(buf, body);
      channels = read_le<std::uint16_t>(buf, body + 2);
      rate = read_le<std::uint32_t>(buf, body + 4);
      bits = read_le<std::uint16_t>(buf, body + 14);
      if (format == kFormatExtensible && len >= 26) format = read_le<std::uint16_t>(buf, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      data_pos = body;
      data_len = std::min<std::size_t>(len, buf.size() - body);
    }
    pos = body + len + (len & 1u);
  }
  if (!have_fmt || data_pos == 0) throw FormatError(path.string() + ": missing fmt or data chunk");
  if (channels != 1) throw FormatError(path.string() + ": only mono audio is supported");
  if (expected_rate > 0.0 && static_cast<double>(rate) != expected_rate) {
    throw FormatError(path.string() + ": sample rate " + std::to_string(rate) + " Hz, expected " +
                      std::to_string(static_cast<long>(expected_rate)) + " Hz (resampling is not supported)");
  }

  Waveform wav;
  wav.sample_rate = rate;
  if (format == kFormatPcm && bits == 16) {
    const std::size_t n = data_len / 2;
    wav.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      wav.samples[i] = read_le<std::int16_t>(buf, data_pos + 2 * i) / 32768.0;
    }
  } else if (format == kFormatFloat && bits == 32) {
    const std::size_t n = data_len / 4;
    wav.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) wav.samples[i] = read_le<float>(buf, data_pos + 4 * i);
  } else {
    throw FormatError(path.string() + ": unsupported sample format (need 16-bit PCM or 32-bit float)");
  }
  if (wav.samples.empty()) throw FormatError(path.string() + ": no samples");
  for (double v : wav.samples) {
    if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite samples");
  }
  return wav;
}

void write_wav(const std::filesystem::path& path, const Waveform& wav, WavEncoding encoding) {
  wav.validate();
  const bool pcm = encoding == WavEncoding::Pcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint32_t rate = static_cast<std::uint32_t>(std::lround(wav.sample_rate));
  const std::uint32_t data_len = static_cast<std::uint32_t>(wav.samples.size() * (bits / 8));

  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write WAV file " + path.string());
  os.write("RIFF", 4);
  put<std::uint32_t>(os, 36 + data_len);
  os.write("WAVEfmt ", 8);
  put<std::uint32_t>(os, 16);
  put<std::uint16_t>(os, pcm ? kFormatPcm : kFormatFloat);
  put<std::uint16_t>(os, 1);
  put<std::uint32_t>(os, rate);
  put<std::uint32_t>(os, rate * (bits / 8));
  put<std::uint16_t>(os, bits / 8);
  put<std::uint16_t>(os, bits);
  os.write("data", 4);
  put<std::uint32_t>(os, data_len);
  for (double v : wav.samples) {
    if (pcm) {
      const double c = std::clamp(v, -1.0, 32767.0 / 32768.0);
      put<std::int16_t>(os, static_cast<std::int16_t>(std::lround(c * 32768.0)));
    } else {
      put<float>(os, static_cast<float>(v));
    }
  }
  if (!os) throw FormatError("failed writing WAV file " + path.string());
}

}  // namespace mgvq
