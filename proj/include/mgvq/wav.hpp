#pragma once

#include <filesystem>

#include "mgvq/signal.hpp"

namespace mgvq {

enum class WavEncoding { Pcm16, Float32 };

// Reads a mono 16-bit PCM or 32-bit float WAV file. When expected_rate is
// positive, a file recorded at any other rate is rejected (no resampling).
Waveform read_wav(const std::filesystem::path& path, double expected_rate = 16000.0);

// Writes mono audio; PCM16 clips to [-1, 1].
void write_wav(const std::filesystem::path& path, const Waveform& wav,
               WavEncoding encoding = WavEncoding::Pcm16);

}  // namespace mgvq
