#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tts {

// Mono PCM audio. Samples are kept as doubles in [-1, 1] full-scale units;
// files are RIFF WAV, 16-bit signed little-endian.
struct Audio {
  int sample_rate = 0;
  std::vector<double> samples;
};

// Throws FormatError naming the expectation if the file is not mono 16-bit
// PCM, or (when expected_rate > 0) has the wrong sample rate.
Audio read_wav(const std::string& path, int expected_rate = 0);

void write_wav(const std::string& path, const Audio& audio);

int16_t sample_to_i16(double x);

}  // namespace tts
