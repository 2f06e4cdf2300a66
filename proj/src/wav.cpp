#include "tts/wav.hpp"

#include <cmath>
#include <cstring>

#include "tts/error.hpp"
#include "tts/util.hpp"

namespace tts {

namespace {

uint32_t read_u32(const uint8_t* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) |
         (uint32_t(p[3]) << 24);
}

uint16_t read_u16(const uint8_t* p) { return uint16_t(p[0]) | (uint16_t(p[1]) << 8); }

void put_u32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(uint8_t(x)); v.push_back(uint8_t(x >> 8));
  v.push_back(uint8_t(x >> 16)); v.push_back(uint8_t(x >> 24));
}

void put_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(uint8_t(x)); v.push_back(uint8_t(x >> 8));
}

}  // namespace

int16_t sample_to_i16(double x) {
  double scaled = x * 32768.0;
  if (scaled > 32767.0) scaled = 32767.0;
  if (scaled < -32768.0) scaled = -32768.0;
  return static_cast<int16_t>(std::lrint(scaled));
}

Audio read_wav(const std::string& path, int expected_rate) {
  std::vector<uint8_t> buf = read_binary_file(path);
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw Error(ErrorCode::kFormat, path + ": expected RIFF/WAVE file");
  }
  size_t pos = 12;
  int channels = 0, rate = 0, bits = 0;
  uint16_t fmt_tag = 0;
  const uint8_t* data = nullptr;
  size_t data_len = 0;
  while (pos + 8 <= buf.size()) {
    const uint8_t* hdr = buf.data() + pos;
    uint32_t chunk_len = read_u32(hdr + 4);
    const uint8_t* body = hdr + 8;
    if (pos + 8 + chunk_len > buf.size()) {
      throw Error(ErrorCode::kFormat, path + ": truncated chunk");
    }
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw Error(ErrorCode::kFormat, path + ": short fmt chunk");
      fmt_tag = read_u16(body);
      channels = read_u16(body + 2);
      rate = int(read_u32(body + 4));
      bits = read_u16(body + 14);
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }
  if (!data || channels == 0) {
    throw Error(ErrorCode::kFormat, path + ": missing fmt or data chunk");
  }
  if (fmt_tag != 1 || bits != 16 || channels != 1 ||
      (expected_rate > 0 && rate != expected_rate)) {
    std::string expect = expected_rate > 0
        ? std::to_string(expected_rate) + " Hz mono 16-bit PCM"
        : "mono 16-bit PCM";
    throw Error(ErrorCode::kFormat,
                path + ": expected " + expect + ", got " + std::to_string(rate) +
                    " Hz " + std::to_string(channels) + "-channel " +
                    std::to_string(bits) + "-bit (format tag " +
                    std::to_string(fmt_tag) + ")");
  }
  Audio audio;
  audio.sample_rate = rate;
  size_t n = data_len / 2;
  audio.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    int16_t s = int16_t(uint16_t(data[2 * i]) | (uint16_t(data[2 * i + 1]) << 8));
    audio.samples[i] = s / 32768.0;
  }
  return audio;
}

void write_wav(const std::string& path, const Audio& audio) {
  const uint32_t n = uint32_t(audio.samples.size());
  std::vector<uint8_t> out;
  out.reserve(44 + 2 * n);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + 2 * n);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, uint32_t(audio.sample_rate));
  put_u32(out, uint32_t(audio.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, 2 * n);
  for (double x : audio.samples) {
    int16_t s = sample_to_i16(x);
    out.push_back(uint8_t(uint16_t(s)));
    out.push_back(uint8_t(uint16_t(s) >> 8));
  }
  write_binary_file(path, out.data(), out.size());
}

}  // namespace tts
