#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "hqsvc/common.hpp"

namespace hqsvc {

// Mono sample sequence. Samples are nominally in [-1, 1] and must be finite.
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = 0;

  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate
                           : 0.0;
  }
};

enum class WavEncoding { kPcm16, kFloat32 };

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (p[1] << 8) | (p[2] << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 24) & 0xff);
}

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
}

}  // namespace detail

// RIFF/WAVE reader for 16-bit PCM and 32-bit float. Stereo is downmixed by
// channel average; samples end up in [-1, 1].
inline AudioBuffer read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "read_wav: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  check(bytes.size() >= 44, "read_wav: file too small: " + path);
  check(std::memcmp(bytes.data(), "RIFF", 4) == 0 &&
            std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
        "read_wav: not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_off = 0, data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    std::uint32_t chunk_len = detail::read_u32(hdr + 4);
    if (std::memcmp(hdr, "fmt ", 4) == 0 && chunk_len >= 16) {
      format = detail::read_u16(hdr + 8);
      channels = detail::read_u16(hdr + 10);
      rate = detail::read_u32(hdr + 12);
      bits = detail::read_u16(hdr + 22);
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data_off = pos + 8;
      data_len = std::min<std::size_t>(chunk_len, bytes.size() - data_off);
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  check(rate > 0 && channels > 0, "read_wav: missing fmt chunk: " + path);
  check(data_off > 0, "read_wav: missing data chunk: " + path);

  const bool pcm16 = (format == 1 && bits == 16);
  const bool f32 = (format == 3 && bits == 32);
  check(pcm16 || f32,
        "read_wav: unsupported encoding (want PCM16 or float32): " + path);

  const std::size_t bytes_per = bits / 8;
  const std::size_t n_frames = data_len / (bytes_per * channels);
  check(n_frames > 0, "read_wav: zero-length audio: " + path);

  AudioBuffer out;
  out.sample_rate = static_cast<int>(rate);
  out.samples.resize(n_frames);
  const unsigned char* d = bytes.data() + data_off;
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::uint16_t c = 0; c < channels; ++c) {
      const unsigned char* s = d + (i * channels + c) * bytes_per;
      if (pcm16) {
        std::int16_t v =
            static_cast<std::int16_t>(s[0] | (static_cast<int>(s[1]) << 8));
        acc += static_cast<double>(v) / 32768.0;
      } else {
        float v;
        std::memcpy(&v, s, 4);
        acc += v;
      }
    }
    out.samples[i] = static_cast<float>(acc / channels);
  }
  check(all_finite(out.samples), "read_wav: non-finite samples: " + path);
  return out;
}

inline void write_wav(const AudioBuffer& buf, const std::string& path,
                      WavEncoding enc = WavEncoding::kFloat32) {
  check(buf.sample_rate > 0, "write_wav: sample_rate must be positive");
  check(!buf.samples.empty(), "write_wav: empty buffer");
  check(all_finite(buf.samples), "write_wav: non-finite samples");

  const bool f32 = (enc == WavEncoding::kFloat32);
  const std::uint16_t bits = f32 ? 32 : 16;
  const std::uint32_t data_len =
      static_cast<std::uint32_t>(buf.samples.size() * (bits / 8));

  std::vector<unsigned char> out;
  out.reserve(44 + data_len);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32(out, 16);
  detail::put_u16(out, f32 ? 3 : 1);
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<std::uint32_t>(buf.sample_rate));
  detail::put_u32(out,
                  static_cast<std::uint32_t>(buf.sample_rate) * (bits / 8));
  detail::put_u16(out, bits / 8);
  detail::put_u16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_u32(out, data_len);
  for (float x : buf.samples) {
    if (f32) {
      unsigned char b[4];
      std::memcpy(b, &x, 4);
      out.insert(out.end(), b, b + 4);
    } else {
      float clamped = std::clamp(x, -1.0f, 1.0f);
      int v = std::clamp<int>(
          static_cast<int>(std::lrint(clamped * 32768.0)), -32768, 32767);
      detail::put_u16(out, static_cast<std::uint16_t>(
                               static_cast<std::int16_t>(v)));
    }
  }
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "write_wav: cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  check(f.good(), "write_wav: write failed: " + path);
}

// Band-limited resampling with a Hann-windowed sinc kernel. The kernel is
// stretched when downsampling so the cutoff tracks the lower Nyquist.
inline AudioBuffer resample(const AudioBuffer& buf, int target_rate) {
  check(buf.sample_rate > 0, "resample: invalid source rate");
  check(target_rate > 0, "resample: target_rate must be positive");
  if (target_rate == buf.sample_rate) return buf;

  const std::size_t n_in = buf.samples.size();
  const std::size_t n_out = static_cast<std::size_t>(std::llround(
      static_cast<double>(n_in) * target_rate / buf.sample_rate));
  check(n_out > 0, "resample: target rate yields empty output");

  const double ratio =
      static_cast<double>(buf.sample_rate) / target_rate;  // in per out
  const double stretch = std::max(1.0, ratio);
  const int half_zeros = 16;
  const int half_width = static_cast<int>(std::ceil(half_zeros * stretch));

  AudioBuffer out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double center = i * ratio;
    const int k0 = static_cast<int>(std::floor(center)) - half_width + 1;
    const int k1 = static_cast<int>(std::floor(center)) + half_width;
    double acc = 0.0, wsum = 0.0;
    for (int k = k0; k <= k1; ++k) {
      const double t = (center - k) / stretch;
      double w;
      if (std::abs(t) < 1e-12) {
        w = 1.0;
      } else {
        const double pt = kPi * t;
        w = std::sin(pt) / pt;
      }
      // Hann window over [-half_zeros, half_zeros]
      const double u = t / half_zeros;
      if (std::abs(u) >= 1.0) continue;
      w *= 0.5 * (1.0 + std::cos(kPi * u));
      wsum += w;
      if (k >= 0 && k < static_cast<int>(n_in)) acc += w * buf.samples[k];
    }
    out.samples[i] = wsum > 0.0 ? static_cast<float>(acc / wsum) : 0.0f;
  }
  return out;
}

}  // namespace hqsvc
