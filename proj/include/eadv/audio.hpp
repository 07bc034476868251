#pragma once

// Mono waveform container, PCM16 WAV I/O, and the waveform manipulations the
// attack pipeline is built from: uniform noise, silence-frame insertion,
// power-of-two scale copies, and linear-interpolation resampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "eadv/common.hpp"

namespace eadv {

struct AudioClip {
  std::vector<double> samples;  // amplitudes, nominally in [-1, 1]
  int sample_rate = 16000;
  std::optional<int> label;

  double seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

namespace detail {

inline std::uint32_t rd_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t rd_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void wr_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void wr_u16le(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace detail

// Reads a RIFF/WAVE file. Only PCM16 mono is accepted; anything else raises
// FormatError naming the offending header field.
inline AudioClip load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_wav: cannot open '" + path + "'");
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("load_wav: read failure on '" + path + "'");
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  const std::size_t n = raw.size();

  if (n < 12 || std::memcmp(p, "RIFF", 4) != 0)
    throw FormatError("load_wav: '" + path + "': chunk id is not 'RIFF'");
  if (std::memcmp(p + 8, "WAVE", 4) != 0)
    throw FormatError("load_wav: '" + path + "': format tag is not 'WAVE'");

  bool have_fmt = false;
  std::uint16_t audio_format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_size = 0;

  std::size_t off = 12;
  while (off + 8 <= n) {
    const char* id = reinterpret_cast<const char*>(p + off);
    const std::uint32_t size = detail::rd_u32le(p + off + 4);
    const std::size_t body = off + 8;
    if (body + size > n)
      throw FormatError("load_wav: '" + path + "': chunk '" + std::string(id, 4) +
                        "' overruns the file");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError("load_wav: '" + path + "': fmt chunk too small");
      audio_format = detail::rd_u16le(p + body);
      channels = detail::rd_u16le(p + body + 2);
      rate = detail::rd_u32le(p + body + 4);
      bits = detail::rd_u16le(p + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = p + body;
      data_size = size;
    }
    off = body + size + (size & 1);  // chunks are word-aligned
  }

  if (!have_fmt) throw FormatError("load_wav: '" + path + "': missing fmt chunk");
  if (data == nullptr) throw FormatError("load_wav: '" + path + "': missing data chunk");
  if (audio_format != 1)
    throw FormatError("load_wav: '" + path + "': audio_format=" + std::to_string(audio_format) +
                      " (only PCM=1 supported)");
  if (channels != 1)
    throw FormatError("load_wav: '" + path + "': channels=" + std::to_string(channels) +
                      " (only mono supported)");
  if (bits != 16)
    throw FormatError("load_wav: '" + path + "': bits_per_sample=" + std::to_string(bits) +
                      " (only 16 supported)");
  if (rate == 0) throw FormatError("load_wav: '" + path + "': sample_rate=0");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  const std::size_t count = data_size / 2;
  clip.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::int16_t v =
        static_cast<std::int16_t>(detail::rd_u16le(data + 2 * i));
    clip.samples[i] = static_cast<double>(v) / 32768.0;
  }
  return clip;
}

// Writes PCM16 mono. Samples are clamped to [-1, 1] and rounded to the
// nearest 16-bit code, so load(save(x)) differs from x by at most 1/32768.
inline void save_wav(const AudioClip& clip, const std::string& path) {
  if (clip.sample_rate <= 0) throw ArgumentError("save_wav: sample_rate must be positive");
  std::string out;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::wr_u32le(out, 36 + data_bytes);
  out += "WAVE";
  out += "fmt ";
  detail::wr_u32le(out, 16);
  detail::wr_u16le(out, 1);  // PCM
  detail::wr_u16le(out, 1);  // mono
  detail::wr_u32le(out, static_cast<std::uint32_t>(clip.sample_rate));
  detail::wr_u32le(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  detail::wr_u16le(out, 2);
  detail::wr_u16le(out, 16);
  out += "data";
  detail::wr_u32le(out, data_bytes);
  for (double s : clip.samples) {
    long long v = std::llround(std::clamp(s, -1.0, 1.0) * 32768.0);
    v = std::clamp<long long>(v, -32768, 32767);
    detail::wr_u16le(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_wav: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("save_wav: write failure on '" + path + "'");
}

// Adds i.i.d. uniform noise on (-amplitude, amplitude) per sample. The result
// is intentionally not clipped; projection back into range is the optimizer's
// job.
inline AudioClip add_uniform_noise(const AudioClip& clip, double amplitude, Rng& rng) {
  if (amplitude < 0) throw ArgumentError("add_uniform_noise: amplitude must be >= 0");
  AudioClip out = clip;
  if (amplitude == 0) return out;
  for (double& s : out.samples) s += rng.uniform(-amplitude, amplitude);
  return out;
}

// Inserts all-zero frames of frame_len samples before the given frame indices
// of the current frame grid. Positions are in [0, F] with F = len / frame_len
// (position F appends after the last full frame).
inline AudioClip insert_silence_frames(const AudioClip& clip,
                                       const std::vector<std::size_t>& positions,
                                       std::size_t frame_len = 128) {
  if (frame_len == 0) throw ArgumentError("insert_silence_frames: frame_len must be positive");
  const std::size_t frame_count = clip.samples.size() / frame_len;
  for (std::size_t pos : positions) {
    if (pos > frame_count)
      throw ArgumentError("insert_silence_frames: position " + std::to_string(pos) +
                          " out of range [0, " + std::to_string(frame_count) + "]");
  }
  AudioClip out = clip;
  std::vector<std::size_t> sorted = positions;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  for (std::size_t pos : sorted) {
    out.samples.insert(out.samples.begin() + static_cast<std::ptrdiff_t>(pos * frame_len),
                       frame_len, 0.0);
  }
  return out;
}

// Scale copy S_i: every sample multiplied by 1/2^i. Power-of-two scaling is
// exact, so scale_copy(x, i) * 2^i reproduces x bit for bit.
inline AudioClip scale_copy(const AudioClip& clip, int i) {
  if (i < 0) throw ArgumentError("scale_copy: scale index must be >= 0");
  AudioClip out = clip;
  const double factor = std::ldexp(1.0, -i);
  for (double& s : out.samples) s *= factor;
  return out;
}

// Windowed-sinc resampling with an explicit output length (the down-then-up
// defense restores the original grid exactly by passing it). The kernel is
// normalized per output sample, so constants are preserved exactly and
// integer phases reduce to the identity; the cutoff tracks the lower of the
// two Nyquist rates, which is what actually removes aliases and images.
inline AudioClip resample_to_length(const AudioClip& clip, int new_rate, std::size_t out_len) {
  if (new_rate <= 0) throw ArgumentError("resample: new_rate must be positive");
  AudioClip out;
  out.sample_rate = new_rate;
  out.label = clip.label;
  const std::size_t n = clip.samples.size();
  if (n == 0 || out_len == 0) return out;
  out.samples.resize(out_len);

  const double step = static_cast<double>(clip.sample_rate) / new_rate;
  const double cutoff = 0.5 * std::min(1.0, 1.0 / step);  // cycles per input sample
  constexpr int kHalfTaps = 8;
  const double span = step > 1.0 ? kHalfTaps * step : kHalfTaps;

  auto kernel = [&](double u) {
    if (std::abs(u) >= span) return 0.0;
    const double x = 2.0 * cutoff * u;
    const double s = x == 0.0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
    const double w = 0.5 + 0.5 * std::cos(M_PI * u / span);  // Hann taper
    return 2.0 * cutoff * s * w;
  };

  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * step;
    const long long lo = static_cast<long long>(std::ceil(pos - span));
    const long long hi = static_cast<long long>(std::floor(pos + span));
    const std::size_t center = static_cast<std::size_t>(
        std::clamp<long long>(std::llround(pos), 0, static_cast<long long>(n) - 1));
    const double anchor = clip.samples[center];
    // Accumulating deviations from the anchor keeps constants exact and the
    // integer-phase case an identity.
    double acc = 0.0, weight = 0.0;
    for (long long j = lo; j <= hi; ++j) {
      const double k = kernel(static_cast<double>(j) - pos);
      if (k == 0.0) continue;
      const long long idx = std::clamp<long long>(j, 0, static_cast<long long>(n) - 1);
      acc += k * (clip.samples[static_cast<std::size_t>(idx)] - anchor);
      weight += k;
    }
    out.samples[i] = weight != 0.0 ? anchor + acc / weight : anchor;
  }
  return out;
}

inline AudioClip resample(const AudioClip& clip, int new_rate) {
  if (new_rate <= 0) throw ArgumentError("resample: new_rate must be positive");
  const std::size_t out_len = static_cast<std::size_t>(std::llround(
      static_cast<double>(clip.samples.size()) * new_rate / clip.sample_rate));
  return resample_to_length(clip, new_rate, out_len);
}

}  // namespace eadv
