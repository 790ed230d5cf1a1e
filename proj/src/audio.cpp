#include "respiro/audio.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "respiro/errors.hpp"

namespace respiro::dsp {

namespace {

struct ByteReader {
  std::vector<char> bytes;
  std::string path;

  std::size_t size() const { return bytes.size(); }

  void need(std::size_t offset, std::size_t n) const {
    if (offset + n > bytes.size()) {
      throw FormatError(path + ": truncated at byte offset " + std::to_string(offset));
    }
  }
  std::uint16_t u16(std::size_t offset) const {
    need(offset, 2);
    std::uint16_t v;
    std::memcpy(&v, bytes.data() + offset, 2);
    return v;
  }
  std::uint32_t u32(std::size_t offset) const {
    need(offset, 4);
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + offset, 4);
    return v;
  }
  bool tag_is(std::size_t offset, const char* tag) const {
    need(offset, 4);
    return std::memcmp(bytes.data() + offset, tag, 4) == 0;
  }
};

}  // namespace

Waveform load_wav(const std::string& path) {
  ByteReader r;
  r.path = path;
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    r.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  if (!r.tag_is(0, "RIFF")) throw FormatError(path + ": not a RIFF file (byte offset 0)");
  if (!r.tag_is(8, "WAVE")) throw FormatError(path + ": not a WAVE form (byte offset 8)");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  std::size_t offset = 12;
  while (offset + 8 <= r.size()) {
    const std::uint32_t chunk_size = r.u32(offset + 4);
    if (r.tag_is(offset, "fmt ")) {
      if (chunk_size < 16) throw FormatError(path + ": fmt chunk too small at byte offset " + std::to_string(offset));
      r.need(offset + 8, chunk_size);
      format = r.u16(offset + 8);
      channels = r.u16(offset + 10);
      rate = r.u32(offset + 12);
      block_align = r.u16(offset + 20);
      bits = r.u16(offset + 22);
      have_fmt = true;
    } else if (r.tag_is(offset, "data")) {
      if (!have_fmt) throw FormatError(path + ": data chunk before fmt at byte offset " + std::to_string(offset));
      if (channels == 0 || rate == 0) throw FormatError(path + ": fmt declares zero channels or rate");
      const bool pcm16 = format == 1 && bits == 16;
      const bool float32 = format == 3 && bits == 32;
      if (!pcm16 && !float32) {
        throw UnsupportedError(path + ": only 16-bit PCM and 32-bit float WAV are supported (format " +
                               std::to_string(format) + ", " + std::to_string(bits) + " bits)");
      }
      const std::size_t bytes_per_sample = bits / 8;
      if (block_align != bytes_per_sample * channels) {
        throw FormatError(path + ": block align " + std::to_string(block_align) + " does not match format");
      }
      r.need(offset + 8, chunk_size);
      const std::size_t frames = chunk_size / block_align;
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(frames);
      const char* base = r.bytes.data() + offset + 8;
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c) {
          const char* p = base + (i * channels + c) * bytes_per_sample;
          if (pcm16) {
            std::int16_t v;
            std::memcpy(&v, p, 2);
            acc += v / 32768.0;
          } else {
            float v;
            std::memcpy(&v, p, 4);
            acc += v;
          }
        }
        float s = static_cast<float>(acc / channels);
        if (s > 1.0f) {
          s = 1.0f;
          ++w.clipped;
        } else if (s < -1.0f) {
          s = -1.0f;
          ++w.clipped;
        }
        w.samples[i] = s;
      }
      return w;
    }
    // Chunks are word-aligned; odd sizes carry a pad byte.
    offset += 8 + chunk_size + (chunk_size & 1);
  }
  throw FormatError(path + ": no data chunk found (scanned to byte offset " + std::to_string(offset) + ")");
}

void save_wav(const std::string& path, const Waveform& w) {
  if (w.sample_rate <= 0) throw ArgumentError("save_wav: sample rate must be positive");
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    const std::uint32_t data_size = static_cast<std::uint32_t>(w.samples.size() * 2);
    const std::uint32_t riff_size = 36 + data_size;
    auto u16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
    auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    out.write("RIFF", 4);
    u32(riff_size);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    u32(16);
    u16(1);  // PCM
    u16(1);  // mono
    u32(static_cast<std::uint32_t>(w.sample_rate));
    u32(static_cast<std::uint32_t>(w.sample_rate * 2));
    u16(2);
    u16(16);
    out.write("data", 4);
    u32(data_size);
    for (float s : w.samples) {
      // Same 1/32768 scale the loader uses, saturated at the int16 rails.
      const long q = std::lrintf(std::clamp(s, -1.0f, 1.0f) * 32768.0f);
      const std::int16_t v = static_cast<std::int16_t>(std::clamp<long>(q, -32768, 32767));
      out.write(reinterpret_cast<const char*>(&v), 2);
    }
    out.flush();
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

namespace {

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

double kaiser(double u, double beta, double i0_beta) {
  const double t = 1.0 - u * u;
  if (t < 0.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(t)) / i0_beta;
}

}  // namespace

Waveform resample(const Waveform& w, int target_hz) {
  if (target_hz <= 0) throw ArgumentError("resample: target rate must be positive, got " + std::to_string(target_hz));
  if (w.sample_rate <= 0) throw ArgumentError("resample: source rate must be positive");
  if (target_hz == w.sample_rate || w.samples.empty()) {
    Waveform out = w;
    out.sample_rate = target_hz;
    return out;
  }

  const double ratio = static_cast<double>(target_hz) / w.sample_rate;
  const std::int64_t out_len = std::llround(static_cast<double>(w.samples.size()) * ratio);
  // Low-pass at the narrower Nyquist; 16 zero crossings, Kaiser beta 8.555.
  const double cutoff = std::min(1.0, ratio);
  const double half_width = 16.0 / cutoff;
  const double beta = 8.555;
  const double i0_beta = std::cyl_bessel_i(0.0, beta);

  Waveform out;
  out.sample_rate = target_hz;
  out.samples.resize(static_cast<std::size_t>(std::max<std::int64_t>(out_len, 0)));
  const std::int64_t n = static_cast<std::int64_t>(w.samples.size());
  for (std::int64_t i = 0; i < out_len; ++i) {
    const double t = i / ratio;
    const std::int64_t k0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(t - half_width)));
    const std::int64_t k1 = std::min<std::int64_t>(n - 1, static_cast<std::int64_t>(std::floor(t + half_width)));
    double acc = 0.0, norm = 0.0;
    for (std::int64_t k = k0; k <= k1; ++k) {
      const double x = t - k;
      const double h = cutoff * sinc(cutoff * x) * kaiser(x / half_width, beta, i0_beta);
      acc += h * w.samples[static_cast<std::size_t>(k)];
      norm += h;
    }
    // Unit DC gain regardless of tap truncation at the edges.
    out.samples[static_cast<std::size_t>(i)] = norm != 0.0 ? static_cast<float>(acc / norm) : 0.0f;
  }
  return out;
}

Waveform fix_duration(const Waveform& w, double seconds) {
  if (seconds <= 0.0) throw ArgumentError("fix_duration: target must be positive, got " + std::to_string(seconds));
  if (w.samples.empty()) throw ArgumentError("fix_duration: empty waveform");
  if (w.sample_rate <= 0) throw ArgumentError("fix_duration: sample rate must be positive");
  const std::size_t target = static_cast<std::size_t>(std::llround(seconds * w.sample_rate));
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.clipped = w.clipped;
  out.samples.resize(target);
  for (std::size_t i = 0; i < target; ++i) out.samples[i] = w.samples[i % w.samples.size()];
  return out;
}

}  // namespace respiro::dsp
