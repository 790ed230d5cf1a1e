#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace respiro::dsp {

struct Waveform {
  std::vector<float> samples;  // mono, in [-1, 1]
  int sample_rate = 0;
  std::int64_t clipped = 0;  // samples clamped during ingestion

  double seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

// PCM WAV only: 16-bit integer or 32-bit float, any channel count
// (averaged to mono). Integer samples are scaled by 1/32768.
Waveform load_wav(const std::string& path);

// 16-bit PCM mono. Writes are staged and renamed into place.
void save_wav(const std::string& path, const Waveform& w);

// Kaiser-windowed-sinc resampling; output length = round(len * target / src).
Waveform resample(const Waveform& w, int target_hz);

// Crop from the start when too long; repeat the signal cyclically when too
// short.
Waveform fix_duration(const Waveform& w, double seconds);

}  // namespace respiro::dsp
