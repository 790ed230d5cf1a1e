#pragma once

#include <string>

#include "respiro/audio.hpp"
#include "respiro/tensor.hpp"

namespace respiro::dsp {

struct FeatureConfig {
  int n_fft = 1024;
  int win_length = 1024;
  int hop_length = 256;
  int n_mels = 80;
  double fmin = 20.0;
  double fmax = 8000.0;
  double log_floor = 1e-5;
  // center: reflect-pad n_fft/2 on both ends, frames = 1 + floor(len/hop).
  // Otherwise frames = floor(len/hop) with the tail window zero-filled.
  bool center = false;
  bool power = false;  // magnitude unless set
  bool normalize = false;
  double norm_mean = 0.0;
  double norm_std = 1.0;

  void validate(int sample_rate) const;
};

// Rows are frames, columns FFT bins [0, n_fft/2].
core::Tensor stft_magnitude(const Waveform& w, const FeatureConfig& config);

// [n_mels, n_fft/2+1]; triangular filters on the HTK mel scale,
// peak-normalized to 1.
core::Tensor mel_filterbank(const FeatureConfig& config, int sample_rate);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// The two feature pipelines. Both require 16 kHz input.
// Vocoder conditioning: 1024/1024/256, 80 mels, non-center, ln(max(x, 1e-5)).
core::Tensor vocoder_mel(const Waveform& w);
// Classifier input: n_fft 1024 over 400-sample windows, hop 160, 128 mels,
// center mode, ln(max(x, 1e-5)) then (x + 4.27) / 4.57.
core::Tensor classifier_features(const Waveform& w);

FeatureConfig vocoder_mel_config();
FeatureConfig classifier_feature_config();

// 8-bit binary PGM, min-max scaled, frequency axis upward. The matrix is
// frames x bins, so the image is bins high by frames wide.
void write_pgm(const core::Tensor& matrix, const std::string& path);

// Feature cache naming: "<sample_id>.<pipeline>.rsf".
std::string cache_filename(const std::string& sample_id, const std::string& pipeline);

}  // namespace respiro::dsp
