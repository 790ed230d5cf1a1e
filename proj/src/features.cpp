#include "respiro/features.hpp"

#include <cblas.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <vector>

#include "respiro/errors.hpp"

namespace respiro::dsp {

using core::Shape;
using core::Tensor;

void FeatureConfig::validate(int sample_rate) const {
  if (sample_rate <= 0) throw ConfigError("sample rate must be positive");
  if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0) {
    throw ConfigError("n_fft must be a power of two, got " + std::to_string(n_fft));
  }
  if (win_length < 1 || win_length > n_fft) {
    throw ConfigError("win_length " + std::to_string(win_length) + " must be in [1, n_fft=" +
                      std::to_string(n_fft) + "]");
  }
  if (hop_length < 1) throw ConfigError("hop_length must be >= 1, got " + std::to_string(hop_length));
  if (n_mels < 1) throw ConfigError("n_mels must be >= 1, got " + std::to_string(n_mels));
  if (!(fmin >= 0.0) || !(fmin < fmax) || !(fmax <= sample_rate / 2.0)) {
    throw ConfigError("need 0 <= fmin < fmax <= rate/2, got fmin=" + std::to_string(fmin) +
                      " fmax=" + std::to_string(fmax) + " rate=" + std::to_string(sample_rate));
  }
  if (!(log_floor > 0.0)) throw ConfigError("log_floor must be positive");
  if (normalize && norm_std == 0.0) throw ConfigError("normalization std must be nonzero");
}

namespace {

// Iterative radix-2 FFT, decimation in time.
void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// numpy-style reflection (no edge repeat), folding for pads longer than the
// signal.
float reflect_sample(const std::vector<float>& x, std::int64_t idx) {
  const std::int64_t n = static_cast<std::int64_t>(x.size());
  if (n == 1) return x[0];
  const std::int64_t period = 2 * (n - 1);
  std::int64_t m = idx % period;
  if (m < 0) m += period;
  if (m >= n) m = period - m;
  return x[static_cast<std::size_t>(m)];
}

}  // namespace

Tensor stft_magnitude(const Waveform& w, const FeatureConfig& config) {
  config.validate(w.sample_rate);
  const std::int64_t len = static_cast<std::int64_t>(w.samples.size());
  if (len < config.win_length) {
    throw ArgumentError("stft: input length " + std::to_string(len) + " shorter than window " +
                        std::to_string(config.win_length));
  }
  const int n_fft = config.n_fft, win = config.win_length, hop = config.hop_length;
  const int bins = n_fft / 2 + 1;
  const std::int64_t frames = config.center ? 1 + len / hop : len / hop;

  // Periodic Hann.
  std::vector<double> window(static_cast<std::size_t>(win));
  for (int i = 0; i < win; ++i) {
    window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);
  }
  const int win_offset = (n_fft - win) / 2;  // window sits centered in the FFT buffer

  std::vector<float> out(static_cast<std::size_t>(frames) * bins);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(n_fft));
  for (std::int64_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    // Frame t is centered at t*hop in center mode, else starts there.
    const std::int64_t start = config.center ? t * hop - n_fft / 2 + win_offset : t * hop;
    for (int i = 0; i < win; ++i) {
      const std::int64_t idx = start + i;
      double s;
      if (config.center) {
        s = reflect_sample(w.samples, idx);
      } else {
        s = idx < len ? w.samples[static_cast<std::size_t>(idx)] : 0.0;  // tail zero-fill
      }
      buf[static_cast<std::size_t>(win_offset + i)] = s * window[static_cast<std::size_t>(i)];
    }
    fft_inplace(buf);
    for (int k = 0; k < bins; ++k) {
      const double mag = std::abs(buf[static_cast<std::size_t>(k)]);
      out[static_cast<std::size_t>(t) * bins + k] = static_cast<float>(config.power ? mag * mag : mag);
    }
  }
  return Tensor({static_cast<int>(frames), bins}, std::move(out));
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor mel_filterbank(const FeatureConfig& config, int sample_rate) {
  config.validate(sample_rate);
  const int bins = config.n_fft / 2 + 1;
  const int n_mels = config.n_mels;
  const double mel_lo = hz_to_mel(config.fmin);
  const double mel_hi = hz_to_mel(config.fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }
  // mel->hz->mel round-trips can drift the endpoints by an ULP, which would
  // leak weight onto bins exactly at fmin/fmax; pin them.
  edges.front() = config.fmin;
  edges.back() = config.fmax;

  std::vector<float> fb(static_cast<std::size_t>(n_mels) * bins, 0.0f);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double ce = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    float peak = 0.0f;
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / config.n_fft;
      double v = 0.0;
      if (f > lo && f < hi) {
        v = f <= ce ? (f - lo) / (ce - lo) : (hi - f) / (hi - ce);
      }
      fb[static_cast<std::size_t>(m) * bins + k] = static_cast<float>(v);
      peak = std::max(peak, static_cast<float>(v));
    }
    if (peak <= 0.0f) {
      throw ConfigError("mel filter " + std::to_string(m) + " covers no FFT bin; lower n_mels or raise n_fft");
    }
    for (int k = 0; k < bins; ++k) fb[static_cast<std::size_t>(m) * bins + k] /= peak;
  }
  return Tensor({n_mels, bins}, std::move(fb));
}

namespace {

Tensor mel_pipeline(const Waveform& w, const FeatureConfig& config) {
  if (w.sample_rate != 16000) {
    throw ArgumentError("feature pipelines expect 16000 Hz input, got " + std::to_string(w.sample_rate));
  }
  const Tensor spec = stft_magnitude(w, config);       // [T, bins]
  const Tensor fb = mel_filterbank(config, w.sample_rate);  // [n_mels, bins]
  const int t = spec.dim(0), bins = spec.dim(1), n_mels = fb.dim(0);
  std::vector<float> mel(static_cast<std::size_t>(t) * n_mels);
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, t, n_mels, bins, 1.0f, spec.data(), bins,
              fb.data(), bins, 0.0f, mel.data(), n_mels);
  for (auto& v : mel) {
    v = std::log(std::max(v, static_cast<float>(config.log_floor)));
    if (config.normalize) v = static_cast<float>((v - config.norm_mean) / config.norm_std);
  }
  return Tensor({t, n_mels}, std::move(mel));
}

}  // namespace

FeatureConfig vocoder_mel_config() {
  FeatureConfig c;
  c.n_fft = 1024;
  c.win_length = 1024;
  c.hop_length = 256;
  c.n_mels = 80;
  c.fmin = 20.0;
  c.fmax = 8000.0;
  c.center = false;
  return c;
}

FeatureConfig classifier_feature_config() {
  FeatureConfig c;
  c.n_fft = 1024;  // 512 leaves empty filters at 128 mels
  c.win_length = 400;
  c.hop_length = 160;
  c.n_mels = 128;
  c.fmin = 20.0;
  c.fmax = 8000.0;
  c.center = true;
  c.normalize = true;
  c.norm_mean = -4.27;
  c.norm_std = 4.57;
  return c;
}

Tensor vocoder_mel(const Waveform& w) { return mel_pipeline(w, vocoder_mel_config()); }

Tensor classifier_features(const Waveform& w) { return mel_pipeline(w, classifier_feature_config()); }

void write_pgm(const Tensor& matrix, const std::string& path) {
  if (matrix.rank() != 2) throw ArgumentError("write_pgm expects a rank-2 matrix, got " + core::shape_str(matrix.shape()));
  const int t = matrix.dim(0), f = matrix.dim(1);
  float lo = matrix[0], hi = matrix[0];
  for (std::int64_t i = 0; i < matrix.size(); ++i) {
    if (!std::isfinite(matrix[i])) throw ArgumentError("write_pgm: matrix has non-finite values");
    lo = std::min(lo, matrix[i]);
    hi = std::max(hi, matrix[i]);
  }
  const float span = hi - lo;

  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out << "P5\n" << t << " " << f << "\n255\n";
    // Row 0 of the image is the top: highest frequency first.
    for (int row = 0; row < f; ++row) {
      const int bin = f - 1 - row;
      for (int col = 0; col < t; ++col) {
        const float v = matrix[static_cast<std::int64_t>(col) * f + bin];
        const unsigned char px =
            span > 0.0f ? static_cast<unsigned char>(std::lrintf((v - lo) / span * 255.0f)) : 0;
        out.put(static_cast<char>(px));
      }
    }
    out.flush();
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::string cache_filename(const std::string& sample_id, const std::string& pipeline) {
  return sample_id + "." + pipeline + ".rsf";
}

}  // namespace respiro::dsp
