#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "respiro/adam.hpp"
#include "respiro/audio.hpp"
#include "respiro/diffusion.hpp"
#include "respiro/module.hpp"
#include "respiro/rng.hpp"
#include "respiro/tensor.hpp"

namespace respiro::vocoder {

struct VocoderConfig {
  int residual_layers = 30;
  int residual_channels = 64;
  int kernel_size = 3;
  // Dilation within a block is 2^(layer index % cycle); the stack is a whole
  // number of blocks.
  int dilation_cycle = 10;
  int hop = 256;
  int n_mels = 80;
  int step_embed_dim = 128;

  void validate() const;
  // Small configuration for tests and smoke training.
  static VocoderConfig desk();
};

// Geometric sinusoid pairs: frequencies descend from 1 to 1e-4 over dim/2
// components; [sin block | cos block].
core::Tensor step_embedding(double t_coord, int dim);

// Mel-conditioned denoiser: dilated-conv residual stack with per-layer step
// and conditioner injection, plus a transposed-conv mel upsampler.
class VocoderModel {
 public:
  VocoderModel(VocoderConfig config, Rng& rng);

  const VocoderConfig& config() const { return config_; }
  core::ParamRegistry& params() { return params_; }
  const core::ParamRegistry& params() const { return params_; }

  // [frames, n_mels] -> conditioner [n_mels, frames*hop].
  core::Tensor upsample(const core::Tensor& mel) const;

  // Step-embedding MLP output for one (possibly fractional) coordinate.
  core::Tensor step_vector(double t_coord) const;

  // One stack layer: returns {residual, skip}, both [C, L].
  std::pair<core::Tensor, core::Tensor> residual_layer(int index, const core::Tensor& x,
                                                       const core::Tensor& cond,
                                                       const core::Tensor& temb) const;

  // epsilon_hat for a waveform [L]; L must equal mel frames * hop.
  core::Tensor forward(const core::Tensor& x_t, double t_coord, const core::Tensor& mel) const;
  // Same, with the conditioner already upsampled (sampling reuses it).
  core::Tensor forward_cond(const core::Tensor& x_t, double t_coord,
                            const core::Tensor& cond) const;

  diffusion::DenoiseFn denoiser() const;

 private:
  VocoderConfig config_;
  core::ParamRegistry params_;
};

struct TrainSample {
  core::Tensor x0;   // [frames*hop]
  core::Tensor mel;  // [frames, n_mels]
};

struct VocoderTrainOptions {
  int steps = 2000;
  int batch_size = 16;
  double lr = 1e-4;
  // Stop once the trailing `window` mean drops to stop_ratio * the initial
  // `window` mean (0 disables early exit).
  double stop_ratio = 0.0;
  int window = 50;
  std::function<void(int step, double loss)> on_step;
};

struct VocoderTrainResult {
  std::vector<double> losses;  // per-step batch means
  int steps_run = 0;
};

VocoderTrainResult train_vocoder(VocoderModel& model, const diffusion::NoiseSchedule& schedule,
                                 const std::vector<TrainSample>& data,
                                 const VocoderTrainOptions& options, Rng& rng);

// Ancestral (or fast) sampling conditioned on one mel, upsampled once.
dsp::Waveform generate(const VocoderModel& model, const core::Tensor& mel,
                       const diffusion::NoiseSchedule& schedule, Rng& rng,
                       const diffusion::FastSchedule* fast = nullptr, int sample_rate = 16000);

// Checkpoints carry the model parameters plus config/* scalars and
// schedule/* tensors so generation is reproducible from the file alone.
void save_vocoder(const std::string& path, const VocoderModel& model,
                  const diffusion::NoiseSchedule& schedule);
std::pair<VocoderModel, diffusion::NoiseSchedule> load_vocoder(const std::string& path);

}  // namespace respiro::vocoder
