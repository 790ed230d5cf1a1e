#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "respiro/audio.hpp"
#include "respiro/rng.hpp"
#include "respiro/tensor.hpp"

namespace respiro::diffusion {

// Forward-process schedule. All arithmetic in 64-bit: cumulative products
// drift audibly in f32 at realistic step counts.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  explicit NoiseSchedule(std::vector<double> betas);

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const;   // t in [1, steps()]
  double alpha(int t) const;  // 1 - beta(t)
  // Cumulative signal retention; alpha_bar(0) == 1 so the t=1 posterior is
  // well-defined.
  double alpha_bar(int t) const;
  const std::vector<double>& beta_values() const { return betas_; }

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;  // size steps()+1, index 0 is 1.0
};

NoiseSchedule linear_schedule(int t_steps, double beta_start, double beta_end);

// Denoiser interface: epsilon_hat(x_t, step coordinate, mel). The coordinate
// is fractional during fast sampling.
using DenoiseFn =
    std::function<core::Tensor(const core::Tensor& x_t, double t_coord, const core::Tensor& mel)>;

// Closed-form marginal x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) noise.
core::Tensor q_sample(const core::Tensor& x0, int t, const core::Tensor& noise,
                      const NoiseSchedule& s);

// One explicit chain step x_t = sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) noise.
core::Tensor forward_step(const core::Tensor& x_prev, int t, const NoiseSchedule& s,
                          const core::Tensor& noise);

// t sequential chain steps with fresh Gaussian noise each.
core::Tensor iterate_forward(const core::Tensor& x0, int t, const NoiseSchedule& s, Rng& rng);

// Draws t ~ U[1,T] and eps ~ N(0,I), returns mean ||eps - eps_hat||^2 as a
// scalar tensor on the tape (differentiable through the model).
core::Tensor training_loss(const DenoiseFn& model, const core::Tensor& x0, const core::Tensor& mel,
                           const NoiseSchedule& s, Rng& rng, int hop = 256);

struct ReverseStep {
  core::Tensor mu;
  double sigma = 0.0;
  core::Tensor x_prev;
};

// Learned reverse transition. sigma is the untrained posterior std; it is 0
// at t=1 and the noise argument is ignored there.
ReverseStep p_sample_step(const DenoiseFn& model, const core::Tensor& x_t, int t,
                          const core::Tensor& mel, const NoiseSchedule& s,
                          const core::Tensor& noise,
                          std::optional<double> embed_coord = std::nullopt);

struct FastSchedule {
  std::vector<double> infer_betas;
  // Fractional training-step coordinates feeding the step embedding.
  std::vector<double> aligned_steps;
};

// Maps each inference step's cumulative abar onto the training abar curve by
// piecewise-linear inversion. Out-of-range abars clamp to the nearest
// endpoint with a warning on stderr.
FastSchedule build_fast_schedule(const NoiseSchedule& train, const std::vector<double>& infer_betas);

// Six-step inference ladder used when no explicit ladder is configured.
const std::vector<double>& default_fast_ladder();

// Ancestral sampling from pure noise, clamped to [-1, 1]. Uses the fast
// schedule when given, otherwise all training steps.
dsp::Waveform sample(const DenoiseFn& model, const core::Tensor& mel, const NoiseSchedule& s,
                     Rng& rng, const FastSchedule* fast = nullptr, int hop = 256,
                     int sample_rate = 16000);

}  // namespace respiro::diffusion
