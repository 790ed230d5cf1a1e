#include "respiro/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <string>

#include "respiro/errors.hpp"
#include "respiro/ops.hpp"

namespace respiro::diffusion {

using core::Tensor;
namespace ops = respiro::core;

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw ConfigError("noise schedule needs at least one step");
  alpha_bars_.resize(betas_.size() + 1);
  alpha_bars_[0] = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    if (!(betas_[i] > 0.0) || !(betas_[i] < 1.0)) {
      throw ConfigError("beta[" + std::to_string(i + 1) + "] = " + std::to_string(betas_[i]) +
                        " outside (0, 1)");
    }
    alpha_bars_[i + 1] = alpha_bars_[i] * (1.0 - betas_[i]);
  }
}

namespace {

void check_step(int t, int lo, int hi, const char* what) {
  if (t < lo || t > hi) {
    throw ArgumentError(std::string(what) + ": step " + std::to_string(t) + " outside [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

}  // namespace

double NoiseSchedule::beta(int t) const {
  check_step(t, 1, steps(), "beta");
  return betas_[static_cast<std::size_t>(t) - 1];
}

double NoiseSchedule::alpha(int t) const { return 1.0 - beta(t); }

double NoiseSchedule::alpha_bar(int t) const {
  check_step(t, 0, steps(), "alpha_bar");
  return alpha_bars_[static_cast<std::size_t>(t)];
}

NoiseSchedule linear_schedule(int t_steps, double beta_start, double beta_end) {
  if (t_steps < 1) throw ConfigError("schedule length must be >= 1, got " + std::to_string(t_steps));
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ConfigError("need 0 < beta_start <= beta_end < 1, got [" + std::to_string(beta_start) +
                      ", " + std::to_string(beta_end) + "]");
  }
  std::vector<double> betas(static_cast<std::size_t>(t_steps));
  if (t_steps == 1) {
    betas[0] = beta_start;
  } else {
    for (int t = 0; t < t_steps; ++t) {
      betas[static_cast<std::size_t>(t)] =
          beta_start + (beta_end - beta_start) * t / (t_steps - 1);
    }
  }
  return NoiseSchedule(std::move(betas));
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& noise, const NoiseSchedule& s) {
  check_step(t, 1, s.steps(), "q_sample");
  const double abar = s.alpha_bar(t);
  return ops::add(ops::scale(x0, static_cast<float>(std::sqrt(abar))),
                  ops::scale(noise, static_cast<float>(std::sqrt(1.0 - abar))));
}

Tensor forward_step(const Tensor& x_prev, int t, const NoiseSchedule& s, const Tensor& noise) {
  check_step(t, 1, s.steps(), "forward_step");
  const double b = s.beta(t);
  return ops::add(ops::scale(x_prev, static_cast<float>(std::sqrt(1.0 - b))),
                  ops::scale(noise, static_cast<float>(std::sqrt(b))));
}

Tensor iterate_forward(const Tensor& x0, int t, const NoiseSchedule& s, Rng& rng) {
  check_step(t, 1, s.steps(), "iterate_forward");
  Tensor x = x0;
  for (int k = 1; k <= t; ++k) x = forward_step(x, k, s, Tensor::randn(x0.shape(), rng));
  return x;
}

Tensor training_loss(const DenoiseFn& model, const Tensor& x0, const Tensor& mel,
                     const NoiseSchedule& s, Rng& rng, int hop) {
  if (mel.rank() != 2) {
    throw ArgumentError("training_loss: mel must be rank-2 [frames, mels], got " +
                        core::shape_str(mel.shape()));
  }
  const std::int64_t want = static_cast<std::int64_t>(mel.dim(0)) * hop;
  if (x0.size() != want) {
    throw ArgumentError("training_loss: waveform length " + std::to_string(x0.size()) +
                        " != frames*hop = " + std::to_string(want));
  }
  const int t = static_cast<int>(rng.uniform_int(1, s.steps()));
  const Tensor noise = Tensor::randn(x0.shape(), rng);
  const Tensor x_t = q_sample(x0, t, noise, s);
  const Tensor eps_hat = model(x_t, static_cast<double>(t), mel);
  return ops::mse_loss(eps_hat, noise);
}

ReverseStep p_sample_step(const DenoiseFn& model, const Tensor& x_t, int t, const Tensor& mel,
                          const NoiseSchedule& s, const Tensor& noise,
                          std::optional<double> embed_coord) {
  check_step(t, 1, s.steps(), "p_sample_step");
  const double beta = s.beta(t);
  const double abar = s.alpha_bar(t);
  const Tensor eps_hat = model(x_t, embed_coord.value_or(static_cast<double>(t)), mel);

  ReverseStep step;
  const double eps_coeff = beta / std::sqrt(1.0 - abar);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
  step.mu = ops::scale(ops::sub(x_t, ops::scale(eps_hat, static_cast<float>(eps_coeff))),
                       static_cast<float>(inv_sqrt_alpha));
  if (t == 1) {
    step.sigma = 0.0;  // final step is deterministic
    step.x_prev = step.mu;
  } else {
    const double beta_tilde = beta * (1.0 - s.alpha_bar(t - 1)) / (1.0 - abar);
    step.sigma = std::sqrt(beta_tilde);
    step.x_prev = ops::add(step.mu, ops::scale(noise, static_cast<float>(step.sigma)));
  }
  return step;
}

FastSchedule build_fast_schedule(const NoiseSchedule& train, const std::vector<double>& infer_betas) {
  if (infer_betas.empty()) throw ConfigError("fast schedule needs at least one step");
  if (static_cast<int>(infer_betas.size()) > train.steps()) {
    throw ConfigError("fast schedule has more steps than training (" +
                      std::to_string(infer_betas.size()) + " > " + std::to_string(train.steps()) + ")");
  }
  for (std::size_t i = 0; i < infer_betas.size(); ++i) {
    if (!(infer_betas[i] > 0.0) || !(infer_betas[i] < 1.0)) {
      throw ConfigError("inference beta[" + std::to_string(i + 1) + "] outside (0, 1)");
    }
    if (i > 0 && !(infer_betas[i] > infer_betas[i - 1])) {
      throw ConfigError("inference betas must be strictly increasing");
    }
  }

  FastSchedule fast;
  fast.infer_betas = infer_betas;
  fast.aligned_steps.resize(infer_betas.size());
  const int t_max = train.steps();
  double abar = 1.0;
  for (std::size_t i = 0; i < infer_betas.size(); ++i) {
    abar *= 1.0 - infer_betas[i];
    double coord;
    if (abar >= train.alpha_bar(0)) {
      coord = 0.0;
      std::cerr << "warning: inference step " << i + 1 << " abar " << abar
                << " above the training curve; clamped to 0\n";
    } else if (abar <= train.alpha_bar(t_max)) {
      coord = static_cast<double>(t_max);
      if (abar < train.alpha_bar(t_max)) {
        std::cerr << "warning: inference step " << i + 1 << " abar " << abar
                  << " below the training curve end " << train.alpha_bar(t_max)
                  << "; clamped to " << t_max << "\n";
      }
    } else {
      coord = static_cast<double>(t_max);
      for (int t = 0; t < t_max; ++t) {
        const double hi = train.alpha_bar(t), lo = train.alpha_bar(t + 1);
        if (hi >= abar && abar >= lo) {
          coord = t + (hi - abar) / (hi - lo);
          break;
        }
      }
    }
    fast.aligned_steps[i] = coord;
  }
  return fast;
}

const std::vector<double>& default_fast_ladder() {
  static const std::vector<double> ladder = {1e-4, 1e-3, 1e-2, 5e-2, 2e-1, 5e-1};
  return ladder;
}

dsp::Waveform sample(const DenoiseFn& model, const Tensor& mel, const NoiseSchedule& s, Rng& rng,
                     const FastSchedule* fast, int hop, int sample_rate) {
  if (mel.rank() != 2 || mel.dim(0) < 1) {
    throw ArgumentError("sample: mel must be rank-2 with at least one frame, got " +
                        core::shape_str(mel.shape()));
  }
  core::NoGradGuard no_grad;
  const int length = mel.dim(0) * hop;
  Tensor x = Tensor::randn({length}, rng);

  if (fast != nullptr) {
    const NoiseSchedule infer(fast->infer_betas);
    for (int t = infer.steps(); t >= 1; --t) {
      const Tensor noise = t > 1 ? Tensor::randn({length}, rng) : Tensor();
      x = p_sample_step(model, x, t, mel, infer, noise,
                        fast->aligned_steps[static_cast<std::size_t>(t) - 1])
              .x_prev;
    }
  } else {
    for (int t = s.steps(); t >= 1; --t) {
      const Tensor noise = t > 1 ? Tensor::randn({length}, rng) : Tensor();
      x = p_sample_step(model, x, t, mel, s, noise).x_prev;
    }
  }

  dsp::Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i) w.samples[static_cast<std::size_t>(i)] = std::clamp(x[i], -1.0f, 1.0f);
  return w;
}

}  // namespace respiro::diffusion
