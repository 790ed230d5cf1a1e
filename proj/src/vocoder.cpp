#include "respiro/vocoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "respiro/errors.hpp"
#include "respiro/ops.hpp"
#include "respiro/serialize.hpp"

namespace respiro::vocoder {

using core::Shape;
using core::Tensor;
namespace ops = respiro::core;

void VocoderConfig::validate() const {
  if (residual_layers < 1) throw ConfigError("residual_layers must be >= 1");
  if (residual_channels < 1) throw ConfigError("residual_channels must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ConfigError("kernel_size must be odd, got " + std::to_string(kernel_size));
  }
  if (dilation_cycle < 1 || residual_layers % dilation_cycle != 0) {
    throw ConfigError("residual_layers " + std::to_string(residual_layers) +
                      " must be a whole number of dilation blocks of " +
                      std::to_string(dilation_cycle));
  }
  if (hop != 256) {
    throw ConfigError("hop must be 256 (two stride-16 upsampler stages), got " +
                      std::to_string(hop));
  }
  if (n_mels < 1) throw ConfigError("n_mels must be >= 1");
  if (step_embed_dim < 4 || step_embed_dim % 2 != 0) {
    throw ConfigError("step_embed_dim must be even and >= 4, got " +
                      std::to_string(step_embed_dim));
  }
}

VocoderConfig VocoderConfig::desk() {
  VocoderConfig c;
  c.residual_layers = 8;
  c.residual_channels = 16;
  c.dilation_cycle = 4;
  return c;
}

Tensor step_embedding(double t_coord, int dim) {
  if (t_coord < 0.0) throw ArgumentError("step coordinate must be >= 0, got " + std::to_string(t_coord));
  if (dim < 4 || dim % 2 != 0) {
    throw ArgumentError("embedding dim must be even and >= 4, got " + std::to_string(dim));
  }
  const int half = dim / 2;
  std::vector<float> e(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double omega = std::pow(10.0, -4.0 * i / (half - 1));
    e[static_cast<std::size_t>(i)] = static_cast<float>(std::sin(t_coord * omega));
    e[static_cast<std::size_t>(half + i)] = static_cast<float>(std::cos(t_coord * omega));
  }
  return Tensor({dim}, std::move(e));
}

namespace {

std::string layer_name(int i, const char* leaf) {
  return "layer" + std::to_string(i) + "/" + leaf;
}

// Registry lookup for const forward paths; parameters are registered in the
// constructor, so a miss is a programming error.
const Tensor& param(const core::ParamRegistry& registry, const std::string& name) {
  Tensor* t = const_cast<core::ParamRegistry&>(registry).find(name);
  if (t == nullptr) throw IntegrityError("missing parameter " + name);
  return *t;
}

}  // namespace

VocoderModel::VocoderModel(VocoderConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const int c = config_.residual_channels;
  const int k = config_.kernel_size;
  const int m = config_.n_mels;
  const int e = config_.step_embed_dim;
  const int h = 4 * e;  // step MLP width

  params_.add_uniform("input/w", {c, 1, 1}, 1, rng);
  params_.add_uniform("input/b", {c}, 1, rng);

  params_.add_uniform("step/fc1/w", {h, e}, e, rng);
  params_.add_uniform("step/fc1/b", {h}, e, rng);
  params_.add_uniform("step/fc2/w", {h, h}, h, rng);
  params_.add_uniform("step/fc2/b", {h}, h, rng);

  for (int l = 0; l < config_.residual_layers; ++l) {
    params_.add_uniform(layer_name(l, "step/w"), {c, h}, h, rng);
    params_.add_uniform(layer_name(l, "step/b"), {c}, h, rng);
    params_.add_uniform(layer_name(l, "dilated/w"), {2 * c, c, k}, c * k, rng);
    params_.add_uniform(layer_name(l, "dilated/b"), {2 * c}, c * k, rng);
    params_.add_uniform(layer_name(l, "cond/w"), {2 * c, m, 1}, m, rng);
    params_.add_uniform(layer_name(l, "cond/b"), {2 * c}, m, rng);
    params_.add_uniform(layer_name(l, "res/w"), {c, c, 1}, c, rng);
    params_.add_uniform(layer_name(l, "res/b"), {c}, c, rng);
    params_.add_uniform(layer_name(l, "skip/w"), {c, c, 1}, c, rng);
    params_.add_uniform(layer_name(l, "skip/b"), {c}, c, rng);
  }

  params_.add_uniform("head/mid/w", {c, c, 1}, c, rng);
  params_.add_uniform("head/mid/b", {c}, c, rng);
  // Zero final projection: a fresh model predicts epsilon = 0.
  params_.add_zeros("head/out/w", {1, c, 1});
  params_.add_zeros("head/out/b", {1});

  params_.add_uniform("up/conv1/w", {1, 1, 3, 32}, 3 * 32, rng);
  params_.add_uniform("up/conv2/w", {1, 1, 3, 32}, 3 * 32, rng);
}

Tensor VocoderModel::upsample(const Tensor& mel) const {
  if (mel.rank() != 2 || mel.dim(1) != config_.n_mels) {
    throw ShapeError("upsample expects [frames, " + std::to_string(config_.n_mels) + "], got " +
                     core::shape_str(mel.shape()));
  }
  const int frames = mel.dim(0);
  const int m = config_.n_mels;
  Tensor x = ops::reshape(ops::transpose(mel), {1, m, frames});
  x = ops::conv_transpose2d(x, param(params_, "up/conv1/w"), {1, 16});
  x = ops::leaky_relu(x, 0.4f);
  x = ops::conv_transpose2d(x, param(params_, "up/conv2/w"), {1, 16});
  x = ops::crop_hw(x, m, frames * config_.hop);
  return ops::reshape(x, {m, frames * config_.hop});
}

Tensor VocoderModel::step_vector(double t_coord) const {
  Tensor v = step_embedding(t_coord, config_.step_embed_dim);
  v = ops::swish(ops::linear(v, param(params_, "step/fc1/w"), param(params_, "step/fc1/b")));
  v = ops::swish(ops::linear(v, param(params_, "step/fc2/w"), param(params_, "step/fc2/b")));
  return v;
}

std::pair<Tensor, Tensor> VocoderModel::residual_layer(int index, const Tensor& x,
                                                       const Tensor& cond,
                                                       const Tensor& temb) const {
  if (index < 0 || index >= config_.residual_layers) {
    throw ArgumentError("residual layer index " + std::to_string(index) + " out of range");
  }
  auto p = [&](const char* leaf) -> const Tensor& {
    return param(params_, layer_name(index, leaf));
  };

  const int dilation = 1 << (index % config_.dilation_cycle);
  const int pad = dilation * (config_.kernel_size - 1) / 2;

  const Tensor step_bias = ops::linear(temb, p("step/w"), p("step/b"));  // [C]
  const Tensor shifted = ops::add_per_channel(x, step_bias);
  const Tensor gates =
      ops::add(ops::conv1d(shifted, p("dilated/w"), p("dilated/b"), dilation, pad),
               ops::conv1d(cond, p("cond/w"), p("cond/b"), 1, 0));
  const Tensor gate = ops::gated_activation(gates);  // [C, L]

  const float inv_sqrt2 = 0.70710678118654752f;
  Tensor residual = ops::scale(ops::add(x, ops::conv1d(gate, p("res/w"), p("res/b"), 1, 0)), inv_sqrt2);
  Tensor skip = ops::conv1d(gate, p("skip/w"), p("skip/b"), 1, 0);
  return {std::move(residual), std::move(skip)};
}

Tensor VocoderModel::forward(const Tensor& x_t, double t_coord, const Tensor& mel) const {
  return forward_cond(x_t, t_coord, upsample(mel));
}

Tensor VocoderModel::forward_cond(const Tensor& x_t, double t_coord, const Tensor& cond) const {
  if (x_t.rank() != 1) {
    throw ArgumentError("vocoder input must be rank-1, got " + core::shape_str(x_t.shape()));
  }
  if (cond.rank() != 2 || cond.dim(0) != config_.n_mels) {
    throw ShapeError("conditioner must be [" + std::to_string(config_.n_mels) +
                     ", length], got " + core::shape_str(cond.shape()));
  }
  if (cond.dim(1) != x_t.dim(0)) {
    throw ArgumentError("waveform length " + std::to_string(x_t.dim(0)) +
                        " does not match conditioner length " + std::to_string(cond.dim(1)));
  }
  const int length = x_t.dim(0);

  const Tensor temb = step_vector(t_coord);
  Tensor h = ops::relu(ops::conv1d(ops::reshape(x_t, {1, length}), param(params_, "input/w"),
                                   param(params_, "input/b"), 1, 0));
  Tensor skip_sum;
  for (int l = 0; l < config_.residual_layers; ++l) {
    auto [res, skip] = residual_layer(l, h, cond, temb);
    h = res;
    skip_sum = l == 0 ? skip : ops::add(skip_sum, skip);
  }
  Tensor out = ops::scale(skip_sum, 1.0f / std::sqrt(static_cast<float>(config_.residual_layers)));
  out = ops::relu(ops::conv1d(out, param(params_, "head/mid/w"), param(params_, "head/mid/b"), 1, 0));
  out = ops::conv1d(out, param(params_, "head/out/w"), param(params_, "head/out/b"), 1, 0);
  return ops::reshape(out, {length});
}

diffusion::DenoiseFn VocoderModel::denoiser() const {
  return [this](const Tensor& x_t, double t_coord, const Tensor& mel) {
    return forward(x_t, t_coord, mel);
  };
}

VocoderTrainResult train_vocoder(VocoderModel& model, const diffusion::NoiseSchedule& schedule,
                                 const std::vector<TrainSample>& data,
                                 const VocoderTrainOptions& options, Rng& rng) {
  if (data.empty()) throw ArgumentError("train_vocoder: empty dataset");
  if (options.batch_size < 1 || options.steps < 1) {
    throw ConfigError("train_vocoder: steps and batch_size must be >= 1");
  }
  core::AdamConfig adam_config;
  adam_config.lr = options.lr;
  core::Adam adam(model.params(), adam_config);
  const diffusion::DenoiseFn fn = model.denoiser();
  const float inv_batch = 1.0f / static_cast<float>(options.batch_size);

  VocoderTrainResult result;
  result.losses.reserve(static_cast<std::size_t>(options.steps));
  for (int step = 0; step < options.steps; ++step) {
    double batch_loss = 0.0;
    for (int b = 0; b < options.batch_size; ++b) {
      const auto& sample = data[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))];
      Tensor loss = diffusion::training_loss(fn, sample.x0, sample.mel, schedule, rng,
                                             model.config().hop);
      batch_loss += loss.item();
      ops::scale(loss, inv_batch).backward();
    }
    adam.step();
    const double mean_loss = batch_loss / options.batch_size;
    result.losses.push_back(mean_loss);
    result.steps_run = step + 1;
    if (options.on_step) options.on_step(step + 1, mean_loss);

    const int w = options.window;
    if (options.stop_ratio > 0.0 && static_cast<int>(result.losses.size()) >= 2 * w) {
      double head = 0.0, tail = 0.0;
      for (int i = 0; i < w; ++i) {
        head += result.losses[static_cast<std::size_t>(i)];
        tail += result.losses[result.losses.size() - 1 - static_cast<std::size_t>(i)];
      }
      if (tail <= options.stop_ratio * head) break;
    }
  }
  return result;
}

dsp::Waveform generate(const VocoderModel& model, const Tensor& mel,
                       const diffusion::NoiseSchedule& schedule, Rng& rng,
                       const diffusion::FastSchedule* fast, int sample_rate) {
  core::NoGradGuard no_grad;
  const Tensor cond = model.upsample(mel);
  const diffusion::DenoiseFn fn = [&](const Tensor& x_t, double t_coord, const Tensor&) {
    return model.forward_cond(x_t, t_coord, cond);
  };
  return diffusion::sample(fn, mel, schedule, rng, fast, model.config().hop, sample_rate);
}

void save_vocoder(const std::string& path, const VocoderModel& model,
                  const diffusion::NoiseSchedule& schedule) {
  std::vector<core::Parameter> entries = model.params().params();
  const VocoderConfig& c = model.config();
  auto scalar = [&](const char* name, float v) {
    entries.push_back({name, Tensor({1}, {v})});
  };
  scalar("config/residual_layers", static_cast<float>(c.residual_layers));
  scalar("config/residual_channels", static_cast<float>(c.residual_channels));
  scalar("config/kernel_size", static_cast<float>(c.kernel_size));
  scalar("config/dilation_cycle", static_cast<float>(c.dilation_cycle));
  scalar("config/hop", static_cast<float>(c.hop));
  scalar("config/n_mels", static_cast<float>(c.n_mels));
  scalar("config/step_embed_dim", static_cast<float>(c.step_embed_dim));

  // Betas are 64-bit; the container stores f32. Three rounds of
  // residual-splitting capture 72 mantissa bits, so the exact doubles
  // reassemble on load (two rounds would drop the last few bits).
  const int t_steps = schedule.steps();
  std::vector<float> hi(static_cast<std::size_t>(t_steps)), mid(static_cast<std::size_t>(t_steps)),
      lo(static_cast<std::size_t>(t_steps));
  for (int t = 1; t <= t_steps; ++t) {
    const std::size_t i = static_cast<std::size_t>(t) - 1;
    const double b = schedule.beta(t);
    hi[i] = static_cast<float>(b);
    const double r1 = b - static_cast<double>(hi[i]);
    mid[i] = static_cast<float>(r1);
    lo[i] = static_cast<float>(r1 - static_cast<double>(mid[i]));
  }
  entries.push_back({"schedule/betas", Tensor({t_steps}, std::move(hi))});
  entries.push_back({"schedule/betas_mid", Tensor({t_steps}, std::move(mid))});
  entries.push_back({"schedule/betas_lo", Tensor({t_steps}, std::move(lo))});

  core::save_checkpoint(path, entries);
}

std::pair<VocoderModel, diffusion::NoiseSchedule> load_vocoder(const std::string& path) {
  const std::vector<core::Parameter> entries = core::load_checkpoint(path);
  std::map<std::string, const core::Parameter*> by_name;
  for (const auto& p : entries) by_name[p.name] = &p;

  auto want = [&](const std::string& name) -> const core::Parameter& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IntegrityError(path + ": checkpoint missing " + name);
    return *it->second;
  };
  auto scalar = [&](const std::string& name) {
    const core::Parameter& p = want(name);
    if (p.tensor.size() != 1) throw IntegrityError(path + ": " + name + " is not a scalar");
    return static_cast<int>(p.tensor[0]);
  };

  VocoderConfig c;
  c.residual_layers = scalar("config/residual_layers");
  c.residual_channels = scalar("config/residual_channels");
  c.kernel_size = scalar("config/kernel_size");
  c.dilation_cycle = scalar("config/dilation_cycle");
  c.hop = scalar("config/hop");
  c.n_mels = scalar("config/n_mels");
  c.step_embed_dim = scalar("config/step_embed_dim");

  const Tensor& hi = want("schedule/betas").tensor;
  const Tensor& mid = want("schedule/betas_mid").tensor;
  const Tensor& lo = want("schedule/betas_lo").tensor;
  if (hi.size() != mid.size() || hi.size() != lo.size() || hi.size() < 1) {
    throw IntegrityError(path + ": malformed schedule tensors");
  }
  std::vector<double> betas(static_cast<std::size_t>(hi.size()));
  for (std::int64_t i = 0; i < hi.size(); ++i) {
    betas[static_cast<std::size_t>(i)] = (static_cast<double>(hi[i]) + static_cast<double>(mid[i])) +
                                         static_cast<double>(lo[i]);
  }

  Rng rng(0);
  VocoderModel model(c, rng);
  for (auto& slot : model.params().params()) {
    const core::Parameter& stored = want(slot.name);
    if (stored.tensor.shape() != slot.tensor.shape()) {
      throw IntegrityError(path + ": shape mismatch for " + slot.name);
    }
    std::copy(stored.tensor.data(), stored.tensor.data() + stored.tensor.size(),
              slot.tensor.data());
  }
  return {std::move(model), diffusion::NoiseSchedule(std::move(betas))};
}

}  // namespace respiro::vocoder
