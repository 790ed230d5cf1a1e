#include "respiro/module.hpp"

#include <cmath>

#include "respiro/errors.hpp"

namespace respiro::core {

Tensor ParamRegistry::add(const std::string& name, Tensor t) {
  for (const auto& p : params_) {
    if (p.name == name) throw ArgumentError("duplicate parameter name: " + name);
  }
  t.set_requires_grad(true);
  params_.push_back({name, t});
  return t;
}

Tensor ParamRegistry::add_uniform(const std::string& name, Shape shape, int fan_in, Rng& rng) {
  if (fan_in < 1) throw ArgumentError("fan_in must be >= 1 for parameter " + name);
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  return add(name, Tensor::uniform(std::move(shape), -bound, bound, rng));
}

Tensor ParamRegistry::add_zeros(const std::string& name, Shape shape) {
  return add(name, Tensor::zeros(std::move(shape)));
}

Tensor* ParamRegistry::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p.tensor;
  }
  return nullptr;
}

void ParamRegistry::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::int64_t ParamRegistry::total_size() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

}  // namespace respiro::core
