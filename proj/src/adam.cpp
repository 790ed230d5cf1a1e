#include "respiro/adam.hpp"

#include <cmath>

#include "respiro/errors.hpp"

namespace respiro::core {

Adam::Adam(ParamRegistry& registry, AdamConfig config)
    : registry_(&registry), config_(config) {
  m_.reserve(registry.params().size());
  v_.reserve(registry.params().size());
  for (const auto& p : registry.params()) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor.size()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.tensor.size()), 0.0);
  }
}

void Adam::step() {
  if (m_.size() != registry_->params().size()) {
    throw TrainingError("optimizer state does not match the parameter registry");
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));

  for (std::size_t pi = 0; pi < m_.size(); ++pi) {
    auto& param = registry_->params()[pi];
    auto& m = m_[pi];
    auto& v = v_[pi];
    float* w = param.tensor.data();
    const bool has_grad = param.tensor.has_grad();
    const std::vector<float>* grad = has_grad ? &param.tensor.grad() : nullptr;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = has_grad ? static_cast<double>((*grad)[i]) : 0.0;
      if (!std::isfinite(g)) {
        throw TrainingError("non-finite gradient in parameter " + param.name);
      }
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] = static_cast<float>(w[i] - config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps));
    }
    param.tensor.zero_grad();
  }
}

}  // namespace respiro::core
