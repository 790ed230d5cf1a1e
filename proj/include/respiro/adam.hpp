#pragma once

#include <cstdint>
#include <vector>

#include "respiro/module.hpp"

namespace respiro::core {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are kept in 64-bit floats so update
// arithmetic matches the hand-computed recursions used in tests; parameters
// stay 32-bit.
class Adam {
 public:
  Adam(ParamRegistry& registry, AdamConfig config);

  // Applies one update from the gradients currently accumulated on the
  // registry's parameters (a parameter without a gradient counts as zero),
  // then clears them. Throws TrainingError on a non-finite gradient.
  void step();

  void zero_grad() { registry_->zero_grad(); }
  std::int64_t step_count() const { return step_count_; }

 private:
  ParamRegistry* registry_;
  AdamConfig config_;
  std::int64_t step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace respiro::core
