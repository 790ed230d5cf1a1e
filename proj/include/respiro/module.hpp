#pragma once

#include <string>
#include <vector>

#include "respiro/rng.hpp"
#include "respiro/tensor.hpp"

namespace respiro::core {

// A named trainable tensor. Names are slash-separated paths, unique within a
// model, and are the keys used by the checkpoint format.
struct Parameter {
  std::string name;
  Tensor tensor;
};

// Ordered collection of a model's parameters. Registration order is the
// serialization order, so it must be deterministic across runs.
class ParamRegistry {
 public:
  // Registers `t` under `name` with requires_grad set; returns the tensor
  // (shared storage) for use in the forward graph.
  Tensor add(const std::string& name, Tensor t);

  // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
  Tensor add_uniform(const std::string& name, Shape shape, int fan_in, Rng& rng);
  Tensor add_zeros(const std::string& name, Shape shape);

  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& params() { return params_; }
  Tensor* find(const std::string& name);
  void zero_grad();
  std::int64_t total_size() const;

 private:
  std::vector<Parameter> params_;
};

}  // namespace respiro::core
