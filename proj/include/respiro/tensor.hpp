#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "respiro/rng.hpp"

namespace respiro::core {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
class TensorImpl;

// One backward-tape node. `apply` reads the node's output gradient and
// accumulates contributions into the gradients of `inputs`.
struct GradFn {
  const char* name = "";
  std::vector<Tensor> inputs;
  std::function<void(const TensorImpl& out)> apply;
};

class TensorImpl {
 public:
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // empty until first accumulation
  std::shared_ptr<GradFn> grad_fn;
};

// Dense row-major float32 tensor with reverse-mode differentiation.
// Value-like handle: copies share the underlying buffer.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value);
  static Tensor randn(Shape shape, Rng& rng);
  static Tensor uniform(Shape shape, float lo, float hi, Rng& rng);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  // Extent along axis i; negative i counts from the end.
  int dim(int i) const;
  std::int64_t size() const;

  float* data();
  const float* data() const;
  float operator[](std::int64_t i) const;
  // Value of a rank-0/size-1 tensor.
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  const std::vector<float>& grad() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar output. Accumulates into the grads of
  // every reachable tensor with requires_grad set.
  void backward();

  // Detached copy that shares no graph history (fresh buffer).
  Tensor detach() const;
  // Deep copy of values (no graph, no grad).
  Tensor clone() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  TensorImpl* raw() const { return impl_.get(); }

  void throw_if_not_finite(const char* what) const;

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Whether newly created ops record tape nodes (thread-local).
bool grad_enabled();

// RAII scope that disables tape recording, e.g. during sampling/eval.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Holds leaf-gradient contributions produced by one backward pass so that
// per-sample passes can run in parallel and be reduced in a fixed order
// afterwards (float addition order stays deterministic).
class GradSink {
 public:
  // Adds this sink's accumulated gradients into the real grad buffers.
  // Call after the parallel section, in a deterministic order.
  void flush();

  struct Entry {
    std::shared_ptr<TensorImpl> target;
    std::vector<float> grad;
  };
  std::vector<Entry>& entries() { return entries_; }

 private:
  std::vector<Entry> entries_;
};

// Registers a GradSink as the redirection target for leaf-gradient
// accumulation on the current thread. Construct and destroy on the thread
// that runs the backward pass.
class GradSinkScope {
 public:
  explicit GradSinkScope(GradSink& sink);
  ~GradSinkScope();
  GradSinkScope(const GradSinkScope&) = delete;
  GradSinkScope& operator=(const GradSinkScope&) = delete;

 private:
  GradSink* previous_;
};

// Returns the buffer gradient contributions should be += into for `t`:
// either t's own grad (resized to zeros on first touch) or the active
// GradSink's entry for t when t is a leaf parameter.
float* grad_accumulation_buffer(const Tensor& t);

// True when the tensor participates in differentiation (itself or through
// its history).
bool needs_grad(const Tensor& t);

// Builds the op result: wires a GradFn when grad mode is on and any input
// needs gradients, otherwise returns a plain tensor.
Tensor make_op_result(Shape shape, std::vector<float> data, const char* name,
                      std::vector<Tensor> inputs,
                      std::function<void(const TensorImpl&)> apply);

}  // namespace respiro::core
