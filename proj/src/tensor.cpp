#include "respiro/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "respiro/errors.hpp"

namespace respiro::core {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<float> data) {
  for (int e : shape) {
    if (e <= 0) throw ShapeError("tensor extent must be positive, got shape " + shape_str(shape));
  }
  if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

thread_local bool g_grad_enabled = true;
thread_local GradSink* g_grad_sink = nullptr;

}  // namespace

Tensor::Tensor(Shape shape, std::vector<float> data) {
  impl_ = make_impl(std::move(shape), std::move(data));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), 0.0f));
}

Tensor Tensor::full(Shape shape, float value) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::scalar(float value) { return Tensor({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng) {
  const auto n = numel(shape);
  std::vector<float> data(static_cast<std::size_t>(n));
  for (auto& x : data) x = rng.normal_f();
  return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::uniform(Shape shape, float lo, float hi, Rng& rng) {
  const auto n = numel(shape);
  std::vector<float> data(static_cast<std::size_t>(n));
  for (auto& x : data) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(data));
}

const Shape& Tensor::shape() const { return impl_->shape; }

int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }

int Tensor::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw ArgumentError("axis " + std::to_string(i) + " out of range for rank " + std::to_string(r));
  return impl_->shape[static_cast<std::size_t>(i)];
}

std::int64_t Tensor::size() const { return static_cast<std::int64_t>(impl_->data.size()); }

float* Tensor::data() { return impl_->data.data(); }
const float* Tensor::data() const { return impl_->data.data(); }

float Tensor::operator[](std::int64_t i) const { return impl_->data[static_cast<std::size_t>(i)]; }

float Tensor::item() const {
  if (size() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return impl_->grad_fn == nullptr; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

const std::vector<float>& Tensor::grad() const {
  if (impl_->grad.empty()) throw ArgumentError("tensor has no gradient; call backward() first");
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const {
  Tensor t;
  t.impl_ = make_impl(impl_->shape, impl_->data);
  return t;
}

Tensor Tensor::clone() const { return detach(); }

void Tensor::throw_if_not_finite(const char* what) const {
  for (float v : impl_->data) {
    if (!std::isfinite(v)) throw TrainingError(std::string(what) + " contains a non-finite value");
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

GradSinkScope::GradSinkScope(GradSink& sink) : previous_(g_grad_sink) {
  g_grad_sink = &sink;
}

GradSinkScope::~GradSinkScope() { g_grad_sink = previous_; }

void GradSink::flush() {
  for (auto& e : entries_) {
    auto& dst = e.target->grad;
    if (dst.empty()) dst.assign(e.target->data.size(), 0.0f);
    for (std::size_t i = 0; i < e.grad.size(); ++i) dst[i] += e.grad[i];
  }
  entries_.clear();
}

float* grad_accumulation_buffer(const Tensor& t) {
  TensorImpl* impl = t.raw();
  if (g_grad_sink && impl->grad_fn == nullptr && impl->requires_grad) {
    for (auto& e : g_grad_sink->entries()) {
      if (e.target.get() == impl) return e.grad.data();
    }
    g_grad_sink->entries().push_back(
        {t.impl(), std::vector<float>(impl->data.size(), 0.0f)});
    return g_grad_sink->entries().back().grad.data();
  }
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0f);
  return impl->grad.data();
}

bool needs_grad(const Tensor& t) {
  return t.defined() && (t.requires_grad() || t.raw()->grad_fn != nullptr);
}

Tensor make_op_result(Shape shape, std::vector<float> data, const char* name,
                      std::vector<Tensor> inputs,
                      std::function<void(const TensorImpl&)> apply) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || needs_grad(in);
  if (!any) return out;
  auto fn = std::make_shared<GradFn>();
  fn->name = name;
  fn->inputs = std::move(inputs);
  fn->apply = std::move(apply);
  out.impl()->grad_fn = std::move(fn);
  return out;
}

void Tensor::backward() {
  if (size() != 1) throw ArgumentError("backward() requires a scalar loss, got " + shape_str(shape()));
  if (!impl_->grad_fn && !impl_->requires_grad) return;

  // Iterative post-order DFS; reverse post-order is a topological order with
  // every consumer ahead of its inputs.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    std::size_t next_child;
  };
  std::vector<Frame> stack;
  if (visited.insert(impl_.get()).second) stack.push_back({impl_.get(), 0});
  while (!stack.empty()) {
    Frame& top = stack.back();
    GradFn* fn = top.node->grad_fn.get();
    const std::size_t n_children = fn ? fn->inputs.size() : 0;
    if (top.next_child < n_children) {
      TensorImpl* child = fn->inputs[top.next_child].raw();
      ++top.next_child;
      if (child->grad_fn && visited.insert(child).second) {
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }

  impl_->grad.assign(1, 1.0f);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->grad_fn) continue;
    if (node->grad.empty()) continue;  // unreached branch
    node->grad_fn->apply(*node);
    // Interior gradients are consumed exactly once; release the buffer so a
    // long training run does not hold every activation gradient at once.
    if (!node->requires_grad) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

}  // namespace respiro::core
