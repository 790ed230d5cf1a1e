#include "respiro/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "respiro/errors.hpp"

namespace respiro::core {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()) + " differ");
  }
}

void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
           const float* a, int lda, const float* b, int ldb, float beta,
           float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

// Unary elementwise op with pointwise derivative computed from (x, y).
template <class Fwd, class Bwd>
Tensor pointwise(const Tensor& x, const char* name, Fwd fwd, Bwd dydx) {
  const auto n = static_cast<std::size_t>(x.size());
  std::vector<float> out(n);
  const float* xd = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xd[i]);
  return make_op_result(
      x.shape(), std::move(out), name, {x},
      [x, dydx](const TensorImpl& o) {
        if (!needs_grad(x)) return;
        float* gx = grad_accumulation_buffer(x);
        const float* xd = x.data();
        for (std::size_t i = 0; i < o.data.size(); ++i) {
          gx[i] += o.grad[i] * dydx(xd[i], o.data[i]);
        }
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const auto n = static_cast<std::size_t>(a.size());
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  return make_op_result(a.shape(), std::move(out), "add", {a, b},
                        [a, b](const TensorImpl& o) {
                          for (const Tensor* t : {&a, &b}) {
                            if (!needs_grad(*t)) continue;
                            float* g = grad_accumulation_buffer(*t);
                            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                          }
                        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const auto n = static_cast<std::size_t>(a.size());
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
  return make_op_result(a.shape(), std::move(out), "sub", {a, b},
                        [a, b](const TensorImpl& o) {
                          if (needs_grad(a)) {
                            float* g = grad_accumulation_buffer(a);
                            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                          }
                          if (needs_grad(b)) {
                            float* g = grad_accumulation_buffer(b);
                            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
                          }
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const auto n = static_cast<std::size_t>(a.size());
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  return make_op_result(a.shape(), std::move(out), "mul", {a, b},
                        [a, b](const TensorImpl& o) {
                          if (needs_grad(a)) {
                            float* g = grad_accumulation_buffer(a);
                            const float* bd = b.data();
                            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * bd[i];
                          }
                          if (needs_grad(b)) {
                            float* g = grad_accumulation_buffer(b);
                            const float* ad = a.data();
                            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * ad[i];
                          }
                        });
}

Tensor scale(const Tensor& a, float s) {
  const auto n = static_cast<std::size_t>(a.size());
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
  return make_op_result(a.shape(), std::move(out), "scale", {a},
                        [a, s](const TensorImpl& o) {
                          if (!needs_grad(a)) return;
                          float* g = grad_accumulation_buffer(a);
                          for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * s;
                        });
}

Tensor add_scalar(const Tensor& a, float s) {
  const auto n = static_cast<std::size_t>(a.size());
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + s;
  return make_op_result(a.shape(), std::move(out), "add_scalar", {a},
                        [a](const TensorImpl& o) {
                          if (!needs_grad(a)) return;
                          float* g = grad_accumulation_buffer(a);
                          for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                        });
}

Tensor relu(const Tensor& x) {
  return pointwise(
      x, "relu", [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor leaky_relu(const Tensor& x, float negative_slope) {
  const float s = negative_slope;
  return pointwise(
      x, "leaky_relu", [s](float v) { return v > 0.0f ? v : s * v; },
      [s](float v, float) { return v > 0.0f ? 1.0f : s; });
}

Tensor tanh_op(const Tensor& x) {
  return pointwise(
      x, "tanh", [](float v) { return std::tanh(v); },
      [](float, float y) { return 1.0f - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return pointwise(
      x, "sigmoid", [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
      [](float, float y) { return y * (1.0f - y); });
}

Tensor swish(const Tensor& x) {
  return pointwise(
      x, "swish",
      [](float v) { return v / (1.0f + std::exp(-v)); },
      [](float v, float) {
        const float s = 1.0f / (1.0f + std::exp(-v));
        return s * (1.0f + v * (1.0f - s));
      });
}

Tensor gated_activation(const Tensor& h) {
  const int r = h.rank();
  if (r != 2 && r != 3) {
    throw ShapeError("gated_activation expects rank 2 or 3, got " + shape_str(h.shape()));
  }
  const int ch_axis = r - 2;
  const int ch = h.dim(ch_axis);
  if (ch % 2 != 0) {
    throw ShapeError("gated_activation needs an even channel count, got " + shape_str(h.shape()));
  }
  const int c = ch / 2;
  const int len = h.dim(-1);
  const int batch = (r == 3) ? h.dim(0) : 1;

  Shape out_shape = h.shape();
  out_shape[static_cast<std::size_t>(ch_axis)] = c;
  std::vector<float> out(static_cast<std::size_t>(batch) * c * len);
  const float* hd = h.data();
  for (int n = 0; n < batch; ++n) {
    const float* top = hd + static_cast<std::size_t>(n) * ch * len;
    const float* bot = top + static_cast<std::size_t>(c) * len;
    float* o = out.data() + static_cast<std::size_t>(n) * c * len;
    for (std::size_t i = 0; i < static_cast<std::size_t>(c) * len; ++i) {
      o[i] = std::tanh(top[i]) / (1.0f + std::exp(-bot[i]));
    }
  }
  return make_op_result(
      std::move(out_shape), std::move(out), "gated_activation", {h},
      [h, batch, c, len, ch](const TensorImpl& o) {
        if (!needs_grad(h)) return;
        float* gh = grad_accumulation_buffer(h);
        const float* hd = h.data();
        for (int n = 0; n < batch; ++n) {
          const std::size_t base = static_cast<std::size_t>(n) * ch * len;
          const std::size_t obase = static_cast<std::size_t>(n) * c * len;
          for (std::size_t i = 0; i < static_cast<std::size_t>(c) * len; ++i) {
            const float t = std::tanh(hd[base + i]);
            const float s = 1.0f / (1.0f + std::exp(-hd[base + c * len + i]));
            const float g = o.grad[obase + i];
            gh[base + i] += g * s * (1.0f - t * t);
            gh[base + c * len + i] += g * t * s * (1.0f - s);
          }
        }
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<float> out(x.data(), x.data() + x.size());
  return make_op_result(std::move(shape), std::move(out), "reshape", {x},
                        [x](const TensorImpl& o) {
                          if (!needs_grad(x)) return;
                          float* g = grad_accumulation_buffer(x);
                          for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                        });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose expects rank 2, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  std::vector<float> out(static_cast<std::size_t>(m) * n);
  const float* xd = x.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = xd[static_cast<std::size_t>(i) * n + j];
  return make_op_result({n, m}, std::move(out), "transpose", {x},
                        [x, m, n](const TensorImpl& o) {
                          if (!needs_grad(x)) return;
                          float* g = grad_accumulation_buffer(x);
                          for (int j = 0; j < n; ++j)
                            for (int i = 0; i < m; ++i)
                              g[static_cast<std::size_t>(i) * n + j] += o.grad[static_cast<std::size_t>(j) * m + i];
                        });
}

Tensor slice_last(const Tensor& x, int start, int len) {
  const int last = x.dim(-1);
  if (start < 0 || len <= 0 || start + len > last) {
    throw ArgumentError("slice_last: window [" + std::to_string(start) + ", " +
                        std::to_string(start + len) + ") outside extent " + std::to_string(last));
  }
  const std::int64_t rows = x.size() / last;
  Shape out_shape = x.shape();
  out_shape.back() = len;
  std::vector<float> out(static_cast<std::size_t>(rows) * len);
  const float* xd = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    std::memcpy(out.data() + r * len, xd + r * last + start, sizeof(float) * static_cast<std::size_t>(len));
  }
  return make_op_result(std::move(out_shape), std::move(out), "slice_last", {x},
                        [x, start, len, last, rows](const TensorImpl& o) {
                          if (!needs_grad(x)) return;
                          float* g = grad_accumulation_buffer(x);
                          for (std::int64_t r = 0; r < rows; ++r)
                            for (int j = 0; j < len; ++j)
                              g[r * last + start + j] += o.grad[static_cast<std::size_t>(r * len + j)];
                        });
}

Tensor concat_last(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ArgumentError("concat_last: no inputs");
  Shape lead = xs[0].shape();
  lead.pop_back();
  int total = 0;
  for (const auto& t : xs) {
    Shape l = t.shape();
    l.pop_back();
    if (l != lead) {
      throw ShapeError("concat_last: leading extents differ, " + shape_str(xs[0].shape()) +
                       " vs " + shape_str(t.shape()));
    }
    total += t.dim(-1);
  }
  const std::int64_t rows = xs[0].size() / xs[0].dim(-1);
  Shape out_shape = xs[0].shape();
  out_shape.back() = total;
  std::vector<float> out(static_cast<std::size_t>(rows) * total);
  int col = 0;
  for (const auto& t : xs) {
    const int w = t.dim(-1);
    for (std::int64_t r = 0; r < rows; ++r) {
      std::memcpy(out.data() + r * total + col, t.data() + r * w, sizeof(float) * static_cast<std::size_t>(w));
    }
    col += w;
  }
  return make_op_result(std::move(out_shape), std::move(out), "concat_last", xs,
                        [xs, rows, total](const TensorImpl& o) {
                          int col = 0;
                          for (const auto& t : xs) {
                            const int w = t.dim(-1);
                            if (needs_grad(t)) {
                              float* g = grad_accumulation_buffer(t);
                              for (std::int64_t r = 0; r < rows; ++r)
                                for (int j = 0; j < w; ++j)
                                  g[r * w + j] += o.grad[static_cast<std::size_t>(r * total + col + j)];
                            }
                            col += w;
                          }
                        });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ArgumentError("stack_rows: no inputs");
  const int d = static_cast<int>(rows[0].size());
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.size() != d) {
      throw ShapeError("stack_rows: expected rank-1 [" + std::to_string(d) + "], got " + shape_str(r.shape()));
    }
  }
  const int n = static_cast<int>(rows.size());
  std::vector<float> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) std::memcpy(out.data() + static_cast<std::size_t>(i) * d, rows[i].data(), sizeof(float) * static_cast<std::size_t>(d));
  return make_op_result({n, d}, std::move(out), "stack_rows", rows,
                        [rows, d](const TensorImpl& o) {
                          for (std::size_t i = 0; i < rows.size(); ++i) {
                            if (!needs_grad(rows[i])) continue;
                            float* g = grad_accumulation_buffer(rows[i]);
                            for (int j = 0; j < d; ++j) g[j] += o.grad[i * d + j];
                          }
                        });
}

Tensor crop_hw(const Tensor& x, int h, int w) {
  if (x.rank() < 2) throw ShapeError("crop_hw expects rank >= 2, got " + shape_str(x.shape()));
  const int ih = x.dim(-2), iw = x.dim(-1);
  if (h <= 0 || w <= 0 || h > ih || w > iw) {
    throw ArgumentError("crop_hw: target " + std::to_string(h) + "x" + std::to_string(w) +
                        " does not fit in " + std::to_string(ih) + "x" + std::to_string(iw));
  }
  const std::int64_t planes = x.size() / (static_cast<std::int64_t>(ih) * iw);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = h;
  out_shape[out_shape.size() - 1] = w;
  std::vector<float> out(static_cast<std::size_t>(planes) * h * w);
  const float* xd = x.data();
  for (std::int64_t p = 0; p < planes; ++p)
    for (int i = 0; i < h; ++i)
      std::memcpy(out.data() + (p * h + i) * w, xd + (p * ih + i) * iw, sizeof(float) * static_cast<std::size_t>(w));
  return make_op_result(std::move(out_shape), std::move(out), "crop_hw", {x},
                        [x, h, w, ih, iw, planes](const TensorImpl& o) {
                          if (!needs_grad(x)) return;
                          float* g = grad_accumulation_buffer(x);
                          for (std::int64_t p = 0; p < planes; ++p)
                            for (int i = 0; i < h; ++i)
                              for (int j = 0; j < w; ++j)
                                g[(p * ih + i) * iw + j] += o.grad[static_cast<std::size_t>((p * h + i) * w + j)];
                        });
}

Tensor add_per_channel(const Tensor& x, const Tensor& v) {
  int batch = 1, c = 0, len = 0;
  if (x.rank() == 2 && v.rank() == 1 && v.dim(0) == x.dim(0)) {
    c = x.dim(0);
    len = x.dim(1);
  } else if (x.rank() == 3 && v.rank() == 2 && v.dim(0) == x.dim(0) && v.dim(1) == x.dim(1)) {
    batch = x.dim(0);
    c = x.dim(1);
    len = x.dim(2);
  } else {
    throw ShapeError("add_per_channel: incompatible shapes " + shape_str(x.shape()) +
                     " and " + shape_str(v.shape()));
  }
  std::vector<float> out(static_cast<std::size_t>(x.size()));
  const float* xd = x.data();
  const float* vd = v.data();
  for (int n = 0; n < batch; ++n)
    for (int ch = 0; ch < c; ++ch) {
      const float b = vd[static_cast<std::size_t>(n) * c + ch];
      const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * len;
      for (int l = 0; l < len; ++l) out[base + l] = xd[base + l] + b;
    }
  return make_op_result(x.shape(), std::move(out), "add_per_channel", {x, v},
                        [x, v, batch, c, len](const TensorImpl& o) {
                          if (needs_grad(x)) {
                            float* g = grad_accumulation_buffer(x);
                            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                          }
                          if (needs_grad(v)) {
                            float* g = grad_accumulation_buffer(v);
                            for (int n = 0; n < batch; ++n)
                              for (int ch = 0; ch < c; ++ch) {
                                const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * len;
                                double acc = 0.0;
                                for (int l = 0; l < len; ++l) acc += o.grad[base + l];
                                g[static_cast<std::size_t>(n) * c + ch] += static_cast<float>(acc);
                              }
                          }
                        });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() == 2 && b.rank() == 2) {
    if (a.dim(1) != b.dim(0)) {
      throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<float> out(static_cast<std::size_t>(m) * n);
    sgemm(false, false, m, n, k, 1.0f, a.data(), k, b.data(), n, 0.0f, out.data(), n);
    return make_op_result({m, n}, std::move(out), "matmul", {a, b},
                          [a, b, m, k, n](const TensorImpl& o) {
                            if (needs_grad(a)) {
                              float* g = grad_accumulation_buffer(a);
                              sgemm(false, true, m, k, n, 1.0f, o.grad.data(), n, b.data(), n, 1.0f, g, k);
                            }
                            if (needs_grad(b)) {
                              float* g = grad_accumulation_buffer(b);
                              sgemm(true, false, k, n, m, 1.0f, a.data(), k, o.grad.data(), n, 1.0f, g, n);
                            }
                          });
  }
  if (a.rank() == 3 && b.rank() == 3) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
      throw ShapeError("matmul: batched extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const int bt = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    std::vector<float> out(static_cast<std::size_t>(bt) * m * n);
    for (int i = 0; i < bt; ++i) {
      sgemm(false, false, m, n, k, 1.0f, a.data() + static_cast<std::size_t>(i) * m * k, k,
            b.data() + static_cast<std::size_t>(i) * k * n, n, 0.0f,
            out.data() + static_cast<std::size_t>(i) * m * n, n);
    }
    return make_op_result({bt, m, n}, std::move(out), "matmul", {a, b},
                          [a, b, bt, m, k, n](const TensorImpl& o) {
                            for (int i = 0; i < bt; ++i) {
                              const float* go = o.grad.data() + static_cast<std::size_t>(i) * m * n;
                              if (needs_grad(a)) {
                                float* g = grad_accumulation_buffer(a) + static_cast<std::size_t>(i) * m * k;
                                sgemm(false, true, m, k, n, 1.0f, go, n, b.data() + static_cast<std::size_t>(i) * k * n, n, 1.0f, g, k);
                              }
                              if (needs_grad(b)) {
                                float* g = grad_accumulation_buffer(b) + static_cast<std::size_t>(i) * k * n;
                                sgemm(true, false, k, n, m, 1.0f, a.data() + static_cast<std::size_t>(i) * m * k, k, go, n, 1.0f, g, n);
                              }
                            }
                          });
  }
  throw ShapeError("matmul: unsupported ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (w.rank() != 2) throw ShapeError("linear: weight must be rank 2, got " + shape_str(w.shape()));
  const int d_out = w.dim(0), d_in = w.dim(1);
  if (x.dim(-1) != d_in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d_out)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  const std::int64_t m = x.size() / d_in;
  std::vector<float> out(static_cast<std::size_t>(m) * d_out);
  sgemm(false, true, static_cast<int>(m), d_out, d_in, 1.0f, x.data(), d_in, w.data(), d_in, 0.0f, out.data(), d_out);
  if (bias.defined()) {
    const float* bd = bias.data();
    for (std::int64_t r = 0; r < m; ++r)
      for (int j = 0; j < d_out; ++j) out[static_cast<std::size_t>(r) * d_out + j] += bd[j];
  }
  Shape out_shape = x.shape();
  out_shape.back() = d_out;

  std::vector<Tensor> inputs = {x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result(std::move(out_shape), std::move(out), "linear", std::move(inputs),
                        [x, w, bias, m, d_in, d_out](const TensorImpl& o) {
                          const float* go = o.grad.data();
                          if (needs_grad(x)) {
                            float* g = grad_accumulation_buffer(x);
                            sgemm(false, false, static_cast<int>(m), d_in, d_out, 1.0f, go, d_out, w.data(), d_in, 1.0f, g, d_in);
                          }
                          if (needs_grad(w)) {
                            float* g = grad_accumulation_buffer(w);
                            sgemm(true, false, d_out, d_in, static_cast<int>(m), 1.0f, go, d_out, x.data(), d_in, 1.0f, g, d_in);
                          }
                          if (bias.defined() && needs_grad(bias)) {
                            float* g = grad_accumulation_buffer(bias);
                            for (std::int64_t r = 0; r < m; ++r)
                              for (int j = 0; j < d_out; ++j) g[j] += go[static_cast<std::size_t>(r) * d_out + j];
                          }
                        });
}

namespace {

// Zero-padded copy of one [C,L] sample along the last axis.
void pad_sample(const float* src, int c, int l, int pad, float* dst) {
  const int lp = l + 2 * pad;
  std::memset(dst, 0, sizeof(float) * static_cast<std::size_t>(c) * lp);
  for (int ch = 0; ch < c; ++ch) {
    std::memcpy(dst + static_cast<std::size_t>(ch) * lp + pad, src + static_cast<std::size_t>(ch) * l,
                sizeof(float) * static_cast<std::size_t>(l));
  }
}

// Weight [C_out,C_in,K] repacked as K contiguous [C_out,C_in] tap matrices.
std::vector<float> pack_taps(const float* w, int c_out, int c_in, int k) {
  std::vector<float> packed(static_cast<std::size_t>(k) * c_out * c_in);
  for (int co = 0; co < c_out; ++co)
    for (int ci = 0; ci < c_in; ++ci)
      for (int t = 0; t < k; ++t)
        packed[(static_cast<std::size_t>(t) * c_out + co) * c_in + ci] =
            w[(static_cast<std::size_t>(co) * c_in + ci) * k + t];
  return packed;
}

}  // namespace

Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int dilation, int padding) {
  if (dilation < 1) throw ArgumentError("conv1d: dilation must be >= 1, got " + std::to_string(dilation));
  if (padding < 0) throw ArgumentError("conv1d: padding must be >= 0, got " + std::to_string(padding));
  if (weight.rank() != 3) throw ShapeError("conv1d: weight must be [C_out,C_in,K], got " + shape_str(weight.shape()));
  const bool batched = input.rank() == 3;
  if (!batched && input.rank() != 2) {
    throw ShapeError("conv1d: input must be [C,L] or [N,C,L], got " + shape_str(input.shape()));
  }
  const int n = batched ? input.dim(0) : 1;
  const int c_in = input.dim(batched ? 1 : 0);
  const int l = input.dim(-1);
  const int c_out = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c_in) {
    throw ShapeError("conv1d: input " + shape_str(input.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
    throw ShapeError("conv1d: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  const int l_out = l + 2 * padding - dilation * (k - 1);
  if (l_out < 1) {
    throw ShapeError("conv1d: kernel span exceeds padded input (L=" + std::to_string(l) +
                     ", K=" + std::to_string(k) + ", dilation=" + std::to_string(dilation) +
                     ", padding=" + std::to_string(padding) + ")");
  }
  const int lp = l + 2 * padding;
  const std::vector<float> packed = pack_taps(weight.data(), c_out, c_in, k);

  std::vector<float> out(static_cast<std::size_t>(n) * c_out * l_out, 0.0f);
  std::vector<float> padded;
  if (padding > 0) padded.resize(static_cast<std::size_t>(c_in) * lp);
  for (int s = 0; s < n; ++s) {
    const float* src = input.data() + static_cast<std::size_t>(s) * c_in * l;
    const float* base = src;
    if (padding > 0) {
      pad_sample(src, c_in, l, padding, padded.data());
      base = padded.data();
    }
    float* dst = out.data() + static_cast<std::size_t>(s) * c_out * l_out;
    for (int t = 0; t < k; ++t) {
      sgemm(false, false, c_out, l_out, c_in, 1.0f,
            packed.data() + static_cast<std::size_t>(t) * c_out * c_in, c_in,
            base + static_cast<std::size_t>(t) * dilation, lp, 1.0f, dst, l_out);
    }
    if (bias.defined()) {
      const float* bd = bias.data();
      for (int co = 0; co < c_out; ++co)
        for (int j = 0; j < l_out; ++j) dst[static_cast<std::size_t>(co) * l_out + j] += bd[co];
    }
  }

  Shape out_shape = batched ? Shape{n, c_out, l_out} : Shape{c_out, l_out};
  std::vector<Tensor> inputs = {input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result(
      std::move(out_shape), std::move(out), "conv1d", std::move(inputs),
      [input, weight, bias, dilation, padding, n, c_in, l, c_out, k, l_out, lp,
       packed](const TensorImpl& o) {
        const float* go = o.grad.data();
        std::vector<float> padded;
        const bool needs_padded = needs_grad(weight) && padding > 0;
        if (needs_padded) padded.resize(static_cast<std::size_t>(c_in) * lp);
        std::vector<float> dpad;
        if (needs_grad(input)) dpad.resize(static_cast<std::size_t>(c_in) * lp);

        float* gw = needs_grad(weight) ? grad_accumulation_buffer(weight) : nullptr;
        std::vector<float> gw_packed;
        if (gw) gw_packed.assign(static_cast<std::size_t>(k) * c_out * c_in, 0.0f);
        float* gin = needs_grad(input) ? grad_accumulation_buffer(input) : nullptr;
        float* gb = (bias.defined() && needs_grad(bias)) ? grad_accumulation_buffer(bias) : nullptr;

        for (int s = 0; s < n; ++s) {
          const float* g_s = go + static_cast<std::size_t>(s) * c_out * l_out;
          if (gw) {
            const float* src = input.data() + static_cast<std::size_t>(s) * c_in * l;
            const float* base = src;
            if (padding > 0) {
              pad_sample(src, c_in, l, padding, padded.data());
              base = padded.data();
            }
            for (int t = 0; t < k; ++t) {
              sgemm(false, true, c_out, c_in, l_out, 1.0f, g_s, l_out,
                    base + static_cast<std::size_t>(t) * dilation, lp, 1.0f,
                    gw_packed.data() + static_cast<std::size_t>(t) * c_out * c_in, c_in);
            }
          }
          if (gin) {
            std::memset(dpad.data(), 0, sizeof(float) * dpad.size());
            for (int t = 0; t < k; ++t) {
              sgemm(true, false, c_in, l_out, c_out, 1.0f,
                    packed.data() + static_cast<std::size_t>(t) * c_out * c_in, c_in, g_s, l_out, 1.0f,
                    dpad.data() + static_cast<std::size_t>(t) * dilation, lp);
            }
            float* dst = gin + static_cast<std::size_t>(s) * c_in * l;
            for (int ch = 0; ch < c_in; ++ch)
              for (int j = 0; j < l; ++j)
                dst[static_cast<std::size_t>(ch) * l + j] += dpad[static_cast<std::size_t>(ch) * lp + padding + j];
          }
          if (gb) {
            for (int co = 0; co < c_out; ++co) {
              double acc = 0.0;
              for (int j = 0; j < l_out; ++j) acc += g_s[static_cast<std::size_t>(co) * l_out + j];
              gb[co] += static_cast<float>(acc);
            }
          }
        }
        if (gw) {
          for (int co = 0; co < c_out; ++co)
            for (int ci = 0; ci < c_in; ++ci)
              for (int t = 0; t < k; ++t)
                gw[(static_cast<std::size_t>(co) * c_in + ci) * k + t] +=
                    gw_packed[(static_cast<std::size_t>(t) * c_out + co) * c_in + ci];
        }
      });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight,
                        std::pair<int, int> stride) {
  const auto [sh, sw] = stride;
  if (sh < 1 || sw < 1) {
    throw ArgumentError("conv_transpose2d: strides must be >= 1, got (" +
                        std::to_string(sh) + "," + std::to_string(sw) + ")");
  }
  if (weight.rank() != 4) {
    throw ShapeError("conv_transpose2d: weight must be [C_in,C_out,Kh,Kw], got " + shape_str(weight.shape()));
  }
  const bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3) {
    throw ShapeError("conv_transpose2d: input must be [C,H,W] or [N,C,H,W], got " + shape_str(input.shape()));
  }
  const int n = batched ? input.dim(0) : 1;
  const int c_in = input.dim(batched ? 1 : 0);
  const int h = input.dim(-2), w = input.dim(-1);
  if (weight.dim(0) != c_in) {
    throw ShapeError("conv_transpose2d: input " + shape_str(input.shape()) +
                     " does not match weight " + shape_str(weight.shape()));
  }
  const int c_out = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  const int ho = (h - 1) * sh + kh;
  const int wo = (w - 1) * sw + kw;

  std::vector<float> out(static_cast<std::size_t>(n) * c_out * ho * wo, 0.0f);
  const float* xd = input.data();
  const float* wd = weight.data();
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < c_in; ++ci)
      for (int co = 0; co < c_out; ++co) {
        const float* wk = wd + (static_cast<std::size_t>(ci) * c_out + co) * kh * kw;
        const float* in = xd + (static_cast<std::size_t>(s) * c_in + ci) * h * w;
        float* op = out.data() + (static_cast<std::size_t>(s) * c_out + co) * ho * wo;
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) {
            const float v = in[static_cast<std::size_t>(i) * w + j];
            if (v == 0.0f) continue;
            float* dst = op + static_cast<std::size_t>(i * sh) * wo + j * sw;
            for (int a = 0; a < kh; ++a)
              for (int b = 0; b < kw; ++b) dst[static_cast<std::size_t>(a) * wo + b] += v * wk[a * kw + b];
          }
      }

  Shape out_shape = batched ? Shape{n, c_out, ho, wo} : Shape{c_out, ho, wo};
  return make_op_result(
      std::move(out_shape), std::move(out), "conv_transpose2d", {input, weight},
      [input, weight, sh, sw, n, c_in, h, w, c_out, kh, kw, ho, wo](const TensorImpl& o) {
        const float* go = o.grad.data();
        const float* xd = input.data();
        const float* wd = weight.data();
        float* gin = needs_grad(input) ? grad_accumulation_buffer(input) : nullptr;
        float* gw = needs_grad(weight) ? grad_accumulation_buffer(weight) : nullptr;
        for (int s = 0; s < n; ++s)
          for (int ci = 0; ci < c_in; ++ci)
            for (int co = 0; co < c_out; ++co) {
              const float* wk = wd + (static_cast<std::size_t>(ci) * c_out + co) * kh * kw;
              const float* g_s = go + (static_cast<std::size_t>(s) * c_out + co) * ho * wo;
              const float* in = xd + (static_cast<std::size_t>(s) * c_in + ci) * h * w;
              float* gi = gin ? gin + (static_cast<std::size_t>(s) * c_in + ci) * h * w : nullptr;
              float* gk = gw ? gw + (static_cast<std::size_t>(ci) * c_out + co) * kh * kw : nullptr;
              for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                  const float* gsl = g_s + static_cast<std::size_t>(i * sh) * wo + j * sw;
                  if (gi) {
                    double acc = 0.0;
                    for (int a = 0; a < kh; ++a)
                      for (int b = 0; b < kw; ++b) acc += gsl[static_cast<std::size_t>(a) * wo + b] * wk[a * kw + b];
                    gi[static_cast<std::size_t>(i) * w + j] += static_cast<float>(acc);
                  }
                  if (gk) {
                    const float v = in[static_cast<std::size_t>(i) * w + j];
                    if (v == 0.0f) continue;
                    for (int a = 0; a < kh; ++a)
                      for (int b = 0; b < kw; ++b) gk[a * kw + b] += v * gsl[static_cast<std::size_t>(a) * wo + b];
                  }
                }
            }
      });
}

Tensor softmax_last(const Tensor& x) {
  const int d = x.dim(-1);
  const std::int64_t rows = x.size() / d;
  std::vector<float> out(static_cast<std::size_t>(x.size()));
  const float* xd = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* row = xd + r * d;
    float mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    for (int j = 0; j < d; ++j)
      out[static_cast<std::size_t>(r * d + j)] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / z);
  }
  return make_op_result(x.shape(), std::move(out), "softmax_last", {x},
                        [x, d, rows](const TensorImpl& o) {
                          if (!needs_grad(x)) return;
                          float* g = grad_accumulation_buffer(x);
                          for (std::int64_t r = 0; r < rows; ++r) {
                            const float* y = o.data.data() + r * d;
                            const float* gy = o.grad.data() + r * d;
                            double dot = 0.0;
                            for (int j = 0; j < d; ++j) dot += static_cast<double>(y[j]) * gy[j];
                            for (int j = 0; j < d; ++j)
                              g[r * d + j] += y[j] * (gy[j] - static_cast<float>(dot));
                          }
                        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const int d = x.dim(-1);
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d) {
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(d) + "], got " +
                     shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  const std::int64_t rows = x.size() / d;
  std::vector<float> out(static_cast<std::size_t>(x.size()));
  std::vector<float> xhat(static_cast<std::size_t>(x.size()));
  std::vector<float> inv_std(static_cast<std::size_t>(rows));
  const float* xd = x.data();
  const float* gd = gamma.data();
  const float* bd = beta.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* row = xd + r * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = static_cast<float>(is);
    for (int j = 0; j < d; ++j) {
      const float xh = static_cast<float>((row[j] - mu) * is);
      xhat[static_cast<std::size_t>(r * d + j)] = xh;
      out[static_cast<std::size_t>(r * d + j)] = xh * gd[j] + bd[j];
    }
  }
  return make_op_result(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [x, gamma, beta, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](const TensorImpl& o) {
        const float* gd = gamma.data();
        if (needs_grad(gamma) || needs_grad(beta)) {
          float* gg = needs_grad(gamma) ? grad_accumulation_buffer(gamma) : nullptr;
          float* gb = needs_grad(beta) ? grad_accumulation_buffer(beta) : nullptr;
          for (int j = 0; j < d; ++j) {
            double sg = 0.0, sb = 0.0;
            for (std::int64_t r = 0; r < rows; ++r) {
              const float g = o.grad[static_cast<std::size_t>(r * d + j)];
              sg += static_cast<double>(g) * xhat[static_cast<std::size_t>(r * d + j)];
              sb += g;
            }
            if (gg) gg[j] += static_cast<float>(sg);
            if (gb) gb[j] += static_cast<float>(sb);
          }
        }
        if (needs_grad(x)) {
          float* gx = grad_accumulation_buffer(x);
          for (std::int64_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (int j = 0; j < d; ++j) {
              const double gy = static_cast<double>(o.grad[static_cast<std::size_t>(r * d + j)]) * gd[j];
              s1 += gy;
              s2 += gy * xhat[static_cast<std::size_t>(r * d + j)];
            }
            const double is = inv_std[static_cast<std::size_t>(r)];
            for (int j = 0; j < d; ++j) {
              const double gy = static_cast<double>(o.grad[static_cast<std::size_t>(r * d + j)]) * gd[j];
              const double xh = xhat[static_cast<std::size_t>(r * d + j)];
              gx[r * d + j] += static_cast<float>(is * (gy - s1 / d - xh * s2 / d));
            }
          }
        }
      });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw ShapeError("attention: q,k,v must be rank 2, got " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  if (q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0)) {
    throw ShapeError("attention: incompatible shapes " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const float s = 1.0f / std::sqrt(static_cast<float>(q.dim(1)));
  Tensor scores = scale(matmul(q, transpose(k)), s);
  return matmul(softmax_last(scores), v);
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  const float* xd = x.data();
  for (std::int64_t i = 0; i < x.size(); ++i) acc += xd[i];
  return make_op_result({1}, {static_cast<float>(acc)}, "sum", {x},
                        [x](const TensorImpl& o) {
                          if (!needs_grad(x)) return;
                          float* g = grad_accumulation_buffer(x);
                          const float gy = o.grad[0];
                          for (std::int64_t i = 0; i < x.size(); ++i) g[i] += gy;
                        });
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  const float* xd = x.data();
  for (std::int64_t i = 0; i < x.size(); ++i) acc += xd[i];
  const double n = static_cast<double>(x.size());
  return make_op_result({1}, {static_cast<float>(acc / n)}, "mean", {x},
                        [x, n](const TensorImpl& o) {
                          if (!needs_grad(x)) return;
                          float* g = grad_accumulation_buffer(x);
                          const float gy = static_cast<float>(o.grad[0] / n);
                          for (std::int64_t i = 0; i < x.size(); ++i) g[i] += gy;
                        });
}

Tensor mean_rows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("mean_rows expects rank 2, got " + shape_str(x.shape()));
  const int t = x.dim(0), d = x.dim(1);
  std::vector<float> out(static_cast<std::size_t>(d));
  const float* xd = x.data();
  for (int j = 0; j < d; ++j) {
    double acc = 0.0;
    for (int r = 0; r < t; ++r) acc += xd[static_cast<std::size_t>(r) * d + j];
    out[static_cast<std::size_t>(j)] = static_cast<float>(acc / t);
  }
  return make_op_result({d}, std::move(out), "mean_rows", {x},
                        [x, t, d](const TensorImpl& o) {
                          if (!needs_grad(x)) return;
                          float* g = grad_accumulation_buffer(x);
                          for (int r = 0; r < t; ++r)
                            for (int j = 0; j < d; ++j)
                              g[static_cast<std::size_t>(r) * d + j] += o.grad[static_cast<std::size_t>(j)] / t;
                        });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "mse_loss");
  double acc = 0.0;
  const float* pd = pred.data();
  const float* td = target.data();
  const std::int64_t n = pred.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double diff = static_cast<double>(pd[i]) - td[i];
    acc += diff * diff;
  }
  return make_op_result({1}, {static_cast<float>(acc / n)}, "mse_loss", {pred, target},
                        [pred, target, n](const TensorImpl& o) {
                          const float* pd = pred.data();
                          const float* td = target.data();
                          const float gy = o.grad[0];
                          if (needs_grad(pred)) {
                            float* g = grad_accumulation_buffer(pred);
                            for (std::int64_t i = 0; i < n; ++i) g[i] += gy * 2.0f * (pd[i] - td[i]) / n;
                          }
                          if (needs_grad(target)) {
                            float* g = grad_accumulation_buffer(target);
                            for (std::int64_t i = 0; i < n; ++i) g[i] -= gy * 2.0f * (pd[i] - td[i]) / n;
                          }
                        });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [N,C], got " + shape_str(logits.shape()));
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw ArgumentError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(n) + " rows");
  }
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= c) {
      throw ArgumentError("cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                          std::to_string(i) + " outside [0," + std::to_string(c) + ")");
    }
  }
  std::vector<float> probs(static_cast<std::size_t>(n) * c);
  const float* xd = logits.data();
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* row = xd + static_cast<std::size_t>(i) * c;
    float mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    for (int j = 0; j < c; ++j)
      probs[static_cast<std::size_t>(i) * c + j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / z);
    loss += std::log(z) - (static_cast<double>(row[labels[i]]) - mx);
  }
  loss /= n;
  return make_op_result({1}, {static_cast<float>(loss)}, "cross_entropy", {logits},
                        [logits, labels, n, c, probs = std::move(probs)](const TensorImpl& o) {
                          if (!needs_grad(logits)) return;
                          float* g = grad_accumulation_buffer(logits);
                          const float gy = o.grad[0];
                          for (int i = 0; i < n; ++i)
                            for (int j = 0; j < c; ++j) {
                              const float p = probs[static_cast<std::size_t>(i) * c + j];
                              const float onehot = (j == labels[i]) ? 1.0f : 0.0f;
                              g[static_cast<std::size_t>(i) * c + j] += gy * (p - onehot) / n;
                            }
                        });
}

Tensor gradient_reverse(const Tensor& x, float coeff) {
  if (coeff < 0.0f) throw ArgumentError("gradient_reverse: coeff must be >= 0, got " + std::to_string(coeff));
  std::vector<float> out(x.data(), x.data() + x.size());
  return make_op_result(x.shape(), std::move(out), "gradient_reverse", {x},
                        [x, coeff](const TensorImpl& o) {
                          if (!needs_grad(x)) return;
                          float* g = grad_accumulation_buffer(x);
                          for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= coeff * o.grad[i];
                        });
}

Tensor extract_patches(const Tensor& x, int ph, int pw) {
  if (x.rank() != 2) throw ShapeError("extract_patches expects rank 2, got " + shape_str(x.shape()));
  if (ph < 1 || pw < 1) throw ArgumentError("extract_patches: patch extents must be >= 1");
  const int h = x.dim(0), w = x.dim(1);
  const int gh = h / ph, gw = w / pw;
  if (gh < 1 || gw < 1) {
    throw ArgumentError("extract_patches: input " + shape_str(x.shape()) + " smaller than one " +
                        std::to_string(ph) + "x" + std::to_string(pw) + " patch");
  }
  const int n = gh * gw, d = ph * pw;
  std::vector<float> out(static_cast<std::size_t>(n) * d);
  const float* xd = x.data();
  for (int r = 0; r < gh; ++r)
    for (int c = 0; c < gw; ++c) {
      float* dst = out.data() + static_cast<std::size_t>(r * gw + c) * d;
      for (int i = 0; i < ph; ++i)
        for (int j = 0; j < pw; ++j)
          dst[i * pw + j] = xd[static_cast<std::size_t>(r * ph + i) * w + (c * pw + j)];
    }
  return make_op_result({n, d}, std::move(out), "extract_patches", {x},
                        [x, ph, pw, w, gh, gw, d](const TensorImpl& o) {
                          if (!needs_grad(x)) return;
                          float* g = grad_accumulation_buffer(x);
                          for (int r = 0; r < gh; ++r)
                            for (int c = 0; c < gw; ++c) {
                              const float* src = o.grad.data() + static_cast<std::size_t>(r * gw + c) * d;
                              for (int i = 0; i < ph; ++i)
                                for (int j = 0; j < pw; ++j)
                                  g[static_cast<std::size_t>(r * ph + i) * w + (c * pw + j)] += src[i * pw + j];
                            }
                        });
}

}  // namespace respiro::core
