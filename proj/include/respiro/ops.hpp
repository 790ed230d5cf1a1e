#pragma once

#include <utility>
#include <vector>

#include "respiro/tensor.hpp"

// Differentiable operations over Tensor. Every op builds its backward closure
// when gradients are enabled and any input participates in the graph.
//
// Shape conventions:
//   - conv1d input is [C,L] or batched [N,C,L]; weight [C_out,C_in,K].
//   - conv_transpose2d input is [C,H,W] or [N,C,H,W]; weight [C_in,C_out,Kh,Kw].
//   - linear applies to the last axis of any rank >= 1.

namespace respiro::core {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);

// ---- activations ----
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float negative_slope);
Tensor tanh_op(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor swish(const Tensor& x);  // x * sigmoid(x)

// Gated unit over the channel axis: input [2C,L] or [N,2C,L], output
// tanh(first half) * sigmoid(second half), channel axis halved.
Tensor gated_activation(const Tensor& h);

// ---- shape ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // rank-2 [M,N] -> [N,M]
// Columns [start, start+len) of the last axis.
Tensor slice_last(const Tensor& x, int start, int len);
// Concatenate along the last axis; all other extents must match.
Tensor concat_last(const std::vector<Tensor>& xs);
// Stack rank-1 [D] tensors into [N,D].
Tensor stack_rows(const std::vector<Tensor>& rows);
// Keep the leading [h,w] corner of the trailing two axes (right-trim).
Tensor crop_hw(const Tensor& x, int h, int w);

// ---- broadcast adds ----
// x [C,L] + v [C], or x [N,C,L] + v [N,C] (per-sample channel bias).
Tensor add_per_channel(const Tensor& x, const Tensor& v);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K]x[K,N], or batched [B,M,K]x[B,K,N]
// y = x . w^T + bias over the last axis; bias may be undefined for none.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// ---- convolutions ----
Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int dilation, int padding);
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight,
                        std::pair<int, int> stride);

// ---- normalization / attention ----
Tensor softmax_last(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);
// Scaled dot-product attention for one head: q,k,v are [T,D]; the score
// matrix is softmax(q.k^T / sqrt(D)).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

// ---- reductions / losses ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_rows(const Tensor& x);  // [T,D] -> [D]
Tensor mse_loss(const Tensor& pred, const Tensor& target);
// Mean over the batch of -log softmax(logits)[label]; logits [N,C].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Identity forward; backward multiplies the upstream gradient by -coeff.
Tensor gradient_reverse(const Tensor& x, float coeff);

// Non-overlapping [ph,pw] patches of a [H,W] matrix, row-major over the
// patch grid; trailing rows/cols that do not fill a whole patch are dropped.
// Output is [n_patches, ph*pw].
Tensor extract_patches(const Tensor& x, int ph, int pw);

}  // namespace respiro::core
