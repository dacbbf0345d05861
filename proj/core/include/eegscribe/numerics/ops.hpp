#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "eegscribe/numerics/graph.hpp"

namespace eegscribe::nx {

// Elementwise arithmetic. Operands must share a shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var square(Var a);

/// Sum (or mean) of all elements, as a 1-element tensor.
Var sum(Var a);
Var mean(Var a);

Var relu(Var x);

Var reshape(Var x, Shape shape);
/// Axis permutation; `axes[i]` names the input axis that becomes output axis i.
Var permute(Var x, std::vector<std::size_t> axes);
/// Concatenation of same-rank tensors along `axis`.
Var concat(std::span<const Var> parts, std::size_t axis);
/// Rows [begin, end) of the leading axis.
Var slice_rows(Var x, std::size_t begin, std::size_t end);

/// x[M×K] · w[K×N]
Var matmul(Var x, Var w);
/// a[M×K] · b[N×K]ᵀ
Var matmul_nt(Var a, Var b);
/// Σ_k a[i,k]·b[i,k] → [M×1]
Var row_dot(Var a, Var b);
/// Each row divided by its Euclidean norm.
Var l2_normalize_rows(Var x);

/// out[b,o] = Σ_i x[b,i]·W[i,o] + bias[o]
Var dense(Var x, Var weight, Var bias);

struct Conv1dOptions {
  std::size_t stride = 1;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;
  std::size_t groups = 1;

  static Conv1dOptions symmetric(std::size_t stride, std::size_t padding) {
    return {stride, padding, padding, 1};
  }
};

/// Cross-correlation of x[B×C_in×T] with kernel[C_out×(C_in/groups)×k] plus
/// bias[C_out]. Output length is floor((T + pads − k)/stride) + 1.
Var conv1d(Var x, Var kernel, Var bias, const Conv1dOptions& options);
Var conv1d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t padding);

/// Mean over the last axis of x[B×C×T] → [B×C].
Var global_avg_pool(Var x);
/// Non-overlapping-or-strided average pooling along the last axis of x[B×C×T].
Var avg_pool1d(Var x, std::size_t kernel, std::size_t stride);

/// Mean over the batch of −log softmax(logits)[label], with max-subtraction.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

/// Row-wise softmax of a [B×K] tensor, outside any graph.
Tensor softmax_rows(const Tensor& logits);

}  // namespace eegscribe::nx
