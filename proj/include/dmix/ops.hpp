#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dmix/tensor.hpp"

// Differentiable operations on rank-1/rank-2 tensors. Rank-1 inputs act as a
// single row. Every op throws DimensionError on incompatible shapes.
namespace dmix::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
// a x b^T without materialising the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a (m x n) + row (n), broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
// a (m x n) scaled row-wise by col (m).
Tensor mul_col(const Tensor& a, const Tensor& col);

Tensor relu(const Tensor& a);

// Row-wise softmax with max subtraction. When causal, row i only spans
// columns 0..i and the remaining entries are exactly zero.
Tensor softmax_rows(const Tensor& a, bool causal = false);
Tensor log_softmax_rows(const Tensor& a);
// Softmax of a vector (or of each row of a matrix).
Tensor softmax(const Tensor& v);

// -log softmax(logits)[target] for a single logit vector.
Tensor cross_entropy(const Tensor& logits, std::size_t target);
// Mean over rows of the per-row cross-entropy.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets);

// Parameter-free layer normalisation of every row.
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5);

// 1 x n mean over rows.
Tensor mean_rows(const Tensor& a);
// Row i holds the mean of rows 0..i.
Tensor prefix_mean_rows(const Tensor& a);

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

}  // namespace dmix::ops
