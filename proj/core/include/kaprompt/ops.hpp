#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kaprompt/tensor.hpp"

// Differentiable operations. Each one records onto the active GradientTape
// when at least one input is taped; otherwise it is a pure value computation.
// Shape mismatches throw DimensionError naming the operation and both shapes.
namespace kaprompt::ops {

inline constexpr double kNormEpsilon = 1e-12;

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise, equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

// Adds a length-n vector to every row of an [m x n] matrix.
Tensor add_row_vector(const Tensor& m, const Tensor& v);

// Stacks matrices (or vectors, as single rows) with equal column counts.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor reshape(const Tensor& a, Shape shape);

Tensor softmax_rows(const Tensor& a);
// f_n: divides every row by its L2 norm. A row with norm below kNormEpsilon
// throws DegenerateVectorError naming the row.
Tensor l2_normalize_rows(const Tensor& a);
// Row-wise layer normalization with affine gamma/beta (length = cols).
Tensor layer_norm_rows(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);

Tensor exp(const Tensor& a);
// min(a, 0) elementwise.
Tensor min_with_zero(const Tensor& a);
// tanh approximation of GELU.
Tensor gelu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

// <a,b>/(|a||b|) for two vectors of equal length.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// -log softmax(logits)[label], max-subtracted.
Tensor cross_entropy(const Tensor& logits, std::size_t label);

}  // namespace kaprompt::ops
