#pragma once

#include <cstddef>
#include <vector>

#include "physattn/graph.hpp"
#include "physattn/grid.hpp"

// Differentiable operations. Each records its value on the inputs' graph and
// registers the matching backward rule.
namespace physattn {

/// Batched matrix product over the last two axes. Leading (batch) axes must
/// agree or be 1, numpy style.
Var matmul(Var a, Var b);
/// aᵀ·b for matrices a[N, P], b[N, R], without materializing aᵀ.
Var matmul_tn(Var a, Var b);
/// x[N, K]·weight[K, M] + bias[M] as one node.
Var affine(Var x, Var weight, Var bias);
/// Swaps the last two axes.
Var transpose(Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise (Hadamard) product.
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var add_scalar(Var x, double shift);
/// x[..., C] + bias[C], broadcast over leading axes.
Var add_bias(Var x, Var bias);

Var softmax(Var x, int axis);
/// Normalizes over the last axis, then applies gain ⊙ x̂ + bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Tanh approximation of GELU.
Var gelu(Var x);

/// Sums out one axis.
Var reduce_sum(Var x, int axis);
/// Sum of all elements, as a scalar.
Var sum(Var x);
/// x[R, C] with row r divided by d[r].
Var div_rows(Var x, Var d);

/// Columns [begin, begin + count) of a matrix.
Var columns(Var x, std::size_t begin, std::size_t count);
/// Horizontal concatenation of matrices with equal row counts.
Var concat_columns(const std::vector<Var>& parts);

/// Square root of the sum of squares; gradient is x/‖x‖ (zero at the origin).
Var frobenius_norm(Var x);

/// 3x3 neighbourhood gather (im2col) with zero padding on a row-major grid:
/// x[H*W, C] -> [H*W, 9*C], column = (3*(dr+1) + (dc+1)) * C + channel.
Var grid_patches3x3(Var x, GridShape grid);

/// Central-difference spatial gradient on interior grid points:
/// x[H*W, C] -> [(H-2)*(W-2), 2*C]; columns [0,C) hold d/dx (along a row),
/// [C,2C) hold d/dy. Spacings are 1/(W-1) and 1/(H-1) (unit square).
Var grid_central_gradient(Var x, GridShape grid);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var x) { return scale(x, s); }

}  // namespace physattn
