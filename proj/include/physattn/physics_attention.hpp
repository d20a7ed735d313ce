#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <vector>

#include "physattn/graph.hpp"
#include "physattn/grid.hpp"
#include "physattn/tensor.hpp"

namespace physattn {

/// y = x · weight + bias, applied row by row.
struct AffineMap {
  Var weight;
  Var bias;
};

Var apply(const AffineMap& map, Var x);

/// Row-stochastic N×M assignment of mesh points to slices.
struct SliceWeights {
  Var w;
};

/// M×C_h matrix of physics-aware tokens.
struct TokenSet {
  Var z;
};

enum class ProjectorKind { pointwise, stencil3x3 };

/// Maps per-point features to slice logits. A pointwise projector is an
/// affine map C_h -> M; the stencil variant reads the zero-padded 3x3
/// neighbourhood on a structured grid (weight 9*C_h x M).
struct SliceProjector {
  AffineMap map;
  ProjectorKind kind = ProjectorKind::pointwise;
};

/// Query/key/value maps applied to the tokens of every head.
struct TokenMaps {
  AffineMap query;
  AffineMap key;
  AffineMap value;
};

struct AttentionParams {
  /// One projector per head; empty when slices are fixed.
  std::vector<SliceProjector> slice_projectors;
  TokenMaps tokens;
  AffineMap output;
};

/// Geometry-dependent inputs of a Physics-Attention call.
struct SliceContext {
  /// Present for structured inputs; required by the stencil projector.
  std::optional<GridShape> grid;
  /// Fixed N×M slice weights replacing the learned projection (the
  /// regular-squares ablation).
  std::optional<Tensor> fixed_weights;
};

/// Values captured from one head during a forward pass.
struct HeadTrace {
  Tensor slice_weights;  // N×M
  Tensor attention;      // M×M
};

struct AttentionTrace {
  std::vector<HeadTrace> heads;
  /// Concatenated head outputs before the output affine map (N×C).
  Tensor pre_output;
};

/// Softmax over the slice axis of the projected features.
SliceWeights compute_slice_weights(Var x, const SliceProjector& projector,
                                   const std::optional<GridShape>& grid = std::nullopt);

/// z_j = Σ_i w_ij x_i / (Σ_i w_ij + 1e-8).
TokenSet slice_encode(Var x, const SliceWeights& weights);

/// softmax(q kᵀ / sqrt(C_h)) v over the M tokens. When `attention` is non-null
/// it receives the M×M attention matrix.
TokenSet token_attention(const TokenSet& tokens, const TokenMaps& maps, Tensor* attention = nullptr);

/// x'_i = Σ_j w_ij z'_j.
Var deslice(const TokenSet& transited, const SliceWeights& weights);

/// Multi-head Physics-Attention on N×C features: channels are split into
/// `heads` groups, each group is sliced, encoded, attended and desliced on its
/// own, the head outputs are concatenated and passed through the output map.
Var physics_attention(Var x, const AttentionParams& params, std::size_t heads, const SliceContext& context = {},
                      AttentionTrace* trace = nullptr);

/// One-hot assignment of a structured grid to side×side squares (partial
/// squares at the far edges). M = ceil(H/side) * ceil(W/side); slices are
/// numbered row-major over the squares.
Tensor regular_square_slices(const std::optional<GridShape>& grid, std::size_t side = 4);

/// Mean over rows of Σ_j a_j ln(a_j M), with 0·ln 0 = 0.
double attention_kl_from_uniform(const Tensor& attention);

/// CSV with columns point_index, x, y[, z], w_1..w_M.
void write_slice_weights_csv(std::ostream& os, const Tensor& coords, const Tensor& weights);

}  // namespace physattn
