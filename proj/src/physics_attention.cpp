#include "physattn/physics_attention.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "physattn/error.hpp"
#include "physattn/ops.hpp"

namespace physattn {
namespace {

constexpr double kEmptySliceGuard = 1e-8;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Var apply(const AffineMap& map, Var x) { return affine(x, map.weight, map.bias); }

SliceWeights compute_slice_weights(Var x, const SliceProjector& projector, const std::optional<GridShape>& grid) {
  Var logits;
  if (projector.kind == ProjectorKind::stencil3x3) {
    if (!grid) throw GeometryError("stencil slice projector needs a structured grid");
    logits = apply(projector.map, grid_patches3x3(x, *grid));
  } else {
    logits = apply(projector.map, x);
  }
  return SliceWeights{softmax(logits, 1)};
}

TokenSet slice_encode(Var x, const SliceWeights& weights) {
  if (x.dim(0) != weights.w.dim(0)) {
    throw ShapeError("slice_encode: " + shape_string(x.shape()) + " features vs " + shape_string(weights.w.shape()) +
                     " slice weights");
  }
  Var mass = add_scalar(reduce_sum(weights.w, 0), kEmptySliceGuard);
  return TokenSet{div_rows(matmul_tn(weights.w, x), mass)};
}

TokenSet token_attention(const TokenSet& tokens, const TokenMaps& maps, Tensor* attention) {
  Var q = apply(maps.query, tokens.z);
  Var k = apply(maps.key, tokens.z);
  Var v = apply(maps.value, tokens.z);
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Var attn = softmax(scale(matmul(q, transpose(k)), inv_sqrt_c), 1);
  if (attention) *attention = attn.value();
  return TokenSet{matmul(attn, v)};
}

Var deslice(const TokenSet& transited, const SliceWeights& weights) {
  if (weights.w.dim(1) != transited.z.dim(0)) {
    throw ShapeError("deslice: " + shape_string(weights.w.shape()) + " slice weights vs " +
                     shape_string(transited.z.shape()) + " tokens");
  }
  return matmul(weights.w, transited.z);
}

Var physics_attention(Var x, const AttentionParams& params, std::size_t heads, const SliceContext& context,
                      AttentionTrace* trace) {
  if (x.shape().size() != 2) throw ShapeError("physics_attention: expected N×C features, got " + shape_string(x.shape()));
  const std::size_t channels = x.dim(1);
  if (heads == 0 || channels % heads != 0) {
    throw ConfigError("physics_attention: " + std::to_string(channels) + " channels do not split into " +
                      std::to_string(heads) + " heads");
  }
  const bool fixed = context.fixed_weights.has_value();
  if (!fixed && params.slice_projectors.size() != heads) {
    throw ConfigError("physics_attention: " + std::to_string(params.slice_projectors.size()) +
                      " slice projectors for " + std::to_string(heads) + " heads");
  }
  const std::size_t per_head = channels / heads;

  std::optional<SliceWeights> shared;
  if (fixed) {
    if (context.fixed_weights->rank() != 2 || context.fixed_weights->rows() != x.dim(0)) {
      throw ShapeError("physics_attention: fixed slice weights " + shape_string(context.fixed_weights->shape()) +
                       " do not match " + std::to_string(x.dim(0)) + " points");
    }
    shared = SliceWeights{x.graph->constant(*context.fixed_weights)};
  }

  if (trace) trace->heads.assign(heads, HeadTrace{});
  std::vector<Var> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var xh = columns(x, h * per_head, per_head);
    const SliceWeights w = fixed ? *shared : compute_slice_weights(xh, params.slice_projectors[h], context.grid);
    const TokenSet tokens = slice_encode(xh, w);
    Tensor* attention = trace ? &trace->heads[h].attention : nullptr;
    const TokenSet transited = token_attention(tokens, params.tokens, attention);
    head_outputs.push_back(deslice(transited, w));
    if (trace) trace->heads[h].slice_weights = w.w.value();
  }
  Var merged = heads == 1 ? head_outputs.front() : concat_columns(head_outputs);
  if (trace) trace->pre_output = merged.value();
  return apply(params.output, merged);
}

Tensor regular_square_slices(const std::optional<GridShape>& grid, std::size_t side) {
  if (!grid) throw GeometryError("regular square slices need a structured grid");
  if (side == 0) throw ConfigError("regular square side must be at least 1");
  const std::size_t rows = (grid->height + side - 1) / side;
  const std::size_t cols = (grid->width + side - 1) / side;
  Tensor w({grid->points(), rows * cols});
  for (std::size_t r = 0; r < grid->height; ++r)
    for (std::size_t c = 0; c < grid->width; ++c) w(r * grid->width + c, (r / side) * cols + c / side) = 1.0;
  return w;
}

double attention_kl_from_uniform(const Tensor& attention) {
  if (attention.rank() != 2) throw ShapeError("attention_kl_from_uniform: expected a matrix");
  const std::size_t rows = attention.rows(), m = attention.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double row_sum = 0.0, kl = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double a = attention(r, j);
      if (a < 0.0) throw ContractError("attention_kl_from_uniform: negative attention weight");
      row_sum += a;
      if (a > 0.0) kl += a * std::log(a * static_cast<double>(m));
    }
    if (std::abs(row_sum - 1.0) > 1e-6) throw ContractError("attention_kl_from_uniform: row does not sum to 1");
    total += kl;
  }
  return total / static_cast<double>(rows);
}

void write_slice_weights_csv(std::ostream& os, const Tensor& coords, const Tensor& weights) {
  if (coords.rank() != 2 || weights.rank() != 2 || coords.rows() != weights.rows()) {
    throw ShapeError("write_slice_weights_csv: coords " + shape_string(coords.shape()) + " vs weights " +
                     shape_string(weights.shape()));
  }
  static constexpr const char* kAxes[] = {"x", "y", "z"};
  if (coords.cols() > 3) throw ShapeError("write_slice_weights_csv: at most 3 coordinate columns");
  os << "point_index";
  for (std::size_t d = 0; d < coords.cols(); ++d) os << ',' << kAxes[d];
  for (std::size_t j = 0; j < weights.cols(); ++j) os << ",w_" << (j + 1);
  os << '\n';
  for (std::size_t i = 0; i < coords.rows(); ++i) {
    os << i;
    for (std::size_t d = 0; d < coords.cols(); ++d) os << ',' << format_double(coords(i, d));
    for (std::size_t j = 0; j < weights.cols(); ++j) os << ',' << format_double(weights(i, j));
    os << '\n';
  }
}

}  // namespace physattn
