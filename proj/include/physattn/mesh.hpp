#pragma once

#include <cstddef>
#include <optional>

#include "physattn/grid.hpp"
#include "physattn/tensor.hpp"

namespace physattn {

/// One discretized PDE instance: point coordinates, optional observed input
/// fields and target fields, all with one row per mesh point.
struct MeshSample {
  Tensor coords;                   // N×C_g, inside the unit cube
  std::optional<Tensor> observed;  // N×C_u
  Tensor target;                   // N×C_out
  /// Set for structured samples, whose points are stored row-major.
  std::optional<GridShape> grid;

  std::size_t points() const { return coords.rows(); }
  std::size_t observed_dim() const { return observed ? observed->cols() : 0; }
};

}  // namespace physattn
