#pragma once

#include <cstddef>
#include <cstdint>

#include "physattn/mesh.hpp"
#include "physattn/tensor.hpp"

namespace physattn {

struct PermeabilityOptions {
  std::size_t smoothing_passes = 4;
  double high = 12.0;
  double low = 3.0;
};

/// Two-valued porous medium on a resolution×resolution grid: seeded white
/// noise, smoothed by 3x3 box-filter passes (edge cells average their
/// in-bounds neighbours), thresholded at the median. Cells at or above the
/// median get `high`, the rest `low`.
Tensor generate_permeability(std::uint64_t seed, std::size_t resolution, const PermeabilityOptions& options = {});

struct DarcySolution {
  Tensor pressure;  // same grid as the permeability, zero on the boundary
  std::size_t iterations = 0;
  double relative_residual = 0.0;
};

/// Solves −∇·(a∇p) = f on the unit square with p = 0 on the boundary. Nodes
/// sit at spacing h = 1/(R−1); the 5-point scheme uses harmonic means of the
/// nodal permeability on each face. Conjugate gradients run until the true
/// residual ‖Ap − f‖/‖f‖ is at most `tolerance`; more than 10·unknowns
/// iterations raises NumericError.
DarcySolution solve_darcy(const Tensor& permeability, double forcing = 1.0, double tolerance = 1e-10);

/// ‖Ap − f‖/‖f‖ over interior nodes, evaluated from the assembled stencil
/// independently of the solver (0 when f = 0 and p = 0).
double darcy_residual(const Tensor& permeability, const Tensor& pressure, double forcing = 1.0);

/// Grid sample with coords (x, y) = (col, row)/(R−1), observed permeability
/// and target pressure, for forcing f = 1.
MeshSample make_darcy_sample(std::uint64_t seed, std::size_t resolution);

/// Uniform random subset of round(keep_fraction·N) points without
/// replacement, kept in their original order. The result is unstructured.
MeshSample resample_mesh(const MeshSample& sample, double keep_fraction, std::uint64_t seed);

}  // namespace physattn
