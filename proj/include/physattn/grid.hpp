#pragma once

#include <cstddef>

namespace physattn {

/// Extents of a structured grid whose points are stored row-major
/// (index = row * width + col).
struct GridShape {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t points() const { return height * width; }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

}  // namespace physattn
