// Regular sampling grids in physical (millimeter) coordinates.
#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace xcoreg {

/// Physical point or vector. 2D data uses the first two components and keeps
/// the third at zero.
using Vec = Eigen::Vector3d;
using Index3 = std::array<int, 3>;

/// Regular grid: x_phys = origin + index * spacing, row-major with the last
/// axis varying fastest.
struct Grid {
  int dim = 2;
  Index3 dims{1, 1, 1};
  Vec spacing = Vec::Ones();
  Vec origin = Vec::Zero();

  /// Validating constructor. Throws InvalidArgument unless dim is 2 or 3,
  /// every extent is >= 2 and every spacing is strictly positive.
  static Grid make(const std::vector<int>& dims, const std::vector<double>& spacing,
                   const std::vector<double>& origin = {});

  std::size_t size() const;
  std::size_t flatten(const Index3& idx) const;
  Index3 unflatten(std::size_t flat) const;
  Vec point(const Index3& idx) const;
  Vec point(std::size_t flat) const { return point(unflatten(flat)); }

  /// Continuous voxel coordinate of a physical point.
  Vec continuous_index(const Vec& p) const;

  /// The 2^dim corner points of the bounding box.
  std::vector<Vec> corners() const;
  Vec center() const;
  /// Physical extent (last point minus first point) per axis.
  Vec extent() const;

  bool operator==(const Grid& other) const;
};

/// Throws InvalidArgument when the grid violates its invariants.
void validate(const Grid& grid);

}  // namespace xcoreg
