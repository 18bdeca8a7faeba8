// Scalar volumes, multilinear interpolation and coordinate sampling.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xcoreg/grid.hpp"

namespace xcoreg {

/// Scalar image on a regular grid. Intensities are held as float64.
struct Volume {
  Grid grid;
  std::vector<double> data;
  std::string modality;

  Volume() = default;
  Volume(Grid g, std::vector<double> values, std::string modality_id = {});
  /// Constant-valued volume.
  Volume(Grid g, double fill, std::string modality_id = {});

  double operator[](std::size_t i) const { return data[i]; }
  double& operator[](std::size_t i) { return data[i]; }
  double min() const;
  double max() const;
};

/// Throws InvalidArgument when the data length or finiteness invariant fails.
void validate(const Volume& v);

/// Result of sampling a volume at a physical point.
struct Interpolated {
  double value = 0.0;
  bool inside = false;
  /// Derivative of the interpolant with respect to physical coordinates.
  Vec gradient = Vec::Zero();
};

/// Multilinear interpolation. Points outside the grid's bounding box give
/// value 0, zero gradient and inside=false.
Interpolated interpolate(const Volume& v, const Vec& p);

/// Value-only variant of interpolate(); returns `outside` for out-of-bounds points.
double interpolate_value(const Volume& v, const Vec& p, double outside = 0.0);

/// Value of the voxel nearest to p, or `outside` beyond the grid.
double nearest_value(const Volume& v, const Vec& p, double outside = 0.0);

/// Coordinate sample in common space.
struct SampleSet {
  std::vector<std::size_t> indices;  // flat grid indices, ascending
  std::vector<Vec> points;
  /// inside[j][s]: whether phi_j(points[s]) lands inside image j. Filled by
  /// the caller that warps the samples; empty after draw_samples().
  std::vector<std::vector<bool>> inside;

  std::size_t size() const { return points.size(); }
  /// Whether the sample lies in the overlap region (inside for every image).
  bool in_overlap(std::size_t s) const;
};

/// Uniform random subset, without replacement, of ceil(rate * |grid|) grid
/// points in ascending index order. rate == 1 returns every point.
SampleSet draw_samples(const Grid& grid, double rate, std::uint64_t seed);

/// Separable Gaussian smoothing, sigma in voxels along every axis. Borders
/// replicate the edge value; sigma <= 0 returns a copy.
Volume gaussian_smooth(const Volume& v, double sigma_voxels);

/// Keeps every `factor`-th voxel along each axis. The physical extent start
/// is unchanged; spacing is multiplied by `factor`.
Volume downsample(const Volume& v, int factor);

/// Grid obtained by downsample() without touching data.
Grid downsample_grid(const Grid& g, int factor);

}  // namespace xcoreg
