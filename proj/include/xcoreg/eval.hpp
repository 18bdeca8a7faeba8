// Registration accuracy measures against known synthetic misalignments.
#pragma once

#include <span>
#include <vector>

#include "xcoreg/transform.hpp"
#include "xcoreg/volume.hpp"

namespace xcoreg {

/// What a synthetic case knows about itself. Image j shows the phantom at
/// misalignment[j](y) for every image point y, so misalignment[j] o
/// estimated[j] is the identity (up to a common map) after perfect recovery.
struct GroundTruth {
  Grid grid;
  std::vector<TransformChain> misalignment;
  /// Foreground indicator (nonzero = foreground) on the phantom grid.
  Volume foreground;
  /// Label map of every image, in that image's own space.
  std::vector<std::vector<int>> labels;
};

/// Groupwise warping index: mean over images of the RMS, over common-grid
/// points mapped into the foreground, of the group-centered residual
/// displacement. Millimeters. Throws InvalidArgument when some image has no
/// foreground point.
double gwi(const GroundTruth& gt, std::span<const TransformChain> estimated);

/// Groupwise registration error at the given vertices (mm).
double gre(const GroundTruth& gt, std::span<const TransformChain> estimated, std::span<const Vec> vertices);
/// Same, at the phantom grid's corners.
double gre(const GroundTruth& gt, std::span<const TransformChain> estimated);

/// Identity chains, the "no registration" estimate.
std::vector<TransformChain> identity_estimates(std::size_t n, int dim);

/// 2|A and B| / (|A| + |B|); two empty masks give 1.
double dice(std::span<const int> a, std::span<const int> b, int label);

/// Mean Dice over all unordered pairs of label maps for one label.
double pairwise_dsc(std::span<const std::vector<int>> maps, int label);

/// Pulls an image-space label map into common space with nearest-neighbour
/// lookup: out[x] = labels(phi(x)); points mapped outside the image get -1.
std::vector<int> warp_labels(std::span<const int> labels, const Grid& image_grid, const TransformChain& phi,
                             const Grid& common);

/// Resamples a volume into common space (multilinear or nearest voxel);
/// points mapped outside the image read 0.
Volume warp_volume(const Volume& v, const TransformChain& phi, const Grid& common, bool linear = true);

}  // namespace xcoreg
