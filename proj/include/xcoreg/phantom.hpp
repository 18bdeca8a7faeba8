// Synthetic phantoms, random misalignments and contrast-varying sequences
// with full ground truth.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xcoreg/eval.hpp"
#include "xcoreg/transform.hpp"
#include "xcoreg/volume.hpp"

namespace xcoreg {

/// Tissue phantom: an elliptical body (label 0 outside it) split into K-1
/// smooth random regions, imaged by several modalities that assign the K
/// labels different, generally order-reversing, mean intensities.
struct PhantomSpec {
  std::vector<int> dims{128, 128};
  std::vector<double> spacing{1.0, 1.0};
  int classes = 4;
  int modalities = 3;
  /// Smoothing (voxels) of the noise fields whose argmax defines the regions.
  double blob_sigma = 6.0;
  /// Body semi-axes as a fraction of the grid extent.
  double body_radius = 0.38;
  /// Peak relative amplitude of a smooth multiplicative bias field; 0 = off.
  double bias = 0.0;
  std::uint64_t seed = 0;
};

struct Phantom {
  Grid grid;
  std::vector<int> labels;
  Volume foreground;
  /// Noise-free image per modality.
  std::vector<Volume> clean;
  /// class_means[m][k]: mean intensity of label k in modality m.
  std::vector<std::vector<double>> class_means;
};

Phantom make_phantom(const PhantomSpec& spec);

struct MisalignmentSpec {
  TransformKind kind = TransformKind::rigid;
  double max_angle_deg = 15.0;
  double max_translation = 20.0;
  double ffd_spacing = 32.0;
  /// Bound on every FFD control-point displacement component (mm).
  double ffd_max_displacement = 4.0;
  bool zero_mean = true;
};

/// N random transforms within the bounds (rotations about the grid center).
std::vector<TransformChain> make_misalignment(const MisalignmentSpec& spec, const Grid& grid, std::size_t n,
                                              std::uint64_t seed);

struct SyntheticCase {
  std::vector<Volume> images;
  GroundTruth truth;
};

/// Image j = clean[j] sampled at misalignment[j](y) plus Gaussian noise;
/// points mapped off the phantom read the label-0 intensity.
SyntheticCase make_case(const Phantom& phantom, std::span<const Volume> clean,
                        std::span<const double> background, std::span<const TransformChain> misalignment,
                        double noise, std::uint64_t seed);

/// Convenience: one image per modality of the phantom.
SyntheticCase make_case(const Phantom& phantom, std::span<const TransformChain> misalignment, double noise,
                        std::uint64_t seed);

/// Contrast-enhanced cardiac-like sequence: background, body, myocardium ring
/// and blood pool, with per-frame intensity curves, breathing-like bulk
/// translation and a small elastic FFD per frame.
struct SequenceSpec {
  std::vector<int> dims{96, 96};
  std::vector<double> spacing{1.0, 1.0};
  int frames = 20;
  double noise = 0.02;
  double bulk_amplitude = 5.0;
  double elastic_amplitude = 1.5;
  double ffd_spacing = 24.0;
  std::uint64_t seed = 0;
};

inline constexpr int kMyocardiumLabel = 2;
inline constexpr int kSequenceClasses = 4;

SyntheticCase make_cardiac_sequence(const SequenceSpec& spec);

}  // namespace xcoreg
