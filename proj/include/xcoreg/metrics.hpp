// Groupwise similarity metrics. Every metric is maximized and reports, next
// to its value, the derivative with respect to each warped sample intensity;
// parameter_gradient() turns that into transform-parameter gradients.
#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "xcoreg/density.hpp"
#include "xcoreg/transform.hpp"
#include "xcoreg/volume.hpp"

namespace xcoreg {

enum class MetricKind { xmetric, xmetric_gt, congealing, ape, cte, vi, gmm };

/// Keys: "xmetric" | "xmetric-gt" | "cg" | "ape" | "cte" | "vi" | "gmm".
MetricKind parse_metric_kind(const std::string& key);
std::string to_string(MetricKind kind);

/// Warped intensities of the overlap samples for one iteration. Built once
/// and shared by every metric.
struct MetricContext {
  int dim = 2;
  std::size_t num_images = 0;
  /// Samples drawn before overlap masking.
  std::size_t drawn = 0;
  /// Common-grid flat index and coordinate of each overlap sample.
  std::vector<std::size_t> sample_index;
  std::vector<Vec> points;
  /// samples x N resampled intensities u_{x,j}.
  Eigen::MatrixXd intensity;
  /// Image gradient at phi_j(x), [s * N + j].
  std::vector<Vec> spatial_gradient;
  /// Input point of the last (optimized) stage of chain j, [s * N + j].
  std::vector<Vec> stage_input;
  std::vector<Binning> binning;

  std::size_t samples() const { return points.size(); }
};

/// Resamples every image at the given common-grid indices and keeps the
/// samples inside all images.
MetricContext build_context(std::span<const Volume> images, std::span<const TransformChain> transforms,
                            const Grid& common, std::span<const std::size_t> indices,
                            std::span<const Binning> binning);

struct MetricValue {
  double value = 0.0;
  /// d value / d u_{x,j}, samples x N.
  Eigen::MatrixXd sensitivity;
  /// d value / d params of the last stage of each chain; filled by parameter_gradient().
  std::vector<Eigen::VectorXd> gradient;
};

/// Chain rule through the image gradient and the transform Jacobian.
std::vector<Eigen::VectorXd> parameter_gradient(const MetricContext& ctx, const Eigen::MatrixXd& sensitivity,
                                                std::span<const TransformChain> transforms);

/// Sum over images of I(U_j o phi_j, Z) with gamma held fixed. The common
/// space's gamma rows must be aligned with the context samples.
MetricValue xmetric(const MetricContext& ctx, const CommonSpace& cs);

/// Negated mean stack entropy with a leave-one-out Gaussian estimate over the
/// N intensities at each sample, intensities scaled to [0, 1] by each binning.
/// Throws for N < 2; N < 8 gives unreliable stacks.
MetricValue congealing(const MetricContext& ctx, double sigma = 0.05);
inline constexpr std::size_t kCongealingReliableGroupSize = 8;

/// Sum over image pairs of 2D Parzen mutual information.
MetricValue ape(const MetricContext& ctx);

/// Template is the first principal component of the N intensities (scaled to
/// [0, 1], centered per image); value = -sum_j H(U_j | template). The
/// gradient differentiates through the eigenvector as well.
MetricValue cte(const MetricContext& ctx);

/// First principal direction (unit, sign fixed so its entries sum >= 0) and
/// per-sample template values used by cte().
struct PcaTemplate {
  Eigen::VectorXd direction;
  double eigenvalue = 0.0;
  Eigen::VectorXd values;
};
PcaTemplate pca_template(const MetricContext& ctx);

/// Negated mean intensity variance across the group.
MetricValue vi(const MetricContext& ctx);

/// Gaussian mixture over N-dimensional intensity tuples.
struct GmmModel {
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
  /// Components reset to the pooled covariance so far.
  int resets = 0;

  int components() const { return static_cast<int>(weights.size()); }
};

/// Deterministic start: samples sorted by mean scaled intensity and split
/// into K equal groups.
GmmModel gmm_init(const Eigen::MatrixXd& data, int components);

/// Mean log-likelihood per tuple (rows of data).
double gmm_log_likelihood(const Eigen::MatrixXd& data, const GmmModel& model);

/// One EM iteration with covariance ridge 1e-6 * mean data variance.
GmmModel gmm_em_step(const Eigen::MatrixXd& data, const GmmModel& model);

/// Mean log-likelihood of the context tuples and its intensity derivative.
MetricValue gmm_loglik(const MetricContext& ctx, const GmmModel& model);

}  // namespace xcoreg
