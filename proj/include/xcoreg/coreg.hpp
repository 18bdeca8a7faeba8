// Groupwise registration driver: alternating common-space updates and Adam
// steps on the transforms, multi-resolution scheduling, and the staged rigid
// and motion-correction pipelines built on top of it.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "xcoreg/density.hpp"
#include "xcoreg/error.hpp"
#include "xcoreg/metrics.hpp"
#include "xcoreg/transform.hpp"
#include "xcoreg/volume.hpp"

namespace xcoreg {

/// Optimizer step size per parameter role.
struct StepSizes {
  double translation = 1.0;
  double rotation_center = 1.0;
  double rotation = 0.01;
  double matrix = 0.01;
  double displacement = 0.1;

  double operator()(ParamRole role) const;
};

/// One resolution level: images are smoothed by `sigma` voxels, then every
/// `factor`-th voxel is kept. For FFD runs a `ffd_spacing` (mm) that differs
/// from the previous level starts a new FFD stage at identity.
struct PyramidLevel {
  double sigma = 0.0;
  int factor = 1;
  int iterations = 100;
  double ffd_spacing = 0.0;
};

/// Where the posterior of the common anatomy is refreshed each iteration:
/// only at the drawn samples, or at every overlap point. The prior is taken
/// from the drawn samples either way.
enum class GammaUpdate { sample, overlap };
/// Starting common space: Gaussian-softmax noise or exactly uniform.
enum class GammaInit { random, uniform };

struct CoRegConfig {
  int max_iterations = 200;
  double lambda = 0.0;
  StepSizes eta;
  int classes = 4;
  int levels = 64;
  double bandwidth = 1.0;
  double sample_rate = 0.1;
  /// Coarse levels sample at least this many points (capped at the grid size).
  int min_samples = 1024;
  std::vector<PyramidLevel> pyramid{PyramidLevel{}};
  MetricKind metric = MetricKind::xmetric;
  TransformKind transform = TransformKind::translation;
  bool zero_mean = true;
  std::uint64_t seed = 0;
  int convergence_window = 10;
  double convergence_rtol = 1e-5;
  GammaUpdate gamma_update = GammaUpdate::overlap;
  GammaInit gamma_init = GammaInit::random;
  /// Draw the joint-table sample independently of the appearance sample.
  bool independent_joint_sample = false;
  double cg_sigma = 0.05;
};

/// Throws InvalidArgument on an inconsistent configuration.
void validate(const CoRegConfig& cfg);

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;

  explicit AdamState(std::size_t n = 0) : m(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))),
                                          v(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))) {}
};

/// One bias-corrected Adam update, params -= eta_i * m_hat / (sqrt(v_hat) + eps).
/// `eta` holds one step size per parameter. Throws NumericalError on a
/// non-finite gradient.
void adam_step(std::span<double> params, std::span<const double> gradient, AdamState& state,
               std::span<const double> eta);

struct IterationRecord {
  int iteration = 0;
  int level = 0;
  std::size_t overlap_samples = 0;
  double metric = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  Eigen::VectorXd pi;
  double seconds = 0.0;
  /// X-metric at the current transforms before and after the common-space
  /// update; NaN for metrics without a common space.
  double metric_before_update = 0.0;
  double metric_after_update = 0.0;
};

struct IterationTrace {
  std::vector<IterationRecord> records;

  std::size_t size() const { return records.size(); }
  std::vector<double> losses() const;
};

/// True once the mean loss over the last `window` iterations differs from the
/// mean over the `window` iterations before it by less than `rtol` relative.
bool check_convergence(std::span<const double> losses, int window, double rtol);

/// State handed to the observer after every iteration.
struct IterationView {
  const IterationRecord& record;
  const MetricContext& context;
  /// Appearance tables used for the update (empty for metrics without one).
  std::span<const AppearanceTable> appearance;
  /// Posterior rows aligned with the context samples.
  const RowMatrix& sample_gamma;
  const CommonSpace& common;
  std::span<const TransformChain> transforms;
};

struct RunOptions {
  /// Starting transforms. Empty means identity chains of the config's kind.
  std::vector<TransformChain> initial;
  /// When false, the last stage of `initial` is optimized in place.
  bool append_stage = true;
  /// Fixed appearance model (required by the xmetric-gt metric).
  std::vector<AppearanceTable> fixed_appearance;
  /// Common grid; defaults to the first image's grid.
  const Grid* common_grid = nullptr;
  /// Common space to continue from (used when its K matches the config).
  CommonSpace initial_common;
  Grid initial_common_grid;
  std::function<void(const IterationView&)> observer;
};

struct RegistrationResult {
  std::vector<TransformChain> transforms;
  CommonSpace common;
  Grid common_grid;
  IterationTrace trace;
  /// Samples that fell back to pi because every class likelihood vanished.
  long posterior_fallbacks = 0;
  /// Appearance classes replaced by a uniform row over the run.
  long empty_class_events = 0;
  /// GMM components reset to the pooled covariance.
  int gmm_resets = 0;
};

/// Raised when a run aborts; carries the trace recorded so far.
class RegistrationError : public NumericalError {
 public:
  RegistrationError(const std::string& what, IterationTrace trace)
      : NumericalError(what), trace_(std::move(trace)) {}
  const IterationTrace& trace() const { return trace_; }

 private:
  IterationTrace trace_;
};

/// Alternating groupwise registration of N >= 2 images sharing a dimension.
RegistrationResult coregister(std::span<const Volume> images, const CoRegConfig& cfg, RunOptions opts = {});

/// Translation stage followed by a rigid stage initialized from it.
struct StagedRigidConfig {
  CoRegConfig translation;
  CoRegConfig rigid;
};
StagedRigidConfig default_staged_rigid(MetricKind metric = MetricKind::xmetric, int classes = 8);
RegistrationResult staged_rigid(std::span<const Volume> images, const StagedRigidConfig& cfg,
                                const RunOptions& opts = {});

/// Gaussian prefilter, translation, rigid and one coarse FFD stage, all with
/// the zero-mean constraint. Needs N >= 3 frames.
struct MotionConfig {
  double prefilter_sigma = 1.0;
  CoRegConfig translation;
  CoRegConfig rigid;
  CoRegConfig ffd;
  bool run_ffd = true;
};
MotionConfig default_motion(MetricKind metric = MetricKind::xmetric, int classes = 4);
RegistrationResult motion_correct(std::span<const Volume> sequence, const MotionConfig& cfg,
                                  const RunOptions& opts = {});

/// Nearest-point transfer of gamma rows between two grids over the same space.
CommonSpace resample_common(const CommonSpace& cs, const Grid& from, const Grid& to);

}  // namespace xcoreg
