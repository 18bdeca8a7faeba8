// Intensity binning, cubic B-spline Parzen windows, class-conditional
// appearance models, joint class-intensity tables and information measures.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "xcoreg/bspline.hpp"
#include "xcoreg/volume.hpp"

namespace xcoreg {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Maps intensities to continuous bin coordinates in [0, L-1].
struct Binning {
  int levels = 64;
  double lo = 0.0;
  double hi = 1.0;
  /// Kernel bandwidth in bin units.
  double bandwidth = 1.0;

  static Binning from_range(int levels, double lo, double hi, double bandwidth = 1.0);
  /// Range taken from the volume's min/max; a flat volume gets a unit range.
  static Binning from_volume(const Volume& v, int levels, double bandwidth = 1.0);

  double coordinate(double u) const;
  /// d coordinate / du, zero where the coordinate is clamped.
  double slope(double u) const;
};

/// Throws InvalidArgument when L < 2, hi <= lo or h is outside (0, 3].
void validate(const Binning& b);

/// Kernel weights of one sample over the bins it touches.
struct ParzenStencil {
  static constexpr int kMax = 16;
  int first = 0;
  int count = 0;
  double weight[kMax] = {};
  /// d weight / d coordinate.
  double deriv[kMax] = {};
};

ParzenStencil parzen_stencil(const Binning& b, double coordinate);

/// Per-class intensity distributions f_k(mu) of one image, K x L.
struct AppearanceTable {
  Eigen::MatrixXd f;
  /// Classes that had no weight and were replaced by a uniform row.
  std::vector<bool> empty;

  int classes() const { return static_cast<int>(f.rows()); }
  int empty_classes() const;
};

/// One appearance row from per-sample weights. Returns a uniform row and sets
/// `empty` when every weight is zero.
Eigen::VectorXd appearance_from_posterior(std::span<const double> intensities, std::span<const double> weights,
                                          const Binning& binning, bool* empty = nullptr);

/// All K rows: intensities has one entry per sample, gamma is samples x K.
AppearanceTable appearance_model(std::span<const double> intensities, const RowMatrix& gamma,
                                 const Binning& binning);

/// Ground-truth appearance model from a label map (labels in [0, K)).
AppearanceTable appearance_from_labels(const Volume& v, std::span<const int> labels, int classes,
                                       const Binning& binning);

/// Joint class-intensity distribution p(mu, k), stored K x L.
struct JointTable {
  Eigen::MatrixXd p;
  /// Sum of the unnormalized Parzen accumulator.
  double normalizer = 0.0;

  Eigen::VectorXd class_marginal() const { return p.rowwise().sum(); }
  Eigen::VectorXd level_marginal() const { return p.colwise().sum().transpose(); }
};

/// Throws InvalidArgument for an empty sample set.
JointTable joint_table(std::span<const double> intensities, const RowMatrix& gamma, const Binning& binning);

/// Mutual information (nats) of a normalized 2D table; zero cells contribute 0.
double mutual_information(const Eigen::MatrixXd& p);

/// d MI / d A for the unnormalized accumulator A with p = A / sum(A):
/// (ln(p / (p_row p_col)) - MI) / sum(A). Zero cells get zero.
Eigen::MatrixXd mutual_information_gradient(const Eigen::MatrixXd& p, double normalizer);

/// Shannon entropy in nats with 0 ln 0 = 0.
double entropy(std::span<const double> dist);
double entropy(const Eigen::VectorXd& dist);

/// Latent common anatomy: per-point class probabilities and prior proportions.
struct CommonSpace {
  int classes = 0;
  RowMatrix gamma;  // points x K
  Eigen::VectorXd pi;
};

/// pi = 1/K; gamma = softmax of i.i.d. standard normals, deterministic in seed.
CommonSpace init_common_space(const Grid& grid, int classes, std::uint64_t seed);

struct PosteriorResult {
  RowMatrix gamma;
  /// Samples whose likelihood vanished for every class; they received pi.
  int fallback_samples = 0;
};

/// Posterior of the common anatomy at each sample:
/// gamma_k ∝ pi_k prod_j sum_mu beta3(b_j - mu) f_jk(mu), evaluated in log
/// space with a 1e-12 floor. intensities is samples x N.
PosteriorResult posterior_update(std::span<const AppearanceTable> appearance, const Eigen::VectorXd& pi,
                                 const Eigen::MatrixXd& intensities, std::span<const Binning> binning);

/// Prior proportions from posterior rows. Throws InvalidArgument when empty.
Eigen::VectorXd prior_update(const RowMatrix& gamma);

/// Rows = classes, columns = bins.
std::string table_to_csv(const Eigen::MatrixXd& table);

}  // namespace xcoreg
