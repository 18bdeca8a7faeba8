// Parametric spatial transforms from common space to image space.
#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "xcoreg/grid.hpp"

namespace xcoreg {

enum class TransformKind { translation, rigid, affine, ffd };

std::string to_string(TransformKind kind);
/// Throws InvalidArgument on unknown names.
TransformKind parse_transform_kind(const std::string& name);

/// Role of a parameter, used to pick per-parameter optimizer step sizes.
enum class ParamRole { translation, rotation_center, rotation, matrix, displacement };

/// Control-point lattice of a cubic B-spline free-form deformation.
struct FfdMesh {
  int dim = 2;
  Index3 dims{1, 1, 1};
  Vec spacing = Vec::Ones();
  Vec origin = Vec::Zero();

  /// Lattice over `grid` with isotropic `spacing_mm`, starting one spacing
  /// before the grid origin so every grid point has full 4^d support.
  static FfdMesh covering(const Grid& grid, double spacing_mm);

  std::size_t size() const;
  std::size_t flatten(const Index3& idx) const;
  Vec node(const Index3& idx) const;
  bool operator==(const FfdMesh& other) const;
};

/// One member of a transform family. Parameters are stored flat so the
/// optimizer can treat every kind uniformly.
///
/// Parameter layouts:
///   translation  [t]                       (d)
///   rigid        [center, angles, t]       (2D: 2+1+2, 3D: 3+3+3)
///                x -> R (x + t - center) + center, R = Rz Ry Rx
///   affine       [A row-major, t]          x -> A x + t
///   ffd          [displacement per node]   node-major, component fastest
class Transform {
 public:
  Transform() = default;

  static Transform identity(TransformKind kind, int dim);
  static Transform translation(int dim, const Vec& offset);
  static Transform rigid(int dim, const Vec& center, const Vec& angles, const Vec& offset);
  static Transform affine(int dim, const Eigen::Matrix3d& matrix, const Vec& offset);
  static Transform ffd(const FfdMesh& mesh);

  TransformKind kind() const { return kind_; }
  int dim() const { return dim_; }
  std::size_t num_params() const { return params_.size(); }
  const std::vector<double>& params() const { return params_; }
  std::vector<double>& params() { return params_; }
  const FfdMesh& mesh() const { return mesh_; }
  std::vector<ParamRole> param_roles() const;

  Vec apply(const Vec& x) const;

  /// Dense d x n_params derivative of apply(x) with respect to the parameters.
  Eigen::MatrixXd jacobian_wrt_params(const Vec& x) const;

  /// grad += J(x)^T * force, touching only the parameters that influence x.
  void accumulate_param_gradient(const Vec& x, const Vec& force, std::span<double> grad) const;

  // Linear kinds only.
  Eigen::Matrix3d linear_part() const;
  Vec translation_part() const;  // apply(0)

  // Rigid accessors.
  int num_angles() const { return dim_ == 2 ? 1 : 3; }
  Vec rigid_center() const;
  Vec rigid_angles() const;
  Vec rigid_offset() const;

 private:
  TransformKind kind_ = TransformKind::translation;
  int dim_ = 2;
  std::vector<double> params_{0.0, 0.0};
  FfdMesh mesh_;
};

/// Rotation R = Rz(a2) Ry(a1) Rx(a0) in 3D; rotation in the (axis0, axis1)
/// plane in 2D.
Eigen::Matrix3d rotation_matrix(int dim, const Vec& angles);
/// Angles reproducing a proper rotation matrix.
Vec rotation_angles(int dim, const Eigen::Matrix3d& r);

/// Rigid transform with the same action as a translation.
Transform rigid_from_translation(const Transform& t, const Vec& center);
/// Affine transform with the same action as a translation or rigid map.
Transform affine_from_linear(const Transform& t);

/// Sequence of transforms applied in order: stages[0] first.
struct TransformChain {
  std::vector<Transform> stages;

  TransformChain() = default;
  explicit TransformChain(Transform t) { stages.push_back(std::move(t)); }

  Vec apply(const Vec& x) const;
  /// Point fed to the last stage, i.e. the output of all earlier stages.
  Vec last_stage_input(const Vec& x) const;
  Transform& last() { return stages.back(); }
  const Transform& last() const { return stages.back(); }
};

/// a(b(x)); no parametric composition.
Vec compose_eval(const Transform& a, const Transform& b, const Vec& x);

/// Bending energy of an FFD and its gradient. Linear kinds yield zero.
struct BendingEnergy {
  double value = 0.0;
  std::vector<double> gradient;
};

/// Mean over interior lattice nodes of the thin-plate energy
/// sum_a (d2u/dx_a^2)^2 + 2 sum_{a<b} (d2u/dx_a dx_b)^2, summed over
/// displacement components, evaluated on the B-spline lattice.
BendingEnergy bending_energy(const Transform& t);

/// Zero-mean projection of a homogeneous transform group.
///
/// Translation, affine and FFD members (sharing one lattice) have the group
/// mean displacement subtracted exactly, so that (1/N) sum_j phi_j(x) = x.
/// Rigid members are right-composed with one rigid map that removes the mean
/// rotation and makes the mean map fix the domain center; what remains is the
/// symmetric part of the mean rotation, second order in the rotation spread.
/// Throws InvalidArgument for mixed kinds or mismatched lattices.
std::vector<Transform> project_zero_mean(std::vector<Transform> members, const Grid& domain);

/// Max over the domain corners of |(1/N) sum_j phi_j(x) - x|.
double mean_displacement_residual(std::span<const Transform> members, const Grid& domain);

}  // namespace xcoreg
