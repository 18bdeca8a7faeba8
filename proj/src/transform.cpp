#include "xcoreg/transform.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "xcoreg/bspline.hpp"
#include "xcoreg/error.hpp"

namespace xcoreg {

std::string to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::translation: return "translation";
    case TransformKind::rigid: return "rigid";
    case TransformKind::affine: return "affine";
    case TransformKind::ffd: return "ffd";
  }
  return "unknown";
}

TransformKind parse_transform_kind(const std::string& name) {
  if (name == "translation") return TransformKind::translation;
  if (name == "rigid") return TransformKind::rigid;
  if (name == "affine") return TransformKind::affine;
  if (name == "ffd") return TransformKind::ffd;
  throw InvalidArgument("unknown transform kind '" + name + "'");
}

// ---------------------------------------------------------------------------
// FFD lattice

FfdMesh FfdMesh::covering(const Grid& grid, double spacing_mm) {
  if (!(spacing_mm > 0.0)) throw InvalidArgument("FFD spacing must be > 0");
  FfdMesh m;
  m.dim = grid.dim;
  for (int a = 0; a < grid.dim; ++a) {
    const double extent = (grid.dims[a] - 1) * grid.spacing[a];
    m.dims[a] = static_cast<int>(std::floor(extent / spacing_mm + 1e-9)) + 4;
    m.spacing[a] = spacing_mm;
    m.origin[a] = grid.origin[a] - spacing_mm;
  }
  return m;
}

std::size_t FfdMesh::size() const {
  std::size_t n = 1;
  for (int a = 0; a < dim; ++a) n *= static_cast<std::size_t>(dims[a]);
  return n;
}

std::size_t FfdMesh::flatten(const Index3& idx) const {
  std::size_t flat = 0;
  for (int a = 0; a < dim; ++a) flat = flat * static_cast<std::size_t>(dims[a]) + idx[a];
  return flat;
}

Vec FfdMesh::node(const Index3& idx) const {
  Vec p = Vec::Zero();
  for (int a = 0; a < dim; ++a) p[a] = origin[a] + idx[a] * spacing[a];
  return p;
}

bool FfdMesh::operator==(const FfdMesh& o) const {
  if (dim != o.dim) return false;
  for (int a = 0; a < dim; ++a) {
    if (dims[a] != o.dims[a] || spacing[a] != o.spacing[a] || origin[a] != o.origin[a]) return false;
  }
  return true;
}

namespace {

// Tensor-product cubic B-spline support of one point: 4 weights per axis.
struct Support {
  int base[3] = {0, 0, 0};
  double w[3][4] = {};
};

Support ffd_support(const FfdMesh& m, const Vec& x) {
  Support s;
  for (int a = 0; a < m.dim; ++a) {
    const double u = (x[a] - m.origin[a]) / m.spacing[a];
    const int base = static_cast<int>(std::floor(u)) - 1;
    s.base[a] = base;
    for (int k = 0; k < 4; ++k) s.w[a][k] = bspline3(u - (base + k));
  }
  return s;
}

// Calls fn(param_offset_of_node, weight) for each in-lattice supporting node.
template <typename Fn>
void for_each_support(const FfdMesh& m, const Support& s, Fn&& fn) {
  const int d = m.dim;
  const int k2max = d == 3 ? 4 : 1;
  for (int k0 = 0; k0 < 4; ++k0) {
    const int i0 = s.base[0] + k0;
    if (i0 < 0 || i0 >= m.dims[0]) continue;
    for (int k1 = 0; k1 < 4; ++k1) {
      const int i1 = s.base[1] + k1;
      if (i1 < 0 || i1 >= m.dims[1]) continue;
      const double w01 = s.w[0][k0] * s.w[1][k1];
      for (int k2 = 0; k2 < k2max; ++k2) {
        double w = w01;
        std::size_t node;
        if (d == 3) {
          const int i2 = s.base[2] + k2;
          if (i2 < 0 || i2 >= m.dims[2]) continue;
          w *= s.w[2][k2];
          node = (static_cast<std::size_t>(i0) * m.dims[1] + i1) * m.dims[2] + i2;
        } else {
          node = static_cast<std::size_t>(i0) * m.dims[1] + i1;
        }
        if (w != 0.0) fn(node * static_cast<std::size_t>(d), w);
      }
    }
  }
}

void check_dim(int dim) {
  if (dim != 2 && dim != 3) throw InvalidArgument("transform dimensionality must be 2 or 3");
}

Eigen::Matrix3d rotation_derivative(int dim, const Vec& angles, int which) {
  if (dim == 2) {
    const double c = std::cos(angles[0]), s = std::sin(angles[0]);
    Eigen::Matrix3d d = Eigen::Matrix3d::Zero();
    d(0, 0) = -s;
    d(0, 1) = -c;
    d(1, 0) = c;
    d(1, 1) = -s;
    return d;
  }
  const double ca = std::cos(angles[0]), sa = std::sin(angles[0]);
  const double cb = std::cos(angles[1]), sb = std::sin(angles[1]);
  const double cg = std::cos(angles[2]), sg = std::sin(angles[2]);
  Eigen::Matrix3d rx, ry, rz;
  rx << 1, 0, 0, 0, ca, -sa, 0, sa, ca;
  ry << cb, 0, sb, 0, 1, 0, -sb, 0, cb;
  rz << cg, -sg, 0, sg, cg, 0, 0, 0, 1;
  Eigen::Matrix3d d;
  switch (which) {
    case 0: {
      Eigen::Matrix3d drx;
      drx << 0, 0, 0, 0, -sa, -ca, 0, ca, -sa;
      return rz * ry * drx;
    }
    case 1: {
      Eigen::Matrix3d dry;
      dry << -sb, 0, cb, 0, 0, 0, -cb, 0, -sb;
      return rz * dry * rx;
    }
    default: {
      Eigen::Matrix3d drz;
      drz << -sg, -cg, 0, cg, -sg, 0, 0, 0, 0;
      return drz * ry * rx;
    }
  }
}

}  // namespace

Eigen::Matrix3d rotation_matrix(int dim, const Vec& angles) {
  if (dim == 2) {
    const double c = std::cos(angles[0]), s = std::sin(angles[0]);
    Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
    r(0, 0) = c;
    r(0, 1) = -s;
    r(1, 0) = s;
    r(1, 1) = c;
    return r;
  }
  const double ca = std::cos(angles[0]), sa = std::sin(angles[0]);
  const double cb = std::cos(angles[1]), sb = std::sin(angles[1]);
  const double cg = std::cos(angles[2]), sg = std::sin(angles[2]);
  Eigen::Matrix3d rx, ry, rz;
  rx << 1, 0, 0, 0, ca, -sa, 0, sa, ca;
  ry << cb, 0, sb, 0, 1, 0, -sb, 0, cb;
  rz << cg, -sg, 0, sg, cg, 0, 0, 0, 1;
  return rz * ry * rx;
}

Vec rotation_angles(int dim, const Eigen::Matrix3d& r) {
  if (dim == 2) return Vec(std::atan2(r(1, 0), r(0, 0)), 0.0, 0.0);
  const double sb = std::clamp(-r(2, 0), -1.0, 1.0);
  return Vec(std::atan2(r(2, 1), r(2, 2)), std::asin(sb), std::atan2(r(1, 0), r(0, 0)));
}

// ---------------------------------------------------------------------------
// Construction

Transform Transform::identity(TransformKind kind, int dim) {
  check_dim(dim);
  switch (kind) {
    case TransformKind::translation: return translation(dim, Vec::Zero());
    case TransformKind::rigid: return rigid(dim, Vec::Zero(), Vec::Zero(), Vec::Zero());
    case TransformKind::affine: return affine(dim, Eigen::Matrix3d::Identity(), Vec::Zero());
    case TransformKind::ffd: break;
  }
  throw InvalidArgument("an FFD identity needs a lattice; use Transform::ffd(mesh)");
}

Transform Transform::translation(int dim, const Vec& offset) {
  check_dim(dim);
  Transform t;
  t.kind_ = TransformKind::translation;
  t.dim_ = dim;
  t.params_.assign(offset.data(), offset.data() + dim);
  return t;
}

Transform Transform::rigid(int dim, const Vec& center, const Vec& angles, const Vec& offset) {
  check_dim(dim);
  Transform t;
  t.kind_ = TransformKind::rigid;
  t.dim_ = dim;
  t.params_.clear();
  for (int a = 0; a < dim; ++a) t.params_.push_back(center[a]);
  for (int a = 0; a < t.num_angles(); ++a) t.params_.push_back(angles[a]);
  for (int a = 0; a < dim; ++a) t.params_.push_back(offset[a]);
  return t;
}

Transform Transform::affine(int dim, const Eigen::Matrix3d& matrix, const Vec& offset) {
  check_dim(dim);
  Transform t;
  t.kind_ = TransformKind::affine;
  t.dim_ = dim;
  t.params_.clear();
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < dim; ++c) t.params_.push_back(matrix(r, c));
  for (int a = 0; a < dim; ++a) t.params_.push_back(offset[a]);
  return t;
}

Transform Transform::ffd(const FfdMesh& mesh) {
  check_dim(mesh.dim);
  Transform t;
  t.kind_ = TransformKind::ffd;
  t.dim_ = mesh.dim;
  t.mesh_ = mesh;
  t.params_.assign(mesh.size() * static_cast<std::size_t>(mesh.dim), 0.0);
  return t;
}

std::vector<ParamRole> Transform::param_roles() const {
  std::vector<ParamRole> roles;
  roles.reserve(params_.size());
  switch (kind_) {
    case TransformKind::translation:
      roles.assign(params_.size(), ParamRole::translation);
      break;
    case TransformKind::rigid:
      roles.insert(roles.end(), dim_, ParamRole::rotation_center);
      roles.insert(roles.end(), num_angles(), ParamRole::rotation);
      roles.insert(roles.end(), dim_, ParamRole::translation);
      break;
    case TransformKind::affine:
      roles.insert(roles.end(), dim_ * dim_, ParamRole::matrix);
      roles.insert(roles.end(), dim_, ParamRole::translation);
      break;
    case TransformKind::ffd:
      roles.assign(params_.size(), ParamRole::displacement);
      break;
  }
  return roles;
}

Vec Transform::rigid_center() const {
  Vec c = Vec::Zero();
  for (int a = 0; a < dim_; ++a) c[a] = params_[a];
  return c;
}

Vec Transform::rigid_angles() const {
  Vec r = Vec::Zero();
  for (int a = 0; a < num_angles(); ++a) r[a] = params_[dim_ + a];
  return r;
}

Vec Transform::rigid_offset() const {
  Vec t = Vec::Zero();
  const int off = dim_ + num_angles();
  for (int a = 0; a < dim_; ++a) t[a] = params_[off + a];
  return t;
}

Eigen::Matrix3d Transform::linear_part() const {
  switch (kind_) {
    case TransformKind::translation: return Eigen::Matrix3d::Identity();
    case TransformKind::rigid: return rotation_matrix(dim_, rigid_angles());
    case TransformKind::affine: {
      Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
      for (int r = 0; r < dim_; ++r)
        for (int c = 0; c < dim_; ++c) m(r, c) = params_[r * dim_ + c];
      return m;
    }
    case TransformKind::ffd: break;
  }
  throw InvalidArgument("linear_part() is undefined for FFD transforms");
}

Vec Transform::translation_part() const {
  if (kind_ == TransformKind::ffd) throw InvalidArgument("translation_part() is undefined for FFD transforms");
  return apply(Vec::Zero());
}

// ---------------------------------------------------------------------------
// Evaluation

Vec Transform::apply(const Vec& x) const {
  switch (kind_) {
    case TransformKind::translation: {
      Vec y = x;
      for (int a = 0; a < dim_; ++a) y[a] += params_[a];
      return y;
    }
    case TransformKind::rigid: {
      const Vec c = rigid_center();
      return rotation_matrix(dim_, rigid_angles()) * (x + rigid_offset() - c) + c;
    }
    case TransformKind::affine: {
      Vec y = Vec::Zero();
      for (int r = 0; r < dim_; ++r) {
        double acc = params_[dim_ * dim_ + r];
        for (int c = 0; c < dim_; ++c) acc += params_[r * dim_ + c] * x[c];
        y[r] = acc;
      }
      if (dim_ == 2) y[2] = x[2];
      return y;
    }
    case TransformKind::ffd: {
      Vec y = x;
      const Support s = ffd_support(mesh_, x);
      for_each_support(mesh_, s, [&](std::size_t p, double w) {
        for (int a = 0; a < dim_; ++a) y[a] += w * params_[p + a];
      });
      return y;
    }
  }
  return x;
}

Eigen::MatrixXd Transform::jacobian_wrt_params(const Vec& x) const {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(dim_, static_cast<Eigen::Index>(params_.size()));
  switch (kind_) {
    case TransformKind::translation:
      for (int a = 0; a < dim_; ++a) j(a, a) = 1.0;
      break;
    case TransformKind::rigid: {
      const Vec c = rigid_center();
      const Vec ang = rigid_angles();
      const Eigen::Matrix3d r = rotation_matrix(dim_, ang);
      const Vec q = x + rigid_offset() - c;
      const Eigen::Matrix3d dc = Eigen::Matrix3d::Identity() - r;
      for (int a = 0; a < dim_; ++a)
        for (int b = 0; b < dim_; ++b) j(a, b) = dc(a, b);
      for (int k = 0; k < num_angles(); ++k) {
        const Vec col = rotation_derivative(dim_, ang, k) * q;
        for (int a = 0; a < dim_; ++a) j(a, dim_ + k) = col[a];
      }
      const int off = dim_ + num_angles();
      for (int a = 0; a < dim_; ++a)
        for (int b = 0; b < dim_; ++b) j(a, off + b) = r(a, b);
      break;
    }
    case TransformKind::affine:
      for (int r = 0; r < dim_; ++r) {
        for (int c = 0; c < dim_; ++c) j(r, r * dim_ + c) = x[c];
        j(r, dim_ * dim_ + r) = 1.0;
      }
      break;
    case TransformKind::ffd: {
      const Support s = ffd_support(mesh_, x);
      for_each_support(mesh_, s, [&](std::size_t p, double w) {
        for (int a = 0; a < dim_; ++a) j(a, static_cast<Eigen::Index>(p) + a) = w;
      });
      break;
    }
  }
  return j;
}

void Transform::accumulate_param_gradient(const Vec& x, const Vec& force, std::span<double> grad) const {
  switch (kind_) {
    case TransformKind::translation:
      for (int a = 0; a < dim_; ++a) grad[a] += force[a];
      return;
    case TransformKind::ffd: {
      const Support s = ffd_support(mesh_, x);
      for_each_support(mesh_, s, [&](std::size_t p, double w) {
        for (int a = 0; a < dim_; ++a) grad[p + a] += w * force[a];
      });
      return;
    }
    case TransformKind::affine:
      for (int r = 0; r < dim_; ++r) {
        for (int c = 0; c < dim_; ++c) grad[r * dim_ + c] += force[r] * x[c];
        grad[dim_ * dim_ + r] += force[r];
      }
      return;
    case TransformKind::rigid: {
      const Eigen::MatrixXd j = jacobian_wrt_params(x);
      const Eigen::VectorXd g = j.transpose() * force.head(dim_);
      for (Eigen::Index i = 0; i < g.size(); ++i) grad[i] += g[i];
      return;
    }
  }
}

Transform rigid_from_translation(const Transform& t, const Vec& center) {
  if (t.kind() != TransformKind::translation) throw InvalidArgument("rigid_from_translation expects a translation");
  Vec offset = Vec::Zero();
  for (int a = 0; a < t.dim(); ++a) offset[a] = t.params()[a];
  return Transform::rigid(t.dim(), center, Vec::Zero(), offset);
}

Transform affine_from_linear(const Transform& t) {
  if (t.kind() == TransformKind::ffd) throw InvalidArgument("affine_from_linear expects a linear transform");
  return Transform::affine(t.dim(), t.linear_part(), t.translation_part());
}

// ---------------------------------------------------------------------------
// Chains

Vec TransformChain::apply(const Vec& x) const {
  Vec y = x;
  for (const auto& s : stages) y = s.apply(y);
  return y;
}

Vec TransformChain::last_stage_input(const Vec& x) const {
  Vec y = x;
  for (std::size_t i = 0; i + 1 < stages.size(); ++i) y = stages[i].apply(y);
  return y;
}

Vec compose_eval(const Transform& a, const Transform& b, const Vec& x) { return a.apply(b.apply(x)); }

// ---------------------------------------------------------------------------
// Bending energy

BendingEnergy bending_energy(const Transform& t) {
  BendingEnergy out;
  out.gradient.assign(t.num_params(), 0.0);
  if (t.kind() != TransformKind::ffd) return out;
  const FfdMesh& m = t.mesh();
  const int d = m.dim;
  for (int a = 0; a < d; ++a) {
    if (m.dims[a] < 3) return out;
  }

  // 3^d stencil per derivative pair (a <= b), evaluated at a node.
  int stencil_size = 1;
  for (int a = 0; a < d; ++a) stencil_size *= 3;
  struct Pair {
    double coef;
    std::vector<double> weights;
  };
  std::vector<Pair> pairs;
  std::vector<std::array<int, 3>> offsets(stencil_size);
  for (int s = 0; s < stencil_size; ++s) {
    int rem = s;
    std::array<int, 3> o{0, 0, 0};
    for (int a = d - 1; a >= 0; --a) {
      o[a] = rem % 3 - 1;
      rem /= 3;
    }
    offsets[s] = o;
  }
  for (int a = 0; a < d; ++a) {
    for (int b = a; b < d; ++b) {
      Pair p{a == b ? 1.0 : 2.0, std::vector<double>(stencil_size)};
      for (int s = 0; s < stencil_size; ++s) {
        double w = 1.0;
        for (int axis = 0; axis < d; ++axis) {
          const double arg = -offsets[s][axis];
          if (axis == a && axis == b) {
            w *= bspline3_deriv2(arg) / (m.spacing[axis] * m.spacing[axis]);
          } else if (axis == a || axis == b) {
            w *= bspline3_deriv(arg) / m.spacing[axis];
          } else {
            w *= bspline3(arg);
          }
        }
        p.weights[s] = w;
      }
      pairs.push_back(std::move(p));
    }
  }

  std::size_t interior = 1;
  for (int a = 0; a < d; ++a) interior *= static_cast<std::size_t>(m.dims[a] - 2);
  const double norm = 1.0 / static_cast<double>(interior);
  const auto& c = t.params();
  std::vector<std::size_t> neighbor(stencil_size);

  for (std::size_t flat = 0; flat < m.size(); ++flat) {
    Index3 idx{0, 0, 0};
    std::size_t rem = flat;
    for (int a = d - 1; a >= 0; --a) {
      idx[a] = static_cast<int>(rem % m.dims[a]);
      rem /= m.dims[a];
    }
    bool inner = true;
    for (int a = 0; a < d; ++a) inner = inner && idx[a] >= 1 && idx[a] <= m.dims[a] - 2;
    if (!inner) continue;
    for (int s = 0; s < stencil_size; ++s) {
      Index3 q = idx;
      for (int a = 0; a < d; ++a) q[a] += offsets[s][a];
      neighbor[s] = m.flatten(q) * static_cast<std::size_t>(d);
    }
    for (const Pair& p : pairs) {
      for (int comp = 0; comp < d; ++comp) {
        double deriv = 0.0;
        for (int s = 0; s < stencil_size; ++s) deriv += p.weights[s] * c[neighbor[s] + comp];
        out.value += norm * p.coef * deriv * deriv;
        const double g = norm * 2.0 * p.coef * deriv;
        for (int s = 0; s < stencil_size; ++s) out.gradient[neighbor[s] + comp] += g * p.weights[s];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Zero-mean projection

namespace {

void project_rigid(std::vector<Transform>& members, const Grid& domain) {
  const int d = members.front().dim();
  const double n = static_cast<double>(members.size());
  Eigen::Matrix3d mean_linear = Eigen::Matrix3d::Zero();
  Vec mean_offset = Vec::Zero();
  for (const auto& m : members) {
    mean_linear += m.linear_part() / n;
    mean_offset += m.translation_part() / n;
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(mean_linear, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  if ((u * svd.matrixV().transpose()).determinant() < 0) u.col(2) *= -1.0;
  const Eigen::Matrix3d polar = u * svd.matrixV().transpose();
  const Eigen::Matrix3d q = polar.transpose();
  const Vec g = domain.center();
  const Vec s = mean_linear.inverse() * (g - mean_offset) - g;
  const Vec shift = -q * g + g + s;  // psi(x) = q x + shift
  for (auto& m : members) {
    const Eigen::Matrix3d r = m.linear_part();
    const Vec a = m.translation_part();
    const Vec c = m.rigid_center();
    Eigen::Matrix3d r_new = r * q;
    if (d == 2) {
      r_new.row(2) = Eigen::RowVector3d(0, 0, 1);
      r_new.col(2) = Vec(0, 0, 1);
    }
    Vec t_new = c + r_new.transpose() * (r * shift + a - c);
    if (d == 2) t_new[2] = 0.0;
    m = Transform::rigid(d, c, rotation_angles(d, r_new), t_new);
  }
}

}  // namespace

std::vector<Transform> project_zero_mean(std::vector<Transform> members, const Grid& domain) {
  if (members.empty()) return members;
  const TransformKind kind = members.front().kind();
  const int d = members.front().dim();
  for (const auto& m : members) {
    if (m.kind() != kind || m.dim() != d) throw InvalidArgument("zero-mean projection needs a homogeneous group");
    if (kind == TransformKind::ffd && !(m.mesh() == members.front().mesh()))
      throw InvalidArgument("zero-mean projection of FFDs needs one shared lattice");
  }
  const double n = static_cast<double>(members.size());
  switch (kind) {
    case TransformKind::translation:
    case TransformKind::ffd: {
      std::vector<double> mean(members.front().num_params(), 0.0);
      for (const auto& m : members)
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += m.params()[i] / n;
      for (auto& m : members)
        for (std::size_t i = 0; i < mean.size(); ++i) m.params()[i] -= mean[i];
      break;
    }
    case TransformKind::affine: {
      // Mean map is x -> M x + b; subtracting (M - I) x + b keeps members affine.
      std::vector<double> mean(members.front().num_params(), 0.0);
      for (const auto& m : members)
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += m.params()[i] / n;
      for (int r = 0; r < d; ++r) mean[r * d + r] -= 1.0;
      for (auto& m : members)
        for (std::size_t i = 0; i < mean.size(); ++i) m.params()[i] -= mean[i];
      break;
    }
    case TransformKind::rigid:
      project_rigid(members, domain);
      break;
  }
  return members;
}

double mean_displacement_residual(std::span<const Transform> members, const Grid& domain) {
  double worst = 0.0;
  for (const Vec& x : domain.corners()) {
    Vec mean = Vec::Zero();
    for (const auto& m : members) mean += m.apply(x);
    mean /= static_cast<double>(members.size());
    worst = std::max(worst, (mean - x).norm());
  }
  return worst;
}

}  // namespace xcoreg
