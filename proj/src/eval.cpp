#include "xcoreg/eval.hpp"

#include <cmath>

#include "xcoreg/error.hpp"

namespace xcoreg {

namespace {

void check_sizes(const GroundTruth& gt, std::span<const TransformChain> estimated) {
  if (gt.misalignment.empty()) throw InvalidArgument("ground truth has no images");
  if (estimated.size() != gt.misalignment.size())
    throw InvalidArgument("one estimated transform per ground-truth image required");
}

// Residuals r_j(x) = phi_dagger_j(phi_hat_j(x)) - x, centered over the group.
std::vector<Vec> centered_residuals(const GroundTruth& gt, std::span<const TransformChain> estimated, const Vec& x,
                                    std::vector<Vec>* mapped = nullptr) {
  const std::size_t n = estimated.size();
  std::vector<Vec> r(n);
  Vec mean = Vec::Zero();
  if (mapped) mapped->resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const Vec y = gt.misalignment[j].apply(estimated[j].apply(x));
    if (mapped) (*mapped)[j] = y;
    r[j] = y - x;
    mean += r[j];
  }
  mean /= static_cast<double>(n);
  for (auto& v : r) v -= mean;
  return r;
}

}  // namespace

double gwi(const GroundTruth& gt, std::span<const TransformChain> estimated) {
  check_sizes(gt, estimated);
  const std::size_t n = estimated.size();
  std::vector<double> sum_sq(n, 0.0);
  std::vector<std::size_t> count(n, 0);
  std::vector<Vec> mapped;
  for (std::size_t i = 0; i < gt.grid.size(); ++i) {
    const Vec x = gt.grid.point(i);
    const auto r = centered_residuals(gt, estimated, x, &mapped);
    for (std::size_t j = 0; j < n; ++j) {
      if (nearest_value(gt.foreground, mapped[j], 0.0) == 0.0) continue;
      sum_sq[j] += r[j].squaredNorm();
      ++count[j];
    }
  }
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (count[j] == 0) throw InvalidArgument("gWI: image " + std::to_string(j) + " has an empty foreground region");
    total += std::sqrt(sum_sq[j] / static_cast<double>(count[j]));
  }
  return total / static_cast<double>(n);
}

double gre(const GroundTruth& gt, std::span<const TransformChain> estimated, std::span<const Vec> vertices) {
  check_sizes(gt, estimated);
  if (vertices.empty()) throw InvalidArgument("gRE needs at least one vertex");
  const std::size_t n = estimated.size();
  std::vector<double> sum_sq(n, 0.0);
  for (const Vec& v : vertices) {
    const auto r = centered_residuals(gt, estimated, v);
    for (std::size_t j = 0; j < n; ++j) sum_sq[j] += r[j].squaredNorm();
  }
  double total = 0.0;
  for (double s : sum_sq) total += std::sqrt(s / static_cast<double>(vertices.size()));
  return total / static_cast<double>(n);
}

double gre(const GroundTruth& gt, std::span<const TransformChain> estimated) {
  const auto corners = gt.grid.corners();
  return gre(gt, estimated, corners);
}

std::vector<TransformChain> identity_estimates(std::size_t n, int dim) {
  return std::vector<TransformChain>(n, TransformChain(Transform::identity(TransformKind::translation, dim)));
}

double dice(std::span<const int> a, std::span<const int> b, int label) {
  if (a.size() != b.size()) throw InvalidArgument("dice: masks differ in size");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool in_a = a[i] == label, in_b = b[i] == label;
    na += in_a;
    nb += in_b;
    both += in_a && in_b;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double pairwise_dsc(std::span<const std::vector<int>> maps, int label) {
  if (maps.size() < 2) throw InvalidArgument("pairwise DSC needs at least 2 masks");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    for (std::size_t j = i + 1; j < maps.size(); ++j) {
      total += dice(maps[i], maps[j], label);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

std::vector<int> warp_labels(std::span<const int> labels, const Grid& image_grid, const TransformChain& phi,
                             const Grid& common) {
  if (labels.size() != image_grid.size()) throw InvalidArgument("label map does not match its grid");
  std::vector<int> out(common.size(), -1);
  for (std::size_t i = 0; i < common.size(); ++i) {
    const Vec c = image_grid.continuous_index(phi.apply(common.point(i)));
    Index3 idx{0, 0, 0};
    bool inside = true;
    for (int a = 0; a < image_grid.dim && inside; ++a) {
      const long r = std::lround(c[a]);
      inside = r >= 0 && r < image_grid.dims[a];
      idx[a] = static_cast<int>(r);
    }
    if (inside) out[i] = labels[image_grid.flatten(idx)];
  }
  return out;
}

Volume warp_volume(const Volume& v, const TransformChain& phi, const Grid& common, bool linear) {
  std::vector<double> data(common.size());
  for (std::size_t i = 0; i < common.size(); ++i) {
    const Vec y = phi.apply(common.point(i));
    data[i] = linear ? interpolate_value(v, y, 0.0) : nearest_value(v, y, 0.0);
  }
  return Volume(common, std::move(data), v.modality);
}

}  // namespace xcoreg
