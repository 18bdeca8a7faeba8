#include "xcoreg/density.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "xcoreg/error.hpp"

namespace xcoreg {

namespace {
constexpr double kProbabilityFloor = 1e-12;
}

Binning Binning::from_range(int levels, double lo, double hi, double bandwidth) {
  Binning b{levels, lo, hi, bandwidth};
  validate(b);
  return b;
}

Binning Binning::from_volume(const Volume& v, int levels, double bandwidth) {
  double lo = v.min(), hi = v.max();
  if (!(hi > lo)) hi = lo + 1.0;
  return from_range(levels, lo, hi, bandwidth);
}

void validate(const Binning& b) {
  if (b.levels < 2) throw InvalidArgument("binning needs at least 2 levels");
  if (!(b.hi > b.lo) || !std::isfinite(b.lo) || !std::isfinite(b.hi))
    throw InvalidArgument("degenerate binning range");
  if (!(b.bandwidth > 0.0 && b.bandwidth <= 3.0)) throw InvalidArgument("bandwidth must lie in (0, 3] bins");
}

double Binning::coordinate(double u) const {
  const double c = (u - lo) / (hi - lo) * (levels - 1);
  return std::clamp(c, 0.0, static_cast<double>(levels - 1));
}

double Binning::slope(double u) const {
  const double c = (u - lo) / (hi - lo) * (levels - 1);
  if (c < 0.0 || c > levels - 1) return 0.0;
  return (levels - 1) / (hi - lo);
}

ParzenStencil parzen_stencil(const Binning& b, double coordinate) {
  ParzenStencil s;
  const double h = b.bandwidth;
  const int first = std::max(0, static_cast<int>(std::floor(coordinate - 2.0 * h)) + 1);
  const int last = std::min(b.levels - 1, static_cast<int>(std::ceil(coordinate + 2.0 * h)) - 1);
  s.first = first;
  s.count = std::max(0, last - first + 1);
  for (int i = 0; i < s.count; ++i) {
    const double arg = (coordinate - (first + i)) / h;
    s.weight[i] = bspline3(arg);
    s.deriv[i] = bspline3_deriv(arg) / h;
  }
  return s;
}

int AppearanceTable::empty_classes() const {
  return static_cast<int>(std::count(empty.begin(), empty.end(), true));
}

Eigen::VectorXd appearance_from_posterior(std::span<const double> intensities, std::span<const double> weights,
                                          const Binning& binning, bool* empty) {
  validate(binning);
  if (intensities.size() != weights.size()) throw InvalidArgument("intensities and weights differ in length");
  Eigen::VectorXd row = Eigen::VectorXd::Zero(binning.levels);
  for (std::size_t s = 0; s < intensities.size(); ++s) {
    if (weights[s] < 0.0) throw InvalidArgument("appearance weights must be nonnegative");
    if (weights[s] == 0.0) continue;
    const ParzenStencil st = parzen_stencil(binning, binning.coordinate(intensities[s]));
    for (int i = 0; i < st.count; ++i) row[st.first + i] += st.weight[i] * weights[s];
  }
  const double z = row.sum();
  const bool is_empty = !(z > 0.0);
  if (empty) *empty = is_empty;
  if (is_empty) return Eigen::VectorXd::Constant(binning.levels, 1.0 / binning.levels);
  return row / z;
}

AppearanceTable appearance_model(std::span<const double> intensities, const RowMatrix& gamma,
                                 const Binning& binning) {
  validate(binning);
  if (static_cast<Eigen::Index>(intensities.size()) != gamma.rows())
    throw InvalidArgument("gamma rows must match the sample count");
  const auto k_count = static_cast<int>(gamma.cols());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(k_count, binning.levels);
  for (std::size_t s = 0; s < intensities.size(); ++s) {
    const ParzenStencil st = parzen_stencil(binning, binning.coordinate(intensities[s]));
    for (int k = 0; k < k_count; ++k) {
      const double g = gamma(static_cast<Eigen::Index>(s), k);
      if (g == 0.0) continue;
      for (int i = 0; i < st.count; ++i) acc(k, st.first + i) += st.weight[i] * g;
    }
  }
  AppearanceTable out;
  out.f = acc;
  out.empty.assign(k_count, false);
  for (int k = 0; k < k_count; ++k) {
    const double z = acc.row(k).sum();
    if (z > 0.0) {
      out.f.row(k) /= z;
    } else {
      out.f.row(k).setConstant(1.0 / binning.levels);
      out.empty[k] = true;
    }
  }
  return out;
}

AppearanceTable appearance_from_labels(const Volume& v, std::span<const int> labels, int classes,
                                       const Binning& binning) {
  if (labels.size() != v.data.size()) throw InvalidArgument("label map size does not match the volume");
  if (classes < 1) throw InvalidArgument("class count must be positive");
  RowMatrix onehot = RowMatrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw InvalidArgument("label out of range");
    onehot(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return appearance_model(v.data, onehot, binning);
}

JointTable joint_table(std::span<const double> intensities, const RowMatrix& gamma, const Binning& binning) {
  validate(binning);
  if (intensities.empty()) throw InvalidArgument("joint table of an empty sample set");
  if (static_cast<Eigen::Index>(intensities.size()) != gamma.rows())
    throw InvalidArgument("gamma rows must match the sample count");
  const auto k_count = static_cast<int>(gamma.cols());
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(k_count, binning.levels);
  for (std::size_t s = 0; s < intensities.size(); ++s) {
    const ParzenStencil st = parzen_stencil(binning, binning.coordinate(intensities[s]));
    for (int k = 0; k < k_count; ++k) {
      const double g = gamma(static_cast<Eigen::Index>(s), k);
      for (int i = 0; i < st.count; ++i) acc(k, st.first + i) += st.weight[i] * g;
    }
  }
  JointTable out;
  out.normalizer = acc.sum();
  if (!(out.normalizer > 0.0)) throw InvalidArgument("joint table has no mass");
  out.p = acc / out.normalizer;
  return out;
}

double mutual_information(const Eigen::MatrixXd& p) {
  const Eigen::VectorXd rows = p.rowwise().sum();
  const Eigen::VectorXd cols = p.colwise().sum().transpose();
  double mi = 0.0;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const double v = p(r, c);
      if (v > 0.0) mi += v * std::log(v / (rows[r] * cols[c]));
    }
  }
  return mi;
}

Eigen::MatrixXd mutual_information_gradient(const Eigen::MatrixXd& p, double normalizer) {
  const Eigen::VectorXd rows = p.rowwise().sum();
  const Eigen::VectorXd cols = p.colwise().sum().transpose();
  const double mi = mutual_information(p);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p.rows(), p.cols());
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const double v = p(r, c);
      if (v > 0.0) g(r, c) = (std::log(v / (rows[r] * cols[c])) - mi) / normalizer;
    }
  }
  return g;
}

double entropy(std::span<const double> dist) {
  double h = 0.0;
  for (double p : dist) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double entropy(const Eigen::VectorXd& dist) {
  return entropy(std::span<const double>(dist.data(), static_cast<std::size_t>(dist.size())));
}

CommonSpace init_common_space(const Grid& grid, int classes, std::uint64_t seed) {
  if (classes < 2) throw InvalidArgument("the common anatomy needs K >= 2 classes");
  CommonSpace cs;
  cs.classes = classes;
  cs.pi = Eigen::VectorXd::Constant(classes, 1.0 / classes);
  const auto n = static_cast<Eigen::Index>(grid.size());
  cs.gamma.resize(n, classes);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index x = 0; x < n; ++x) {
    double mx = -1e300;
    for (int k = 0; k < classes; ++k) {
      cs.gamma(x, k) = normal(rng);
      mx = std::max(mx, cs.gamma(x, k));
    }
    double z = 0.0;
    for (int k = 0; k < classes; ++k) {
      cs.gamma(x, k) = std::exp(cs.gamma(x, k) - mx);
      z += cs.gamma(x, k);
    }
    cs.gamma.row(x) /= z;
  }
  return cs;
}

PosteriorResult posterior_update(std::span<const AppearanceTable> appearance, const Eigen::VectorXd& pi,
                                 const Eigen::MatrixXd& intensities, std::span<const Binning> binning) {
  const auto n_images = static_cast<std::size_t>(intensities.cols());
  if (appearance.size() != n_images || binning.size() != n_images)
    throw InvalidArgument("posterior_update: one appearance table and binning per image required");
  const auto k_count = static_cast<int>(pi.size());
  for (const auto& a : appearance) {
    if (a.f.rows() != k_count) throw InvalidArgument("appearance tables disagree with pi on K");
  }
  PosteriorResult out;
  out.gamma.resize(intensities.rows(), k_count);
  const double log_floor = std::log(kProbabilityFloor);
  std::vector<double> logp(k_count);
  std::vector<bool> vanished(k_count);
  for (Eigen::Index s = 0; s < intensities.rows(); ++s) {
    for (int k = 0; k < k_count; ++k) {
      logp[k] = pi[k] > kProbabilityFloor ? std::log(pi[k]) : log_floor;
      vanished[k] = !(pi[k] > 0.0);
    }
    for (std::size_t j = 0; j < n_images; ++j) {
      const Binning& b = binning[j];
      const ParzenStencil st = parzen_stencil(b, b.coordinate(intensities(s, static_cast<Eigen::Index>(j))));
      const Eigen::MatrixXd& f = appearance[j].f;
      for (int k = 0; k < k_count; ++k) {
        double lik = 0.0;
        for (int i = 0; i < st.count; ++i) lik += st.weight[i] * f(k, st.first + i);
        if (!(lik > 0.0)) vanished[k] = true;
        logp[k] += std::log(std::max(lik, kProbabilityFloor));
      }
    }
    const bool all_vanished = std::all_of(vanished.begin(), vanished.end(), [](bool v) { return v; });
    if (all_vanished) {
      out.gamma.row(s) = pi.transpose() / pi.sum();
      ++out.fallback_samples;
      continue;
    }
    const double mx = *std::max_element(logp.begin(), logp.end());
    double z = 0.0;
    for (int k = 0; k < k_count; ++k) {
      const double e = std::exp(logp[k] - mx);
      out.gamma(s, k) = e;
      z += e;
    }
    out.gamma.row(s) /= z;
  }
  return out;
}

Eigen::VectorXd prior_update(const RowMatrix& gamma) {
  if (gamma.rows() == 0) throw InvalidArgument("prior update over an empty overlap region");
  Eigen::VectorXd pi = gamma.colwise().sum().transpose();
  return pi / pi.sum();
}

std::string table_to_csv(const Eigen::MatrixXd& table) {
  std::ostringstream out;
  out.precision(17);
  for (Eigen::Index r = 0; r < table.rows(); ++r) {
    for (Eigen::Index c = 0; c < table.cols(); ++c) {
      if (c) out << ',';
      out << table(r, c);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace xcoreg
