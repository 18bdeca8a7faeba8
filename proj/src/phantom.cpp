#include "xcoreg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "xcoreg/error.hpp"

namespace xcoreg {

namespace {

Volume noise_field(const Grid& grid, std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> data(grid.size());
  for (auto& v : data) v = normal(rng);
  return gaussian_smooth(Volume(grid, std::move(data)), sigma);
}

// Position relative to the grid center, scaled so the grid spans [-1, 1].
Vec normalized(const Grid& grid, const Vec& x) {
  Vec out = Vec::Zero();
  const Vec half = grid.extent() / 2.0;
  const Vec c = grid.center();
  for (int a = 0; a < grid.dim; ++a) out[a] = (x[a] - c[a]) / half[a];
  return out;
}

std::vector<std::vector<int>> class_orders(int classes, int modalities, std::mt19937_64& rng) {
  std::vector<std::vector<int>> orders;
  std::vector<int> base(static_cast<std::size_t>(classes));
  std::iota(base.begin(), base.end(), 0);
  for (int m = 0; m < modalities; ++m) {
    std::vector<int> order = base;
    if (m == 1) {
      std::reverse(order.begin(), order.end());
    } else if (m > 1) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        std::shuffle(order.begin(), order.end(), rng);
        if (std::find(orders.begin(), orders.end(), order) == orders.end()) break;
      }
    }
    orders.push_back(order);
  }
  return orders;
}

}  // namespace

Phantom make_phantom(const PhantomSpec& spec) {
  if (spec.classes < 2) throw InvalidArgument("phantom needs at least 2 classes");
  if (spec.modalities < 1) throw InvalidArgument("phantom needs at least 1 modality");
  if (!(spec.body_radius > 0.0 && spec.body_radius <= 0.5)) throw InvalidArgument("body_radius must lie in (0, 0.5]");
  Phantom ph;
  ph.grid = Grid::make(spec.dims, spec.spacing);
  std::mt19937_64 rng(spec.seed);
  const std::size_t size = ph.grid.size();

  std::vector<Volume> fields;
  for (int k = 1; k < spec.classes; ++k) fields.push_back(noise_field(ph.grid, rng, spec.blob_sigma));
  ph.labels.assign(size, 0);
  std::vector<double> fg(size, 0.0);
  const double r_norm = 2.0 * spec.body_radius;
  for (std::size_t i = 0; i < size; ++i) {
    const Vec u = normalized(ph.grid, ph.grid.point(i)) / r_norm;
    if (u.squaredNorm() > 1.0) continue;
    int best = 0;
    for (std::size_t f = 1; f < fields.size(); ++f)
      if (fields[f][i] > fields[static_cast<std::size_t>(best)][i]) best = static_cast<int>(f);
    ph.labels[i] = best + 1;
    fg[i] = 1.0;
  }
  ph.foreground = Volume(ph.grid, std::move(fg), "foreground");

  const auto orders = class_orders(spec.classes, spec.modalities, rng);
  std::vector<double> levels(static_cast<std::size_t>(spec.classes));
  for (int k = 0; k < spec.classes; ++k) levels[static_cast<std::size_t>(k)] = 0.1 + 0.8 * k / (spec.classes - 1);

  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  for (int m = 0; m < spec.modalities; ++m) {
    std::vector<double> means(static_cast<std::size_t>(spec.classes));
    for (int k = 0; k < spec.classes; ++k)
      means[static_cast<std::size_t>(k)] = levels[static_cast<std::size_t>(orders[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)])];
    Vec c1 = Vec::Zero();
    for (int a = 0; a < ph.grid.dim; ++a) c1[a] = coef(rng);
    const double c2 = coef(rng);
    const double norm = c1.lpNorm<1>() + std::abs(c2);
    std::vector<double> data(size);
    for (std::size_t i = 0; i < size; ++i) {
      double gain = 1.0;
      if (spec.bias > 0.0 && norm > 0.0) {
        const Vec u = normalized(ph.grid, ph.grid.point(i));
        gain += spec.bias * (c1.dot(u) + c2 * u[0] * u[1]) / norm;
      }
      data[i] = gain * means[static_cast<std::size_t>(ph.labels[i])];
    }
    ph.clean.emplace_back(ph.grid, std::move(data), "modality" + std::to_string(m));
    ph.class_means.push_back(std::move(means));
  }
  return ph;
}

std::vector<TransformChain> make_misalignment(const MisalignmentSpec& spec, const Grid& grid, std::size_t n,
                                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<Transform> members;
  for (std::size_t j = 0; j < n; ++j) {
    Vec t = Vec::Zero();
    for (int a = 0; a < grid.dim; ++a) t[a] = spec.max_translation * unit(rng);
    switch (spec.kind) {
      case TransformKind::translation: members.push_back(Transform::translation(grid.dim, t)); break;
      case TransformKind::rigid: {
        const int n_angles = grid.dim == 2 ? 1 : 3;
        Vec angles = Vec::Zero();
        for (int a = 0; a < n_angles; ++a) angles[a] = spec.max_angle_deg * std::numbers::pi / 180.0 * unit(rng);
        members.push_back(Transform::rigid(grid.dim, grid.center(), angles, t));
        break;
      }
      case TransformKind::ffd: {
        Transform f = Transform::ffd(FfdMesh::covering(grid, spec.ffd_spacing));
        for (auto& p : f.params()) p = spec.ffd_max_displacement * unit(rng);
        members.push_back(std::move(f));
        break;
      }
      case TransformKind::affine: throw InvalidArgument("affine misalignments are not generated");
    }
  }
  if (spec.zero_mean && n > 0) members = project_zero_mean(std::move(members), grid);
  std::vector<TransformChain> out;
  for (auto& m : members) out.emplace_back(std::move(m));
  return out;
}

SyntheticCase make_case(const Phantom& phantom, std::span<const Volume> clean,
                        std::span<const double> background, std::span<const TransformChain> misalignment,
                        double noise, std::uint64_t seed) {
  if (clean.size() != misalignment.size() || background.size() != clean.size())
    throw InvalidArgument("make_case: one clean volume, background value and misalignment per image");
  if (!(noise >= 0.0)) throw InvalidArgument("noise must be >= 0");
  SyntheticCase out;
  out.truth.grid = phantom.grid;
  out.truth.foreground = phantom.foreground;
  out.truth.misalignment.assign(misalignment.begin(), misalignment.end());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, noise > 0.0 ? noise : 1.0);
  const Grid& g = phantom.grid;
  for (std::size_t j = 0; j < clean.size(); ++j) {
    std::vector<double> data(g.size());
    std::vector<int> labels(g.size(), 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Vec y = misalignment[j].apply(g.point(i));
      const Interpolated s = interpolate(clean[j], y);
      data[i] = s.inside ? s.value : background[j];
      if (noise > 0.0) data[i] += normal(rng);
      const Vec c = g.continuous_index(y);
      Index3 idx{0, 0, 0};
      bool inside = true;
      for (int a = 0; a < g.dim && inside; ++a) {
        const long r = std::lround(c[a]);
        inside = r >= 0 && r < g.dims[a];
        idx[a] = static_cast<int>(r);
      }
      if (inside) labels[i] = phantom.labels[g.flatten(idx)];
    }
    out.images.emplace_back(g, std::move(data), clean[j].modality);
    out.truth.labels.push_back(std::move(labels));
  }
  return out;
}

SyntheticCase make_case(const Phantom& phantom, std::span<const TransformChain> misalignment, double noise,
                        std::uint64_t seed) {
  if (misalignment.size() != phantom.clean.size())
    throw InvalidArgument("make_case: one misalignment per modality required");
  std::vector<double> background;
  for (const auto& m : phantom.class_means) background.push_back(m[0]);
  return make_case(phantom, phantom.clean, background, misalignment, noise, seed);
}

SyntheticCase make_cardiac_sequence(const SequenceSpec& spec) {
  if (spec.frames < 1) throw InvalidArgument("sequence needs at least one frame");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Phantom ph;
  ph.grid = Grid::make(spec.dims, spec.spacing);
  const Grid& g = ph.grid;
  const Vec extent = g.extent();
  const double span = extent.head(g.dim).minCoeff();
  Vec heart = g.center();
  for (int a = 0; a < g.dim; ++a) heart[a] += 0.03 * span * unit(rng);
  const double r_outer = (0.17 + 0.02 * unit(rng)) * span;
  const double r_inner = (0.10 + 0.01 * unit(rng)) * span;
  ph.labels.assign(g.size(), 0);
  std::vector<double> fg(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec x = g.point(i);
    const Vec u = normalized(g, x);
    double body = 0.0;
    for (int a = 0; a < g.dim; ++a) body += std::pow(u[a] / (a == 0 ? 0.8 : 0.9), 2);
    if (body > 1.0) continue;
    const double r = (x - heart).head(g.dim).norm();
    ph.labels[i] = r < r_inner ? 3 : (r < r_outer ? kMyocardiumLabel : 1);
    fg[i] = 1.0;
  }
  ph.foreground = Volume(g, std::move(fg), "foreground");

  auto bolus = [](double t, double peak, double width) { return std::exp(-std::pow((t - peak) / width, 2)); };
  std::vector<Volume> clean;
  std::vector<double> background;
  std::vector<TransformChain> motion;
  const double phase = std::numbers::pi * unit(rng);
  for (int f = 0; f < spec.frames; ++f) {
    const double t = spec.frames > 1 ? static_cast<double>(f) / (spec.frames - 1) : 0.0;
    const std::vector<double> means{0.02, 0.3 + 0.1 * t, 0.2 + 0.45 * bolus(t, 0.45, 0.25),
                                    0.15 + 0.75 * bolus(t, 0.25, 0.15)};
    std::vector<double> data(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) data[i] = means[static_cast<std::size_t>(ph.labels[i])];
    clean.emplace_back(g, std::move(data), "frame" + std::to_string(f));
    background.push_back(means[0]);
    ph.class_means.push_back(means);

    const double breath = 2.0 * std::numbers::pi * 1.5 * t + phase;
    Vec shift = Vec::Zero();
    shift[0] = spec.bulk_amplitude * std::sin(breath) + 0.5 * unit(rng);
    shift[1] = 0.5 * spec.bulk_amplitude * std::sin(breath + 0.7) + 0.5 * unit(rng);
    TransformChain chain(Transform::translation(g.dim, shift));
    Transform elastic = Transform::ffd(FfdMesh::covering(g, spec.ffd_spacing));
    for (auto& p : elastic.params()) p = spec.elastic_amplitude * unit(rng);
    chain.stages.push_back(std::move(elastic));
    motion.push_back(std::move(chain));
  }
  ph.clean = clean;
  return make_case(ph, clean, background, motion, spec.noise, spec.seed ^ 0x5EC0ULL);
}

}  // namespace xcoreg
