#include "xcoreg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "xcoreg/error.hpp"

namespace xcoreg {

Volume::Volume(Grid g, std::vector<double> values, std::string modality_id)
    : grid(g), data(std::move(values)), modality(std::move(modality_id)) {
  validate(*this);
}

Volume::Volume(Grid g, double fill, std::string modality_id)
    : grid(g), data(g.size(), fill), modality(std::move(modality_id)) {
  validate(grid);
}

double Volume::min() const { return *std::min_element(data.begin(), data.end()); }
double Volume::max() const { return *std::max_element(data.begin(), data.end()); }

void validate(const Volume& v) {
  validate(v.grid);
  if (v.data.size() != v.grid.size()) throw InvalidArgument("volume data length does not match grid");
  for (double x : v.data) {
    if (!std::isfinite(x)) throw InvalidArgument("volume contains non-finite values");
  }
}

namespace {

// Cell lookup shared by the interpolators. Returns false when p is outside.
bool locate(const Grid& g, const Vec& p, Index3& base, Vec& frac) {
  for (int a = 0; a < g.dim; ++a) {
    const double c = (p[a] - g.origin[a]) / g.spacing[a];
    if (!(c >= 0.0 && c <= g.dims[a] - 1)) return false;
    const int i = std::min(static_cast<int>(c), g.dims[a] - 2);
    base[a] = i;
    frac[a] = c - i;
  }
  return true;
}

}  // namespace

Interpolated interpolate(const Volume& v, const Vec& p) {
  Interpolated out;
  const Grid& g = v.grid;
  Index3 b{0, 0, 0};
  Vec f = Vec::Zero();
  if (!locate(g, p, b, f)) return out;
  out.inside = true;
  const double* d = v.data.data();
  if (g.dim == 2) {
    const std::size_t n1 = g.dims[1];
    const std::size_t i00 = b[0] * n1 + b[1];
    const double v00 = d[i00], v01 = d[i00 + 1], v10 = d[i00 + n1], v11 = d[i00 + n1 + 1];
    const double f0 = f[0], f1 = f[1];
    out.value = (1 - f0) * ((1 - f1) * v00 + f1 * v01) + f0 * ((1 - f1) * v10 + f1 * v11);
    out.gradient[0] = ((1 - f1) * (v10 - v00) + f1 * (v11 - v01)) / g.spacing[0];
    out.gradient[1] = ((1 - f0) * (v01 - v00) + f0 * (v11 - v10)) / g.spacing[1];
    return out;
  }
  const std::size_t n1 = g.dims[1], n2 = g.dims[2];
  const std::size_t s0 = n1 * n2, s1 = n2;
  const std::size_t i000 = b[0] * s0 + b[1] * s1 + b[2];
  double c[2][2][2];
  for (int a = 0; a < 2; ++a)
    for (int bb = 0; bb < 2; ++bb)
      for (int cc = 0; cc < 2; ++cc) c[a][bb][cc] = d[i000 + a * s0 + bb * s1 + cc];
  const double f0 = f[0], f1 = f[1], f2 = f[2];
  const double w0[2] = {1 - f0, f0}, w1[2] = {1 - f1, f1}, w2[2] = {1 - f2, f2};
  const double dw[2] = {-1.0, 1.0};
  double val = 0, g0 = 0, g1 = 0, g2 = 0;
  for (int a = 0; a < 2; ++a)
    for (int bb = 0; bb < 2; ++bb)
      for (int cc = 0; cc < 2; ++cc) {
        const double x = c[a][bb][cc];
        val += w0[a] * w1[bb] * w2[cc] * x;
        g0 += dw[a] * w1[bb] * w2[cc] * x;
        g1 += w0[a] * dw[bb] * w2[cc] * x;
        g2 += w0[a] * w1[bb] * dw[cc] * x;
      }
  out.value = val;
  out.gradient = Vec(g0 / g.spacing[0], g1 / g.spacing[1], g2 / g.spacing[2]);
  return out;
}

double interpolate_value(const Volume& v, const Vec& p, double outside) {
  const Interpolated s = interpolate(v, p);
  return s.inside ? s.value : outside;
}

double nearest_value(const Volume& v, const Vec& p, double outside) {
  const Grid& g = v.grid;
  Index3 idx{0, 0, 0};
  for (int a = 0; a < g.dim; ++a) {
    const double c = std::round((p[a] - g.origin[a]) / g.spacing[a]);
    if (!(c >= 0.0 && c <= g.dims[a] - 1)) return outside;
    idx[a] = static_cast<int>(c);
  }
  return v.data[g.flatten(idx)];
}

bool SampleSet::in_overlap(std::size_t s) const {
  for (const auto& mask : inside) {
    if (!mask[s]) return false;
  }
  return true;
}

SampleSet draw_samples(const Grid& grid, double rate, std::uint64_t seed) {
  if (!(rate > 0.0 && rate <= 1.0)) throw InvalidArgument("sample rate must lie in (0, 1]");
  const std::size_t total = grid.size();
  const auto count = std::min<std::size_t>(
      total, static_cast<std::size_t>(std::ceil(rate * static_cast<double>(total) - 1e-9)));
  SampleSet out;
  if (count == total) {
    out.indices.resize(total);
    std::iota(out.indices.begin(), out.indices.end(), std::size_t{0});
  } else {
    std::vector<std::size_t> all(total);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    out.indices.reserve(count);
    std::sample(all.begin(), all.end(), std::back_inserter(out.indices), count, rng);
  }
  out.points.reserve(out.indices.size());
  for (std::size_t i : out.indices) out.points.push_back(grid.point(i));
  return out;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& x : k) x /= sum;
  return k;
}

}  // namespace

Volume gaussian_smooth(const Volume& v, double sigma) {
  Volume out = v;
  if (sigma <= 0.0) return out;
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const Grid& g = v.grid;
  std::vector<double> buffer(v.data.size());
  for (int axis = 0; axis < g.dim; ++axis) {
    std::size_t stride = 1;
    for (int a = g.dim - 1; a > axis; --a) stride *= g.dims[a];
    const int n = g.dims[axis];
    for (std::size_t flat = 0; flat < out.data.size(); ++flat) {
      const int i = static_cast<int>((flat / stride) % n);
      const std::size_t line_start = flat - static_cast<std::size_t>(i) * stride;
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int j = std::clamp(i + k, 0, n - 1);
        acc += kernel[k + radius] * out.data[line_start + static_cast<std::size_t>(j) * stride];
      }
      buffer[flat] = acc;
    }
    out.data.swap(buffer);
  }
  return out;
}

Grid downsample_grid(const Grid& g, int factor) {
  if (factor < 1) throw InvalidArgument("downsample factor must be >= 1");
  Grid out = g;
  for (int a = 0; a < g.dim; ++a) {
    out.dims[a] = std::max(2, (g.dims[a] - 1) / factor + 1);
    out.spacing[a] = g.spacing[a] * factor;
  }
  return out;
}

Volume downsample(const Volume& v, int factor) {
  if (factor == 1) return v;
  const Grid coarse = downsample_grid(v.grid, factor);
  std::vector<double> data(coarse.size());
  for (std::size_t flat = 0; flat < data.size(); ++flat) {
    Index3 idx = coarse.unflatten(flat);
    for (int a = 0; a < coarse.dim; ++a) idx[a] = std::min(idx[a] * factor, v.grid.dims[a] - 1);
    data[flat] = v.data[v.grid.flatten(idx)];
  }
  return Volume(coarse, std::move(data), v.modality);
}

}  // namespace xcoreg
