#include "xcoreg/grid.hpp"

#include <cmath>
#include <string>

#include "xcoreg/error.hpp"

namespace xcoreg {

Grid Grid::make(const std::vector<int>& dims, const std::vector<double>& spacing,
                const std::vector<double>& origin) {
  const auto d = static_cast<int>(dims.size());
  if (d != 2 && d != 3) throw InvalidArgument("grid dimensionality must be 2 or 3");
  if (spacing.size() != dims.size()) throw InvalidArgument("spacing length does not match dims");
  if (!origin.empty() && origin.size() != dims.size())
    throw InvalidArgument("origin length does not match dims");
  Grid g;
  g.dim = d;
  for (int a = 0; a < d; ++a) {
    g.dims[a] = dims[a];
    g.spacing[a] = spacing[a];
    g.origin[a] = origin.empty() ? 0.0 : origin[a];
  }
  validate(g);
  return g;
}

void validate(const Grid& g) {
  if (g.dim != 2 && g.dim != 3) throw InvalidArgument("grid dimensionality must be 2 or 3");
  for (int a = 0; a < g.dim; ++a) {
    if (g.dims[a] < 2) throw InvalidArgument("grid extent must be >= 2 along every axis");
    if (!(g.spacing[a] > 0.0) || !std::isfinite(g.spacing[a]))
      throw InvalidArgument("grid spacing must be finite and > 0, axis " + std::to_string(a));
    if (!std::isfinite(g.origin[a])) throw InvalidArgument("grid origin must be finite");
  }
}

std::size_t Grid::size() const {
  std::size_t n = 1;
  for (int a = 0; a < dim; ++a) n *= static_cast<std::size_t>(dims[a]);
  return n;
}

std::size_t Grid::flatten(const Index3& idx) const {
  std::size_t flat = 0;
  for (int a = 0; a < dim; ++a) flat = flat * static_cast<std::size_t>(dims[a]) + idx[a];
  return flat;
}

Index3 Grid::unflatten(std::size_t flat) const {
  Index3 idx{0, 0, 0};
  for (int a = dim - 1; a >= 0; --a) {
    idx[a] = static_cast<int>(flat % static_cast<std::size_t>(dims[a]));
    flat /= static_cast<std::size_t>(dims[a]);
  }
  return idx;
}

Vec Grid::point(const Index3& idx) const {
  Vec p = Vec::Zero();
  for (int a = 0; a < dim; ++a) p[a] = origin[a] + idx[a] * spacing[a];
  return p;
}

Vec Grid::continuous_index(const Vec& p) const {
  Vec c = Vec::Zero();
  for (int a = 0; a < dim; ++a) c[a] = (p[a] - origin[a]) / spacing[a];
  return c;
}

std::vector<Vec> Grid::corners() const {
  std::vector<Vec> out;
  const int count = 1 << dim;
  out.reserve(count);
  for (int m = 0; m < count; ++m) {
    Index3 idx{0, 0, 0};
    for (int a = 0; a < dim; ++a) idx[a] = (m >> (dim - 1 - a)) & 1 ? dims[a] - 1 : 0;
    out.push_back(point(idx));
  }
  return out;
}

Vec Grid::center() const {
  Vec c = Vec::Zero();
  for (int a = 0; a < dim; ++a) c[a] = origin[a] + 0.5 * (dims[a] - 1) * spacing[a];
  return c;
}

Vec Grid::extent() const {
  Vec e = Vec::Zero();
  for (int a = 0; a < dim; ++a) e[a] = (dims[a] - 1) * spacing[a];
  return e;
}

bool Grid::operator==(const Grid& o) const {
  if (dim != o.dim) return false;
  for (int a = 0; a < dim; ++a) {
    if (dims[a] != o.dims[a] || spacing[a] != o.spacing[a] || origin[a] != o.origin[a]) return false;
  }
  return true;
}

}  // namespace xcoreg
