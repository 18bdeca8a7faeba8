#include "xcoreg/metrics.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "xcoreg/error.hpp"

namespace xcoreg {

MetricKind parse_metric_kind(const std::string& key) {
  if (key == "xmetric") return MetricKind::xmetric;
  if (key == "xmetric-gt") return MetricKind::xmetric_gt;
  if (key == "cg") return MetricKind::congealing;
  if (key == "ape") return MetricKind::ape;
  if (key == "cte") return MetricKind::cte;
  if (key == "vi") return MetricKind::vi;
  if (key == "gmm") return MetricKind::gmm;
  throw InvalidArgument("unknown metric key '" + key + "'");
}

std::string to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::xmetric: return "xmetric";
    case MetricKind::xmetric_gt: return "xmetric-gt";
    case MetricKind::congealing: return "cg";
    case MetricKind::ape: return "ape";
    case MetricKind::cte: return "cte";
    case MetricKind::vi: return "vi";
    case MetricKind::gmm: return "gmm";
  }
  return "unknown";
}

MetricContext build_context(std::span<const Volume> images, std::span<const TransformChain> transforms,
                            const Grid& common, std::span<const std::size_t> indices,
                            std::span<const Binning> binning) {
  const std::size_t n = images.size();
  if (transforms.size() != n || binning.size() != n)
    throw InvalidArgument("build_context: one transform and binning per image required");
  MetricContext ctx;
  ctx.dim = common.dim;
  ctx.num_images = n;
  ctx.drawn = indices.size();
  ctx.binning.assign(binning.begin(), binning.end());
  std::vector<double> values;
  values.reserve(indices.size() * n);
  ctx.spatial_gradient.reserve(indices.size() * n);
  ctx.stage_input.reserve(indices.size() * n);
  std::vector<double> row(n);
  std::vector<Vec> grads(n), inputs(n);
  for (std::size_t idx : indices) {
    const Vec x = common.point(idx);
    bool inside = true;
    for (std::size_t j = 0; j < n && inside; ++j) {
      inputs[j] = transforms[j].last_stage_input(x);
      const Interpolated s = interpolate(images[j], transforms[j].last().apply(inputs[j]));
      inside = s.inside;
      row[j] = s.value;
      grads[j] = s.gradient;
    }
    if (!inside) continue;
    ctx.sample_index.push_back(idx);
    ctx.points.push_back(x);
    values.insert(values.end(), row.begin(), row.end());
    ctx.spatial_gradient.insert(ctx.spatial_gradient.end(), grads.begin(), grads.end());
    ctx.stage_input.insert(ctx.stage_input.end(), inputs.begin(), inputs.end());
  }
  const auto s_count = static_cast<Eigen::Index>(ctx.points.size());
  ctx.intensity.resize(s_count, static_cast<Eigen::Index>(n));
  for (Eigen::Index s = 0; s < s_count; ++s)
    for (std::size_t j = 0; j < n; ++j)
      ctx.intensity(s, static_cast<Eigen::Index>(j)) = values[static_cast<std::size_t>(s) * n + j];
  return ctx;
}

std::vector<Eigen::VectorXd> parameter_gradient(const MetricContext& ctx, const Eigen::MatrixXd& sensitivity,
                                                std::span<const TransformChain> transforms) {
  const std::size_t n = ctx.num_images;
  std::vector<Eigen::VectorXd> grads(n);
  for (std::size_t j = 0; j < n; ++j) {
    const Transform& t = transforms[j].last();
    grads[j] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(t.num_params()));
    std::span<double> g(grads[j].data(), static_cast<std::size_t>(grads[j].size()));
    for (std::size_t s = 0; s < ctx.samples(); ++s) {
      const double sens = sensitivity(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j));
      if (sens == 0.0) continue;
      const Vec force = sens * ctx.spatial_gradient[s * n + j];
      t.accumulate_param_gradient(ctx.stage_input[s * n + j], force, g);
    }
  }
  return grads;
}

namespace {

void require_samples(const MetricContext& ctx) {
  if (ctx.samples() == 0) throw NumericalError("metric evaluated on an empty overlap region");
}

Eigen::Index col(std::size_t j) { return static_cast<Eigen::Index>(j); }

std::span<const double> column(const Eigen::MatrixXd& m, std::size_t j) {
  return {m.col(col(j)).data(), static_cast<std::size_t>(m.rows())};
}

// Intensity scaled to [0, 1] by the image's binning range.
Eigen::MatrixXd scaled_intensities(const MetricContext& ctx) {
  Eigen::MatrixXd out = ctx.intensity;
  for (std::size_t j = 0; j < ctx.num_images; ++j) {
    const Binning& b = ctx.binning[j];
    out.col(col(j)) = (out.col(col(j)).array() - b.lo) / (b.hi - b.lo);
  }
  return out;
}

}  // namespace

MetricValue xmetric(const MetricContext& ctx, const CommonSpace& cs) {
  require_samples(ctx);
  const auto s_count = static_cast<Eigen::Index>(ctx.samples());
  if (cs.gamma.rows() != s_count) throw InvalidArgument("xmetric: gamma rows must align with the samples");
  MetricValue out;
  out.sensitivity = Eigen::MatrixXd::Zero(s_count, col(ctx.num_images));
  for (std::size_t j = 0; j < ctx.num_images; ++j) {
    const Binning& b = ctx.binning[j];
    validate(b);
    const JointTable jt = joint_table(column(ctx.intensity, j), cs.gamma, b);
    out.value += mutual_information(jt.p);
    const Eigen::MatrixXd g = mutual_information_gradient(jt.p, jt.normalizer);
    for (Eigen::Index s = 0; s < s_count; ++s) {
      const double u = ctx.intensity(s, col(j));
      const double slope = b.slope(u);
      if (slope == 0.0) continue;
      const ParzenStencil st = parzen_stencil(b, b.coordinate(u));
      double d = 0.0;
      for (int k = 0; k < cs.classes; ++k) {
        const double gk = cs.gamma(s, k);
        if (gk == 0.0) continue;
        double acc = 0.0;
        for (int i = 0; i < st.count; ++i) acc += g(k, st.first + i) * st.deriv[i];
        d += gk * acc;
      }
      out.sensitivity(s, col(j)) = d * slope;
    }
  }
  return out;
}

MetricValue congealing(const MetricContext& ctx, double sigma) {
  require_samples(ctx);
  const std::size_t n = ctx.num_images;
  if (n < 2) throw InvalidArgument("congealing needs at least 2 images");
  if (!(sigma > 0.0)) throw InvalidArgument("congealing kernel width must be > 0");
  const Eigen::MatrixXd u = scaled_intensities(ctx);
  const auto s_count = static_cast<Eigen::Index>(ctx.samples());
  const double norm = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * sigma);
  const double inv_var = 1.0 / (sigma * sigma);
  const double scale = 1.0 / (static_cast<double>(s_count) * static_cast<double>(n));
  const double loo = 1.0 / static_cast<double>(n - 1);

  MetricValue out;
  out.sensitivity = Eigen::MatrixXd::Zero(s_count, col(n));
  Eigen::MatrixXd kernel(col(n), col(n)), kernel_d(col(n), col(n));
  Eigen::VectorXd density(col(n));
  for (Eigen::Index s = 0; s < s_count; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double d = u(s, col(i)) - u(s, col(j));
        const double g = norm * std::exp(-0.5 * d * d * inv_var);
        kernel(col(i), col(j)) = g;
        kernel_d(col(i), col(j)) = -d * inv_var * g;  // dG(u_i - u_j)/du_i
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) acc += kernel(col(i), col(j));
      density[col(i)] = std::max(acc * loo, 1e-300);
      out.value += scale * std::log(density[col(i)]);
    }
    for (std::size_t m = 0; m < n; ++m) {
      double d = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == m) continue;
        d += kernel_d(col(m), col(j)) * loo / density[col(m)];
        d -= kernel_d(col(j), col(m)) * loo / density[col(j)];
      }
      const Binning& b = ctx.binning[m];
      out.sensitivity(s, col(m)) = scale * d / (b.hi - b.lo);
    }
  }
  return out;
}

MetricValue ape(const MetricContext& ctx) {
  require_samples(ctx);
  const std::size_t n = ctx.num_images;
  if (n < 2) throw InvalidArgument("APE needs at least 2 images");
  const auto s_count = static_cast<Eigen::Index>(ctx.samples());
  std::vector<ParzenStencil> st(static_cast<std::size_t>(s_count) * n);
  Eigen::MatrixXd slope(s_count, col(n));
  for (std::size_t j = 0; j < n; ++j) {
    const Binning& b = ctx.binning[j];
    validate(b);
    for (Eigen::Index s = 0; s < s_count; ++s) {
      const double u = ctx.intensity(s, col(j));
      st[static_cast<std::size_t>(s) * n + j] = parzen_stencil(b, b.coordinate(u));
      slope(s, col(j)) = b.slope(u);
    }
  }
  MetricValue out;
  out.sensitivity = Eigen::MatrixXd::Zero(s_count, col(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(ctx.binning[i].levels, ctx.binning[j].levels);
      for (Eigen::Index s = 0; s < s_count; ++s) {
        const ParzenStencil& a = st[static_cast<std::size_t>(s) * n + i];
        const ParzenStencil& b = st[static_cast<std::size_t>(s) * n + j];
        for (int p = 0; p < a.count; ++p)
          for (int q = 0; q < b.count; ++q) acc(a.first + p, b.first + q) += a.weight[p] * b.weight[q];
      }
      const double z = acc.sum();
      const Eigen::MatrixXd prob = acc / z;
      out.value += mutual_information(prob);
      const Eigen::MatrixXd g = mutual_information_gradient(prob, z);
      for (Eigen::Index s = 0; s < s_count; ++s) {
        const ParzenStencil& a = st[static_cast<std::size_t>(s) * n + i];
        const ParzenStencil& b = st[static_cast<std::size_t>(s) * n + j];
        double di = 0.0, dj = 0.0;
        for (int p = 0; p < a.count; ++p) {
          for (int q = 0; q < b.count; ++q) {
            const double gv = g(a.first + p, b.first + q);
            di += gv * a.deriv[p] * b.weight[q];
            dj += gv * a.weight[p] * b.deriv[q];
          }
        }
        out.sensitivity(s, col(i)) += di * slope(s, col(i));
        out.sensitivity(s, col(j)) += dj * slope(s, col(j));
      }
    }
  }
  return out;
}

PcaTemplate pca_template(const MetricContext& ctx) {
  require_samples(ctx);
  const Eigen::MatrixXd u = scaled_intensities(ctx);
  const Eigen::RowVectorXd mean = u.colwise().mean();
  const Eigen::MatrixXd centered = u.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(u.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("PCA eigen-decomposition failed");
  PcaTemplate out;
  const Eigen::Index top = cov.rows() - 1;
  out.eigenvalue = eig.eigenvalues()[top];
  if (!(out.eigenvalue > 1e-14)) throw NumericalError("CTE: zero-variance image group");
  out.direction = eig.eigenvectors().col(top);
  if (out.direction.sum() < 0.0) out.direction = -out.direction;
  out.values = u * out.direction;
  return out;
}

MetricValue cte(const MetricContext& ctx) {
  require_samples(ctx);
  const std::size_t n = ctx.num_images;
  if (n < 2) throw InvalidArgument("CTE needs at least 2 images");
  const auto s_count = static_cast<Eigen::Index>(ctx.samples());
  const double s_real = static_cast<double>(s_count);
  const Eigen::MatrixXd u = scaled_intensities(ctx);
  const Eigen::MatrixXd centered = u.rowwise() - u.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / s_real;
  const PcaTemplate pt = pca_template(ctx);
  const Eigen::VectorXd& w = pt.direction;

  // Template binning spans the range reachable from scaled inputs in [0, 1].
  double lo_v = 0.0, range = 0.0;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    lo_v += std::min(0.0, w[j]);
    range += std::abs(w[j]);
  }
  const Binning tb{ctx.binning[0].levels, lo_v, lo_v + range, ctx.binning[0].bandwidth};
  validate(tb);
  const double tb_scale = tb.levels - 1;
  std::vector<ParzenStencil> st_v(static_cast<std::size_t>(s_count));
  Eigen::VectorXd coord_v(s_count);
  for (Eigen::Index s = 0; s < s_count; ++s) {
    coord_v[s] = tb.coordinate(pt.values[s]);
    st_v[static_cast<std::size_t>(s)] = parzen_stencil(tb, coord_v[s]);
  }

  MetricValue out;
  Eigen::MatrixXd sens = Eigen::MatrixXd::Zero(s_count, col(n));  // w.r.t. scaled intensities
  Eigen::VectorXd grad_coord_v = Eigen::VectorXd::Zero(s_count);
  for (std::size_t j = 0; j < n; ++j) {
    const Binning& b = ctx.binning[j];
    validate(b);
    std::vector<ParzenStencil> st_u(static_cast<std::size_t>(s_count));
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(b.levels, tb.levels);
    for (Eigen::Index s = 0; s < s_count; ++s) {
      auto& su = st_u[static_cast<std::size_t>(s)];
      su = parzen_stencil(b, b.coordinate(ctx.intensity(s, col(j))));
      const auto& sv = st_v[static_cast<std::size_t>(s)];
      for (int p = 0; p < su.count; ++p)
        for (int q = 0; q < sv.count; ++q) acc(su.first + p, sv.first + q) += su.weight[p] * sv.weight[q];
    }
    const double z = acc.sum();
    const Eigen::MatrixXd prob = acc / z;
    const Eigen::VectorXd pv = prob.colwise().sum().transpose();
    double neg_cond_entropy = 0.0;
    for (Eigen::Index a = 0; a < prob.rows(); ++a)
      for (Eigen::Index c = 0; c < prob.cols(); ++c)
        if (prob(a, c) > 0.0) neg_cond_entropy += prob(a, c) * std::log(prob(a, c) / pv[c]);
    out.value += neg_cond_entropy;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(prob.rows(), prob.cols());
    for (Eigen::Index a = 0; a < prob.rows(); ++a)
      for (Eigen::Index c = 0; c < prob.cols(); ++c)
        if (prob(a, c) > 0.0) g(a, c) = (std::log(prob(a, c) / pv[c]) - neg_cond_entropy) / z;
    for (Eigen::Index s = 0; s < s_count; ++s) {
      const auto& su = st_u[static_cast<std::size_t>(s)];
      const auto& sv = st_v[static_cast<std::size_t>(s)];
      double du = 0.0, dv = 0.0;
      for (int p = 0; p < su.count; ++p) {
        for (int q = 0; q < sv.count; ++q) {
          const double gv = g(su.first + p, sv.first + q);
          du += gv * su.deriv[p] * sv.weight[q];
          dv += gv * su.weight[p] * sv.deriv[q];
        }
      }
      // Bin coordinate of a scaled intensity is u * (L - 1).
      const double raw = ctx.intensity(s, col(j));
      if (b.slope(raw) != 0.0) sens(s, col(j)) += du * (b.levels - 1);
      grad_coord_v[s] += dv;
    }
  }

  // Template value v = w . u_scaled, coordinate = (v - lo_v) / range * (L - 1).
  Eigen::VectorXd d_value_dv = grad_coord_v * (tb_scale / range);
  double d_lo = 0.0, d_range = 0.0;
  for (Eigen::Index s = 0; s < s_count; ++s) {
    d_lo += grad_coord_v[s] * (-tb_scale / range);
    d_range += grad_coord_v[s] * (-coord_v[s] / range);
  }
  Eigen::VectorXd d_w = u.transpose() * d_value_dv;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    if (w[j] < 0.0) d_w[j] += d_lo;
    d_w[j] += d_range * (w[j] > 0.0 ? 1.0 : (w[j] < 0.0 ? -1.0 : 0.0));
  }
  sens += d_value_dv * w.transpose();

  // Eigenvector sensitivity: dw = (lambda I - C)^+ dC w.
  const auto nn = static_cast<Eigen::Index>(n);
  const Eigen::MatrixXd shifted =
      pt.eigenvalue * Eigen::MatrixXd::Identity(nn, nn) - cov + w * w.transpose();
  const Eigen::VectorXd rhs = d_w - d_w.dot(w) * w;
  const Eigen::VectorXd y = shifted.fullPivLu().solve(rhs);
  const Eigen::VectorXd cw = centered * w;
  const Eigen::VectorXd cy = centered * y;
  Eigen::MatrixXd d_centered = (cw * y.transpose() + cy * w.transpose()) / s_real;
  d_centered = d_centered.rowwise() - d_centered.colwise().mean();
  sens += d_centered;

  out.sensitivity = Eigen::MatrixXd::Zero(s_count, col(n));
  for (std::size_t j = 0; j < n; ++j) {
    const Binning& b = ctx.binning[j];
    for (Eigen::Index s = 0; s < s_count; ++s) {
      if (b.slope(ctx.intensity(s, col(j))) == 0.0) continue;
      out.sensitivity(s, col(j)) = sens(s, col(j)) / (b.hi - b.lo);
    }
  }
  return out;
}

MetricValue vi(const MetricContext& ctx) {
  require_samples(ctx);
  const std::size_t n = ctx.num_images;
  if (n < 2) throw InvalidArgument("VI needs at least 2 images");
  const auto s_count = static_cast<Eigen::Index>(ctx.samples());
  const Eigen::VectorXd mean = ctx.intensity.rowwise().mean();
  const Eigen::MatrixXd dev = ctx.intensity.colwise() - mean;
  const double scale = 1.0 / (static_cast<double>(s_count) * static_cast<double>(n));
  MetricValue out;
  out.value = -scale * dev.squaredNorm();
  out.sensitivity = -2.0 * scale * dev;
  return out;
}

}  // namespace xcoreg
