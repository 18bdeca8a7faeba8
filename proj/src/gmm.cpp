#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Cholesky>

#include "xcoreg/error.hpp"
#include "xcoreg/metrics.hpp"

namespace xcoreg {

namespace {

struct Component {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_norm = 0.0;  // log weight - 0.5 (d log 2pi + log det C)
};

Eigen::MatrixXd pooled_covariance(const Eigen::MatrixXd& data) {
  const Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(1, data.rows()));
}

double ridge_for(const Eigen::MatrixXd& data) {
  const double v = pooled_covariance(data).diagonal().mean();
  return 1e-6 * (v > 0.0 ? v : 1.0);
}

std::vector<Component> factorize(const GmmModel& model) {
  std::vector<Component> out(static_cast<std::size_t>(model.components()));
  for (int k = 0; k < model.components(); ++k) {
    auto& c = out[static_cast<std::size_t>(k)];
    const auto& cov = model.covariances[static_cast<std::size_t>(k)];
    c.llt.compute(cov);
    if (c.llt.info() != Eigen::Success) throw NumericalError("GMM covariance is not positive definite");
    const Eigen::MatrixXd l = c.llt.matrixL();
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    const double w = model.weights[static_cast<std::size_t>(k)];
    c.log_norm = (w > 0.0 ? std::log(w) : -1e300) -
                 0.5 * (static_cast<double>(cov.rows()) * std::log(2.0 * std::numbers::pi) + log_det);
  }
  return out;
}

// Per-row log joint densities log(w_k N(x; m_k, C_k)), rows x K.
Eigen::MatrixXd log_joint(const Eigen::MatrixXd& data, const GmmModel& model, const std::vector<Component>& comps) {
  Eigen::MatrixXd out(data.rows(), model.components());
  for (int k = 0; k < model.components(); ++k) {
    const Eigen::MatrixXd diff =
        (data.rowwise() - model.means[static_cast<std::size_t>(k)].transpose()).transpose();
    const Eigen::MatrixXd z = comps[static_cast<std::size_t>(k)].llt.matrixL().solve(diff);
    out.col(k) = comps[static_cast<std::size_t>(k)].log_norm - 0.5 * z.colwise().squaredNorm().transpose().array();
  }
  return out;
}

Eigen::VectorXd log_sum_rows(const Eigen::MatrixXd& m) {
  Eigen::VectorXd out(m.rows());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    out[r] = mx + std::log((m.row(r).array() - mx).exp().sum());
  }
  return out;
}

void check_data(const Eigen::MatrixXd& data, const GmmModel& model) {
  if (data.rows() == 0) throw InvalidArgument("GMM evaluated on an empty sample set");
  if (model.components() < 1) throw InvalidArgument("GMM needs at least one component");
  for (const auto& m : model.means)
    if (m.size() != data.cols()) throw InvalidArgument("GMM dimension does not match the data");
}

}  // namespace

GmmModel gmm_init(const Eigen::MatrixXd& data, int components) {
  if (components < 1) throw InvalidArgument("GMM needs at least one component");
  if (data.rows() < components) throw InvalidArgument("GMM needs at least one sample per component");
  const Eigen::VectorXd key = data.rowwise().mean();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return key[a] < key[b]; });
  const double ridge = ridge_for(data);
  const Eigen::MatrixXd pooled = pooled_covariance(data);
  const auto d = data.cols();
  GmmModel model;
  const std::size_t n = order.size();
  for (int k = 0; k < components; ++k) {
    const std::size_t begin = n * static_cast<std::size_t>(k) / static_cast<std::size_t>(components);
    const std::size_t end = n * static_cast<std::size_t>(k + 1) / static_cast<std::size_t>(components);
    Eigen::MatrixXd group(static_cast<Eigen::Index>(end - begin), d);
    for (std::size_t i = begin; i < end; ++i) group.row(static_cast<Eigen::Index>(i - begin)) = data.row(order[i]);
    model.weights.push_back(static_cast<double>(end - begin) / static_cast<double>(n));
    model.means.push_back(group.colwise().mean().transpose());
    Eigen::MatrixXd cov = group.rows() > 1 ? pooled_covariance(group) : pooled;
    cov.diagonal().array() += ridge;
    model.covariances.push_back(cov);
  }
  return model;
}

double gmm_log_likelihood(const Eigen::MatrixXd& data, const GmmModel& model) {
  check_data(data, model);
  return log_sum_rows(log_joint(data, model, factorize(model))).mean();
}

GmmModel gmm_em_step(const Eigen::MatrixXd& data, const GmmModel& model) {
  check_data(data, model);
  const Eigen::MatrixXd lj = log_joint(data, model, factorize(model));
  const Eigen::VectorXd lse = log_sum_rows(lj);
  const Eigen::MatrixXd resp = (lj.colwise() - lse).array().exp();
  const double ridge = ridge_for(data);
  const Eigen::MatrixXd pooled = pooled_covariance(data);
  const auto d = data.cols();
  GmmModel next;
  next.resets = model.resets;
  for (int k = 0; k < model.components(); ++k) {
    const double nk = resp.col(k).sum();
    Eigen::MatrixXd cov;
    Eigen::VectorXd mean;
    if (nk > 1e-10) {
      mean = (data.transpose() * resp.col(k)) / nk;
      const Eigen::MatrixXd centered = data.rowwise() - mean.transpose();
      cov = centered.transpose() * resp.col(k).asDiagonal() * centered / nk;
      cov.diagonal().array() += ridge;
    } else {
      mean = model.means[static_cast<std::size_t>(k)];
    }
    if (nk <= 1e-10 || Eigen::LLT<Eigen::MatrixXd>(cov).info() != Eigen::Success || !cov.allFinite()) {
      cov = pooled + ridge * Eigen::MatrixXd::Identity(d, d);
      ++next.resets;
    }
    next.weights.push_back(nk / static_cast<double>(data.rows()));
    next.means.push_back(mean);
    next.covariances.push_back(cov);
  }
  return next;
}

MetricValue gmm_loglik(const MetricContext& ctx, const GmmModel& model) {
  if (ctx.samples() == 0) throw NumericalError("metric evaluated on an empty overlap region");
  const Eigen::MatrixXd& data = ctx.intensity;
  check_data(data, model);
  const auto comps = factorize(model);
  const Eigen::MatrixXd lj = log_joint(data, model, comps);
  const Eigen::VectorXd lse = log_sum_rows(lj);
  const Eigen::MatrixXd resp = (lj.colwise() - lse).array().exp();
  const double scale = 1.0 / static_cast<double>(data.rows());
  MetricValue out;
  out.value = lse.mean();
  out.sensitivity = Eigen::MatrixXd::Zero(data.rows(), data.cols());
  for (int k = 0; k < model.components(); ++k) {
    const Eigen::MatrixXd diff =
        (data.rowwise() - model.means[static_cast<std::size_t>(k)].transpose()).transpose();
    const Eigen::MatrixXd prec_diff = comps[static_cast<std::size_t>(k)].llt.solve(diff);
    out.sensitivity -= scale * (prec_diff * resp.col(k).asDiagonal()).transpose();
  }
  return out;
}

}  // namespace xcoreg
