#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "xcoreg/density.hpp"
#include "xcoreg/error.hpp"
#include "xcoreg/metrics.hpp"

using namespace xcoreg;

namespace {

// A context built straight from a samples x N intensity matrix.
MetricContext make_context(const Eigen::MatrixXd& data, int levels = 16) {
  MetricContext ctx;
  ctx.num_images = static_cast<std::size_t>(data.cols());
  ctx.drawn = static_cast<std::size_t>(data.rows());
  ctx.intensity = data;
  for (Eigen::Index s = 0; s < data.rows(); ++s) {
    ctx.sample_index.push_back(static_cast<std::size_t>(s));
    ctx.points.push_back(Vec::Zero());
  }
  for (Eigen::Index j = 0; j < data.cols(); ++j) ctx.binning.push_back(Binning::from_range(levels, -0.1, 1.1));
  return ctx;
}

Eigen::MatrixXd uniform_data(Eigen::Index rows, Eigen::Index cols, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Correlated group: a shared signal with per-image gain, offset and noise.
Eigen::MatrixXd correlated_data(Eigen::Index rows, Eigen::Index cols, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index s = 0; s < rows; ++s) {
    const double t = u(rng);
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double v = (j % 2 ? 1.0 - t : t) * (0.6 + 0.1 * j) + 0.1 + noise(rng);
      m(s, j) = std::clamp(v, 0.0, 1.0);
    }
  }
  return m;
}

RowMatrix softmax_rows(Eigen::Index rows, int k, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.5);
  RowMatrix g(rows, k);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (int c = 0; c < k; ++c) g(r, c) = std::exp(n(rng));
    g.row(r) /= g.row(r).sum();
  }
  return g;
}

CommonSpace space_from(const RowMatrix& gamma) {
  CommonSpace cs;
  cs.classes = static_cast<int>(gamma.cols());
  cs.gamma = gamma;
  cs.pi = gamma.colwise().mean().transpose();
  return cs;
}

using Metric = std::function<MetricValue(const MetricContext&)>;

// Worst relative error of the intensity sensitivity against central differences.
double sensitivity_error(const Metric& metric, const MetricContext& ctx, double h = 1e-6) {
  const MetricValue mv = metric(ctx);
  Eigen::MatrixXd fd(mv.sensitivity.rows(), mv.sensitivity.cols());
  for (Eigen::Index s = 0; s < fd.rows(); ++s) {
    for (Eigen::Index j = 0; j < fd.cols(); ++j) {
      MetricContext p = ctx, m = ctx;
      p.intensity(s, j) += h;
      m.intensity(s, j) -= h;
      fd(s, j) = (metric(p).value - metric(m).value) / (2 * h);
    }
  }
  return (mv.sensitivity - fd).norm() / std::max(fd.norm(), 1e-12);
}

Eigen::MatrixXd permute_columns(const Eigen::MatrixXd& m, const std::vector<int>& perm) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t j = 0; j < perm.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(perm[j]);
  return out;
}

}  // namespace

TEST(MetricKind, ParseRoundTrip) {
  for (const char* key : {"xmetric", "xmetric-gt", "cg", "ape", "cte", "vi", "gmm"})
    EXPECT_EQ(to_string(parse_metric_kind(key)), key);
  EXPECT_THROW(parse_metric_kind("nmi"), InvalidArgument);
}

TEST(Metrics, EmptyOverlapIsNumericalError) {
  const MetricContext ctx = make_context(Eigen::MatrixXd(0, 3));
  EXPECT_THROW(vi(ctx), NumericalError);
  EXPECT_THROW(ape(ctx), NumericalError);
  EXPECT_THROW(xmetric(ctx, space_from(RowMatrix(0, 2))), NumericalError);
}

TEST(Xmetric, ConstantGammaGivesZero) {
  const MetricContext ctx = make_context(uniform_data(300, 4, 1));
  const MetricValue mv = xmetric(ctx, space_from(RowMatrix::Constant(300, 3, 1.0 / 3)));
  EXPECT_NEAR(mv.value, 0.0, 1e-12);
  EXPECT_LT(mv.sensitivity.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Xmetric, SeparatedOneHotClassesGiveClassEntropy) {
  // Two classes at opposite ends of the range never share a bin.
  Eigen::MatrixXd data(100, 1);
  RowMatrix gamma = RowMatrix::Zero(100, 2);
  for (Eigen::Index s = 0; s < 100; ++s) {
    const bool low = s < 50;
    data(s, 0) = low ? -0.1 : 1.1;
    gamma(s, low ? 0 : 1) = 1.0;
  }
  EXPECT_NEAR(xmetric(make_context(data), space_from(gamma)).value, std::log(2.0), 1e-12);
}

TEST(Xmetric, BoundedBySumOfClassEntropies) {
  const MetricContext ctx = make_context(correlated_data(400, 3, 2));
  const RowMatrix gamma = softmax_rows(400, 4, 3);
  const double hz = entropy(Eigen::VectorXd(gamma.colwise().mean().transpose()));
  const double v = xmetric(ctx, space_from(gamma)).value;
  EXPECT_GE(v, 0.0);
  EXPECT_LE(v, 3 * hz + 1e-9);
}

TEST(Xmetric, SensitivityMatchesFiniteDifferences) {
  for (unsigned seed = 0; seed < 5; ++seed) {
    const MetricContext ctx = make_context(correlated_data(60, 3, 10 + seed), 12);
    const CommonSpace cs = space_from(softmax_rows(60, 3, 20 + seed));
    EXPECT_LT(sensitivity_error([&](const MetricContext& c) { return xmetric(c, cs); }, ctx), 1e-5);
  }
}

TEST(Xmetric, ClassRelabelingInvariance) {
  const MetricContext ctx = make_context(correlated_data(200, 3, 4));
  const RowMatrix gamma = softmax_rows(200, 4, 5);
  RowMatrix relabeled(200, 4);
  const int perm[4] = {2, 0, 3, 1};
  for (int k = 0; k < 4; ++k) relabeled.col(k) = gamma.col(perm[k]);
  EXPECT_NEAR(xmetric(ctx, space_from(gamma)).value, xmetric(ctx, space_from(relabeled)).value, 1e-12);
}

TEST(Congealing, MatchesDirectStackEntropy) {
  const double sigma = 0.07;
  for (unsigned seed = 0; seed < 10; ++seed) {
    const Eigen::Index n = 2 + seed % 7;
    const Eigen::MatrixXd data = uniform_data(25, n, 30 + seed);
    const MetricContext ctx = make_context(data);
    double oracle = 0.0;
    for (Eigen::Index s = 0; s < data.rows(); ++s) {
      for (Eigen::Index i = 0; i < n; ++i) {
        double p = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
          if (j == i) continue;
          const double d = (data(s, i) - data(s, j)) / 1.2;  // scaled by the binning range
          p += std::exp(-d * d / (2 * sigma * sigma)) / (sigma * std::sqrt(2 * std::numbers::pi));
        }
        oracle += std::log(p / static_cast<double>(n - 1));
      }
    }
    oracle /= static_cast<double>(data.rows() * n);
    EXPECT_NEAR(congealing(ctx, sigma).value, oracle, 1e-10);
  }
}

TEST(Congealing, SensitivityAndRequirements) {
  const MetricContext ctx = make_context(correlated_data(30, 5, 6));
  EXPECT_LT(sensitivity_error([](const MetricContext& c) { return congealing(c); }, ctx), 1e-5);
  EXPECT_THROW(congealing(make_context(uniform_data(10, 1, 1))), InvalidArgument);
  EXPECT_THROW(congealing(ctx, 0.0), InvalidArgument);
  // Identical stacks score higher than scattered ones.
  Eigen::MatrixXd same(20, 6);
  for (Eigen::Index s = 0; s < 20; ++s) same.row(s).setConstant(0.05 * s);
  EXPECT_GT(congealing(make_context(same)).value, congealing(make_context(uniform_data(20, 6, 7))).value);
}

TEST(Ape, SumsPairwiseMutualInformation) {
  const Eigen::MatrixXd data = correlated_data(200, 4, 8);
  double pairs = 0.0;
  int count = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      Eigen::MatrixXd pair(200, 2);
      pair << data.col(i), data.col(j);
      pairs += ape(make_context(pair)).value;
      ++count;
    }
  }
  EXPECT_EQ(count, 6);
  EXPECT_NEAR(ape(make_context(data)).value, pairs, 1e-12);
}

TEST(Ape, DependentPairBeatsShuffledPair) {
  Eigen::MatrixXd same(300, 2);
  const Eigen::MatrixXd a = uniform_data(300, 1, 9);
  same << a, a;
  Eigen::MatrixXd shuffled(300, 2);
  shuffled << a, uniform_data(300, 1, 10);
  const double h = entropy(Eigen::VectorXd(Eigen::VectorXd::Constant(16, 1.0 / 16)));
  EXPECT_GT(ape(make_context(same)).value, 5 * ape(make_context(shuffled)).value);
  EXPECT_LE(ape(make_context(same)).value, h);
}

TEST(Ape, SensitivityMatchesFiniteDifferences) {
  const MetricContext ctx = make_context(correlated_data(50, 3, 11), 10);
  EXPECT_LT(sensitivity_error([](const MetricContext& c) { return ape(c); }, ctx), 1e-5);
}

TEST(Cte, RankOneDataRecoversDirection) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Eigen::Vector3d gain(0.9, 0.5, 0.2);
  Eigen::MatrixXd data(100, 3);
  for (Eigen::Index s = 0; s < 100; ++s) {
    const double t = u(rng);
    for (int j = 0; j < 3; ++j) data(s, j) = gain[j] * t + 0.05;
  }
  // Scaling by the common 1.2 range keeps the direction.
  const PcaTemplate pt = pca_template(make_context(data));
  EXPECT_NEAR(std::abs(pt.direction.dot(gain.normalized())), 1.0, 1e-10);
  EXPECT_GE(pt.direction.sum(), 0.0);
  EXPECT_NEAR(pt.direction.norm(), 1.0, 1e-12);
}

TEST(Cte, FlatGroupIsNumericalError) {
  EXPECT_THROW(cte(make_context(Eigen::MatrixXd::Constant(20, 3, 0.5))), NumericalError);
}

TEST(Cte, SensitivityMatchesFiniteDifferences) {
  for (unsigned seed = 0; seed < 3; ++seed) {
    const MetricContext ctx = make_context(correlated_data(40, 3, 13 + seed), 10);
    EXPECT_LT(sensitivity_error([](const MetricContext& c) { return cte(c); }, ctx), 1e-4);
  }
}

TEST(Vi, ClosedForms) {
  Eigen::MatrixXd two(10, 2);
  two.col(0).setConstant(0.3);
  two.col(1).setConstant(0.8);
  EXPECT_NEAR(vi(make_context(two)).value, -0.25 * 0.25, 1e-15);
  EXPECT_EQ(vi(make_context(Eigen::MatrixXd::Constant(10, 4, 0.7))).value, 0.0);

  const Eigen::MatrixXd data = uniform_data(50, 5, 14);
  double oracle = 0.0;
  for (Eigen::Index s = 0; s < 50; ++s) {
    const double m = data.row(s).mean();
    for (Eigen::Index j = 0; j < 5; ++j) oracle -= (data(s, j) - m) * (data(s, j) - m);
  }
  EXPECT_NEAR(vi(make_context(data)).value, oracle / 250.0, 1e-14);
  EXPECT_LT(sensitivity_error([](const MetricContext& c) { return vi(c); }, make_context(data)), 1e-7);
}

TEST(Metrics, ImageAndSampleOrderInvariance) {
  const Eigen::MatrixXd data = correlated_data(120, 4, 15);
  const std::vector<int> perm{3, 1, 0, 2};
  const MetricContext a = make_context(data);
  const MetricContext b = make_context(permute_columns(data, perm));
  Eigen::MatrixXd rows = data.colwise().reverse();
  const MetricContext c = make_context(rows);
  const RowMatrix gamma = softmax_rows(120, 3, 16);
  const RowMatrix gamma_rev = gamma.colwise().reverse();
  const std::vector<std::pair<const char*, Metric>> metrics{
      {"cg", [](const MetricContext& x) { return congealing(x); }},
      {"ape", [](const MetricContext& x) { return ape(x); }},
      {"cte", [](const MetricContext& x) { return cte(x); }},
      {"vi", [](const MetricContext& x) { return vi(x); }},
  };
  for (const auto& [name, m] : metrics) {
    EXPECT_NEAR(m(a).value, m(b).value, 1e-10) << name;
    EXPECT_NEAR(m(a).value, m(c).value, 1e-10) << name;
  }
  EXPECT_NEAR(xmetric(a, space_from(gamma)).value, xmetric(b, space_from(gamma)).value, 1e-12);
  EXPECT_NEAR(xmetric(a, space_from(gamma)).value, xmetric(c, space_from(gamma_rev)).value, 1e-12);
}

TEST(Gmm, SingleComponentIsGaussianMle) {
  const Eigen::MatrixXd data = correlated_data(500, 2, 17);
  const GmmModel m = gmm_em_step(data, gmm_init(data, 1));
  const Eigen::RowVectorXd mean = data.colwise().mean();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (Eigen::Index s = 0; s < 500; ++s) {
    const Eigen::Vector2d d = (data.row(s) - mean).transpose();
    cov += d * d.transpose();
  }
  cov /= 500.0;
  const double ridge = 1e-6 * cov.diagonal().mean();
  EXPECT_NEAR(m.weights[0], 1.0, 1e-12);
  EXPECT_LT((m.means[0] - mean.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((m.covariances[0] - cov - ridge * Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(), 1e-12);

  const Eigen::Matrix2d c = m.covariances[0];
  const Eigen::Matrix2d ci = c.inverse();
  double ll = 0.0;
  for (Eigen::Index s = 0; s < 500; ++s) {
    const Eigen::Vector2d d = (data.row(s) - mean).transpose();
    ll += -std::log(2 * std::numbers::pi) - 0.5 * std::log(c.determinant()) - 0.5 * d.dot(ci * d);
  }
  EXPECT_NEAR(gmm_log_likelihood(data, m), ll / 500.0, 1e-10);
}

TEST(Gmm, RecoversTwoWellSeparatedComponents) {
  std::mt19937_64 rng(18);
  std::normal_distribution<double> n(0.0, 0.03);
  Eigen::MatrixXd data(600, 2);
  for (Eigen::Index s = 0; s < 600; ++s) {
    const bool first = s < 200;
    data(s, 0) = (first ? 0.2 : 0.7) + n(rng);
    data(s, 1) = (first ? 0.8 : 0.3) + n(rng);
  }
  GmmModel m = gmm_init(data, 2);
  for (int it = 0; it < 30; ++it) m = gmm_em_step(data, m);
  const int a = m.means[0][0] < m.means[1][0] ? 0 : 1;
  EXPECT_NEAR(m.weights[a], 1.0 / 3, 0.01);
  EXPECT_NEAR(m.means[a][0], 0.2, 0.01);
  EXPECT_NEAR(m.means[1 - a][1], 0.3, 0.01);
  EXPECT_NEAR(std::sqrt(m.covariances[a](0, 0)), 0.03, 0.005);
}

TEST(Gmm, EmNeverDecreasesLikelihood) {
  for (unsigned seed = 0; seed < 5; ++seed) {
    const Eigen::MatrixXd data = correlated_data(300, 3, 40 + seed);
    GmmModel m = gmm_init(data, 3);
    double prev = gmm_log_likelihood(data, m);
    for (int it = 0; it < 20; ++it) {
      m = gmm_em_step(data, m);
      const double ll = gmm_log_likelihood(data, m);
      EXPECT_GE(ll, prev - 1e-9);
      prev = ll;
    }
  }
}

TEST(Gmm, SensitivityAndValidation) {
  const Eigen::MatrixXd data = correlated_data(80, 2, 19);
  GmmModel m = gmm_init(data, 2);
  m = gmm_em_step(data, m);
  EXPECT_LT(sensitivity_error([&](const MetricContext& c) { return gmm_loglik(c, m); }, make_context(data)), 1e-5);
  EXPECT_THROW(gmm_init(data, 0), InvalidArgument);
  EXPECT_THROW(gmm_init(data.topRows(1), 2), InvalidArgument);
  EXPECT_THROW(gmm_log_likelihood(Eigen::MatrixXd::Zero(5, 3), m), InvalidArgument);
}

TEST(Congealing, DecreasesWithStackDispersion) {
  std::mt19937_64 rng(50);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd base(400);
  Eigen::MatrixXd shape(400, 5);
  for (Eigen::Index s = 0; s < 400; ++s) {
    base[s] = u(rng);
    for (int j = 0; j < 5; ++j) shape(s, j) = n(rng);
  }
  double prev = std::numeric_limits<double>::infinity();
  for (double spread : {0.01, 0.03, 0.06, 0.12}) {
    Eigen::MatrixXd data = (spread * shape).colwise() + base;
    const double v = congealing(make_context(data)).value;
    EXPECT_LT(v, prev) << spread;
    prev = v;
  }
}

TEST(Ape, IndependentNoiseIsNearZero) {
  const MetricContext ctx = make_context(uniform_data(10000, 2, 51));
  const double v = ape(ctx).value;
  EXPECT_GE(v, -1e-12);
  EXPECT_LT(v, 0.05);
}

TEST(Ape, IdenticalPairIsBoundedByMarginalEntropy) {
  // The Parzen stencil spreads each sample over neighbouring bins, so the
  // joint of X with itself is not diagonal and I(X, X) stays below H(X).
  const Eigen::MatrixXd a = uniform_data(2000, 1, 52);
  Eigen::MatrixXd same(2000, 2);
  same << a, a;
  const MetricContext ctx = make_context(same);
  const RowMatrix one = RowMatrix::Ones(2000, 1);
  const JointTable t = joint_table(std::span<const double>(a.data(), 2000), one, ctx.binning[0]);
  const double h = entropy(t.level_marginal());
  const double v = ape(ctx).value;
  EXPECT_LE(v, h + 1e-12);
  EXPECT_GT(v, 0.5 * h);
}

TEST(Ape, RemovingAnImageRemovesItsThreePairs) {
  const Eigen::MatrixXd data = correlated_data(150, 4, 53);
  double with_last = 0.0;
  for (int i = 0; i < 3; ++i) {
    Eigen::MatrixXd pair(150, 2);
    pair << data.col(i), data.col(3);
    with_last += ape(make_context(pair)).value;
  }
  const double full = ape(make_context(data)).value;
  const double reduced = ape(make_context(Eigen::MatrixXd(data.leftCols(3)))).value;
  EXPECT_NEAR(full - reduced, with_last, 1e-12);
}

TEST(Cte, IdenticalPairTemplateIsTheCommonImage) {
  const Eigen::MatrixXd a = uniform_data(200, 1, 54);
  Eigen::MatrixXd same(200, 2);
  same << a, a;
  const PcaTemplate pt = pca_template(make_context(same));
  EXPECT_NEAR(pt.direction[0], std::sqrt(0.5), 1e-10);
  EXPECT_NEAR(pt.direction[1], std::sqrt(0.5), 1e-10);
  const double v = cte(make_context(same)).value;
  EXPECT_GT(v, cte(make_context(correlated_data(200, 2, 55))).value);
  EXPECT_GT(v, cte(make_context(uniform_data(200, 2, 56))).value);
}

TEST(Vi, IdenticalImagesScoreZero) {
  const Eigen::MatrixXd a = uniform_data(100, 1, 57);
  Eigen::MatrixXd same(100, 3);
  same << a, a, a;
  EXPECT_NEAR(vi(make_context(same)).value, 0.0, 1e-15);
  EXPECT_LT(vi(make_context(uniform_data(100, 3, 58))).value, 0.0);
}

TEST(Gmm, RecoversKnownMixtureAtScale) {
  std::mt19937_64 rng(59);
  std::normal_distribution<double> n(0.0, 0.08);
  std::bernoulli_distribution pick(0.4);
  Eigen::MatrixXd data(10000, 2);
  for (Eigen::Index s = 0; s < data.rows(); ++s) {
    const bool first = pick(rng);
    data(s, 0) = (first ? 0.3 : 0.6) + n(rng);
    data(s, 1) = (first ? 0.7 : 0.4) + n(rng);
  }
  GmmModel m = gmm_init(data, 2);
  for (int it = 0; it < 100; ++it) m = gmm_em_step(data, m);
  const int a = m.means[0][0] < m.means[1][0] ? 0 : 1;
  EXPECT_NEAR(m.means[a][0], 0.3, 0.05);
  EXPECT_NEAR(m.means[a][1], 0.7, 0.05);
  EXPECT_NEAR(m.means[1 - a][0], 0.6, 0.05);
  EXPECT_NEAR(m.means[1 - a][1], 0.4, 0.05);
  EXPECT_NEAR(m.weights[a], 0.4, 0.05);
}
