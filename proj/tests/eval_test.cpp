#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "xcoreg/error.hpp"
#include "xcoreg/eval.hpp"
#include "xcoreg/phantom.hpp"

using namespace xcoreg;

namespace {

GroundTruth truth_with(std::vector<TransformChain> mis, const Grid& grid = Grid::make({20, 20}, {1, 1})) {
  GroundTruth gt;
  gt.grid = grid;
  gt.foreground = Volume(grid, 1.0);
  gt.misalignment = std::move(mis);
  return gt;
}

std::vector<TransformChain> shifts(std::initializer_list<double> xs) {
  std::vector<TransformChain> out;
  for (double x : xs) out.emplace_back(Transform::translation(2, Vec(x, 0.0, 0.0)));
  return out;
}

}  // namespace

TEST(Gre, HandExamples) {
  const auto id = identity_estimates(2, 2);
  EXPECT_NEAR(gre(truth_with(shifts({1.0, -1.0})), id), 1.0, 1e-12);
  EXPECT_NEAR(gre(truth_with(shifts({2.0, -2.0})), id), 2.0, 1e-12);
  EXPECT_NEAR(gre(truth_with(shifts({5.0, 5.0})), id), 0.0, 1e-12);
  // Three images at 0, 0, 3: centered residuals -1, -1, 2.
  EXPECT_NEAR(gre(truth_with(shifts({0.0, 0.0, 3.0})), identity_estimates(3, 2)), 4.0 / 3.0, 1e-12);
  EXPECT_NEAR(gwi(truth_with(shifts({1.0, -1.0})), id), 1.0, 1e-12);
  EXPECT_NEAR(gwi(truth_with(shifts({5.0, 5.0})), id), 0.0, 1e-12);
}

TEST(Gre, ExactInverseGivesZero) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  std::vector<TransformChain> mis, est;
  for (int j = 0; j < 4; ++j) {
    Eigen::Matrix3d a = Eigen::Matrix3d::Identity();
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) a(r, c) += u(rng);
    const Vec b(10 * u(rng), 10 * u(rng), 0.0);
    mis.emplace_back(Transform::affine(2, a, b));
    const Eigen::Matrix3d ai = a.inverse();
    est.emplace_back(Transform::affine(2, ai, -ai * b));
  }
  const GroundTruth gt = truth_with(mis);
  EXPECT_NEAR(gre(gt, est), 0.0, 1e-10);
  EXPECT_NEAR(gwi(gt, est), 0.0, 1e-10);
  EXPECT_GT(gre(gt, identity_estimates(4, 2)), 0.1);
}

TEST(Gre, InvariantToCommonMapAndImageOrder) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<TransformChain> mis, est;
  for (int j = 0; j < 3; ++j) {
    mis.emplace_back(Transform::translation(2, Vec(u(rng), u(rng), 0.0)));
    est.emplace_back(Transform::translation(2, Vec(u(rng), u(rng), 0.0)));
  }
  const double base = gre(truth_with(mis), est);
  // A shared translation after the misalignment moves every residual equally.
  std::vector<TransformChain> shifted = mis;
  for (auto& c : shifted) c.stages.push_back(Transform::translation(2, Vec(4.0, -7.0, 0.0)));
  EXPECT_NEAR(gre(truth_with(shifted), est), base, 1e-12);
  std::vector<TransformChain> mis_r(mis.rbegin(), mis.rend()), est_r(est.rbegin(), est.rend());
  EXPECT_NEAR(gre(truth_with(mis_r), est_r), base, 1e-12);
  EXPECT_NEAR(gwi(truth_with(mis_r), est_r), gwi(truth_with(mis), est), 1e-12);
}

TEST(Gre, MatchesDirectRmsOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  const Grid grid = Grid::make({16, 12}, {1.5, 2.0});
  std::vector<TransformChain> mis, est;
  for (int j = 0; j < 3; ++j) {
    mis.emplace_back(Transform::rigid(2, grid.center(), Vec(u(rng), 0, 0), Vec(20 * u(rng), 20 * u(rng), 0)));
    est.emplace_back(Transform::rigid(2, grid.center(), Vec(u(rng), 0, 0), Vec(20 * u(rng), 20 * u(rng), 0)));
  }
  const auto corners = grid.corners();
  double oracle = 0.0;
  for (int j = 0; j < 3; ++j) {
    double ss = 0.0;
    for (const Vec& v : corners) {
      Vec mean = Vec::Zero();
      for (int i = 0; i < 3; ++i) mean += (mis[i].apply(est[i].apply(v)) - v) / 3.0;
      ss += (mis[j].apply(est[j].apply(v)) - v - mean).squaredNorm();
    }
    oracle += std::sqrt(ss / corners.size()) / 3.0;
  }
  EXPECT_NEAR(gre(truth_with(mis, grid), est), oracle, 1e-12);
}

TEST(Gwi, UsesForegroundOnly) {
  const Grid grid = Grid::make({10, 10}, {1, 1});
  GroundTruth gt = truth_with(shifts({1.0, -1.0}), grid);
  gt.foreground = Volume(grid, 0.0);
  EXPECT_THROW(gwi(gt, identity_estimates(2, 2)), InvalidArgument);
  EXPECT_THROW(gre(gt, identity_estimates(3, 2)), InvalidArgument);
}

TEST(Dice, Examples) {
  const std::vector<int> a{1, 1, 0, 0}, b{1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(dice(a, b, 1), 0.5);
  EXPECT_DOUBLE_EQ(dice(a, a, 1), 1.0);
  EXPECT_DOUBLE_EQ(dice(a, std::vector<int>{0, 0, 1, 1}, 1), 0.0);
  EXPECT_DOUBLE_EQ(dice(a, b, 7), 1.0);
  EXPECT_THROW(dice(a, std::vector<int>{1}, 1), InvalidArgument);
  const std::vector<std::vector<int>> maps{a, a, b};
  EXPECT_DOUBLE_EQ(pairwise_dsc(maps, 1), (1.0 + 0.5 + 0.5) / 3.0);
  EXPECT_THROW(pairwise_dsc(std::span(maps).first(1), 1), InvalidArgument);
}

TEST(WarpLabels, IdentityShiftAndOutside) {
  const Grid grid = Grid::make({4, 3}, {1, 1});
  std::vector<int> labels(grid.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i);
  EXPECT_EQ(warp_labels(labels, grid, TransformChain(Transform::identity(TransformKind::translation, 2)), grid),
            labels);
  const auto shifted = warp_labels(labels, grid, TransformChain(Transform::translation(2, Vec(1, 0, 0))), grid);
  const Index3 last{3, 1, 0}, inner{1, 1, 0}, next{2, 1, 0};
  EXPECT_EQ(shifted[grid.flatten(last)], -1);
  EXPECT_EQ(shifted[grid.flatten(inner)], labels[grid.flatten(next)]);
}

TEST(Phantom, DeterministicAndComplete) {
  PhantomSpec ps;
  ps.dims = {64, 64};
  ps.seed = 5;
  const Phantom a = make_phantom(ps), b = make_phantom(ps);
  EXPECT_EQ(a.labels, b.labels);
  ASSERT_EQ(a.clean.size(), 3u);
  for (std::size_t m = 0; m < 3; ++m) EXPECT_EQ(a.clean[m].data, b.clean[m].data);
  ps.seed = 6;
  EXPECT_NE(make_phantom(ps).labels, a.labels);
  const std::set<int> seen(a.labels.begin(), a.labels.end());
  EXPECT_EQ(seen, (std::set<int>{0, 1, 2, 3}));
  for (std::size_t i = 0; i < a.labels.size(); ++i) EXPECT_EQ(a.labels[i] != 0, a.foreground.data[i] != 0.0);
}

TEST(Phantom, SomeModalitiesAreNegativelyCorrelated) {
  int negative = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PhantomSpec ps;
    ps.dims = {48, 48};
    ps.blob_sigma = 4.0;
    ps.seed = seed;
    const Phantom ph = make_phantom(ps);
    double worst = 1.0;
    for (int p = 0; p < 3; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        const Eigen::Map<const Eigen::VectorXd> x(ph.clean[p].data.data(), ph.grid.size());
        const Eigen::Map<const Eigen::VectorXd> y(ph.clean[q].data.data(), ph.grid.size());
        const Eigen::VectorXd xc = x.array() - x.mean(), yc = y.array() - y.mean();
        worst = std::min(worst, xc.dot(yc) / (xc.norm() * yc.norm()));
      }
    }
    negative += worst < 0.0;
  }
  EXPECT_GE(negative, 5);
}

TEST(Misalignment, RigidDrawsStayInBounds) {
  const Grid grid = Grid::make({64, 64}, {1, 1});
  MisalignmentSpec ms;
  ms.kind = TransformKind::rigid;
  ms.zero_mean = false;
  for (std::uint64_t seed = 0; seed < 250; ++seed) {
    for (const auto& c : make_misalignment(ms, grid, 4, seed)) {
      // 2D rigid parameters: center (2), angle, offset (2).
      const auto& p = c.last().params();
      EXPECT_DOUBLE_EQ(p[0], grid.center()[0]);
      EXPECT_LE(std::abs(p[2]), 15.0 * std::numbers::pi / 180.0);
      EXPECT_LE(std::abs(p[3]), 20.0);
      EXPECT_LE(std::abs(p[4]), 20.0);
    }
  }
}

TEST(Misalignment, FfdDrawsStayInBoundsAndZeroMeanHolds) {
  const Grid grid = Grid::make({64, 64}, {1, 1});
  MisalignmentSpec ms;
  ms.kind = TransformKind::ffd;
  ms.ffd_max_displacement = 3.0;
  ms.zero_mean = false;
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    for (const auto& c : make_misalignment(ms, grid, 1, seed))
      for (double p : c.last().params()) EXPECT_LE(std::abs(p), 3.0);
  ms.zero_mean = true;
  const auto group = make_misalignment(ms, grid, 5, 9);
  for (std::size_t i = 0; i < group[0].last().num_params(); ++i) {
    double sum = 0.0;
    for (const auto& c : group) sum += c.last().params()[i];
    EXPECT_NEAR(sum, 0.0, 1e-12);
  }
  ms.kind = TransformKind::affine;
  EXPECT_THROW(make_misalignment(ms, grid, 2, 1), InvalidArgument);
}

TEST(SyntheticCase, NoiseFreeIdentityReproducesClean) {
  PhantomSpec ps;
  ps.dims = {32, 32};
  ps.blob_sigma = 3.0;
  const Phantom ph = make_phantom(ps);
  std::vector<TransformChain> none(3, TransformChain(Transform::identity(TransformKind::translation, 2)));
  const SyntheticCase sc = make_case(ph, none, 0.0, 1);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(sc.images[j].data, ph.clean[j].data);
  ASSERT_EQ(sc.truth.labels.size(), 3u);
  EXPECT_EQ(sc.truth.labels[0], ph.labels);
  EXPECT_NEAR(gwi(sc.truth, identity_estimates(3, 2)), 0.0, 1e-12);
  EXPECT_THROW(make_case(ph, std::span(none).first(2), 0.0, 1), InvalidArgument);
}

TEST(CardiacSequence, ShapeAndLabels) {
  SequenceSpec ss;
  ss.dims = {48, 48};
  ss.frames = 6;
  ss.seed = 3;
  const SyntheticCase sc = make_cardiac_sequence(ss);
  ASSERT_EQ(sc.images.size(), 6u);
  ASSERT_EQ(sc.truth.labels.size(), 6u);
  for (const auto& l : sc.truth.labels) {
    const std::set<int> seen(l.begin(), l.end());
    EXPECT_TRUE(seen.count(kMyocardiumLabel));
    EXPECT_LT(*seen.rbegin(), kSequenceClasses);
  }
  const SyntheticCase again = make_cardiac_sequence(ss);
  EXPECT_EQ(again.images[4].data, sc.images[4].data);
}
