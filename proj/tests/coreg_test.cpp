#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "xcoreg/coreg.hpp"
#include "xcoreg/phantom.hpp"

using namespace xcoreg;

namespace {

Phantom small_phantom(std::uint64_t seed) {
  PhantomSpec ps;
  ps.dims = {48, 48};
  ps.blob_sigma = 4.0;
  ps.seed = seed;
  return make_phantom(ps);
}

std::vector<TransformChain> translations(std::initializer_list<Vec> offsets) {
  std::vector<TransformChain> out;
  for (const Vec& o : offsets) out.emplace_back(Transform::translation(2, o));
  return out;
}

CoRegConfig translation_config() {
  CoRegConfig cfg;
  cfg.transform = TransformKind::translation;
  cfg.classes = 4;
  cfg.levels = 32;
  cfg.sample_rate = 0.3;
  cfg.eta.translation = 0.25;
  cfg.pyramid = {PyramidLevel{1.0, 1, 100, 0.0}, PyramidLevel{0.0, 1, 100, 0.0}};
  cfg.max_iterations = 200;
  cfg.seed = 7;
  return cfg;
}

Vec translation_of(const TransformChain& c) {
  Vec v = Vec::Zero();
  v[0] = c.last().params()[0];
  v[1] = c.last().params()[1];
  return v;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> p{1.0, -2.0};
  const std::vector<double> g{0.0, 0.0}, eta{0.1, 0.1};
  AdamState st(2);
  for (int i = 0; i < 5; ++i) adam_step(p, g, st, eta);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
  EXPECT_EQ(st.step, 5);
}

TEST(Adam, ConstantGradientMovesByStepSize) {
  // Bias correction makes m_hat / sqrt(v_hat) = sign(g) exactly for a constant gradient.
  std::vector<double> p{0.0, 0.0};
  const std::vector<double> g{3.0, -0.5}, eta{0.1, 0.2};
  AdamState st(2);
  for (int i = 1; i <= 10; ++i) {
    adam_step(p, g, st, eta);
    EXPECT_NEAR(p[0], -0.1 * i, 1e-7);
    EXPECT_NEAR(p[1], 0.2 * i, 1e-6);
  }
}

TEST(Adam, ConvergesOnQuadraticBowl) {
  std::vector<double> p{5.0, -3.0, 1.0};
  const std::vector<double> eta(3, 0.05);
  const Eigen::Vector3d w(1.0, 10.0, 0.1);
  AdamState st(3);
  for (int i = 0; i < 3000; ++i) {
    std::vector<double> g(3);
    for (int k = 0; k < 3; ++k) g[k] = 2 * w[k] * (p[k] - 1.0);
    adam_step(p, g, st, eta);
  }
  for (double v : p) EXPECT_NEAR(v, 1.0, 0.05);
}

TEST(Adam, Validation) {
  std::vector<double> p{0.0};
  AdamState st(1);
  const std::vector<double> eta{0.1};
  EXPECT_THROW(adam_step(p, std::vector<double>{NAN}, st, eta), NumericalError);
  EXPECT_THROW(adam_step(p, std::vector<double>{1.0, 2.0}, st, eta), InvalidArgument);
}

TEST(Convergence, Examples) {
  EXPECT_FALSE(check_convergence(std::vector<double>(19, 1.0), 10, 1e-5));
  EXPECT_TRUE(check_convergence(std::vector<double>(20, 1.0), 10, 1e-5));
  std::vector<double> ramp(40);
  std::iota(ramp.begin(), ramp.end(), 1.0);
  EXPECT_FALSE(check_convergence(ramp, 10, 1e-5));
  std::vector<double> step(20, 2.0);
  std::fill(step.begin() + 10, step.end(), 2.0 + 1e-6);
  EXPECT_TRUE(check_convergence(step, 10, 1e-5));
  std::fill(step.begin() + 10, step.end(), 2.1);
  EXPECT_FALSE(check_convergence(step, 10, 1e-5));
  EXPECT_THROW(check_convergence(step, 0, 1e-5), InvalidArgument);
}

TEST(Convergence, NoisyPlateauIsDetectedAtLooseTolerance) {
  // Window means of i.i.d. noise with sd 1e-3 around -2 differ by about 4.5e-4,
  // i.e. 2.2e-4 relative; rtol 1e-3 accepts almost always, 1e-6 almost never.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(-2.0, 1e-3);
  int loose = 0, tight = 0;
  for (int t = 0; t < 500; ++t) {
    std::vector<double> v(20);
    for (double& x : v) x = n(rng);
    loose += check_convergence(v, 10, 1e-3);
    tight += check_convergence(v, 10, 1e-6);
  }
  EXPECT_GT(loose, 490);
  EXPECT_LT(tight, 10);
}

TEST(Config, Validation) {
  CoRegConfig ok = translation_config();
  EXPECT_NO_THROW(validate(ok));
  auto bad = [&](auto mutate) {
    CoRegConfig c = ok;
    mutate(c);
    EXPECT_THROW(validate(c), InvalidArgument);
  };
  bad([](CoRegConfig& c) { c.sample_rate = 0.0; });
  bad([](CoRegConfig& c) { c.sample_rate = 1.5; });
  bad([](CoRegConfig& c) { c.classes = 1; });
  bad([](CoRegConfig& c) { c.levels = 1; });
  bad([](CoRegConfig& c) { c.lambda = -1.0; });
  bad([](CoRegConfig& c) { c.pyramid.clear(); });
  bad([](CoRegConfig& c) { c.max_iterations = 150; });
  bad([](CoRegConfig& c) { c.pyramid[0].factor = 0; });
  bad([](CoRegConfig& c) { c.transform = TransformKind::ffd; });
  CoRegConfig vi = ok;
  vi.metric = MetricKind::vi;
  vi.classes = 1;
  EXPECT_NO_THROW(validate(vi));
}

TEST(Coregister, InputValidation) {
  const Phantom ph = small_phantom(1);
  const CoRegConfig cfg = translation_config();
  EXPECT_THROW(coregister(std::span(ph.clean).first(1), cfg), InvalidArgument);
  RunOptions opts;
  opts.initial = translations({Vec::Zero()});
  EXPECT_THROW(coregister(ph.clean, cfg, opts), InvalidArgument);
  CoRegConfig gt = cfg;
  gt.metric = MetricKind::xmetric_gt;
  EXPECT_THROW(coregister(ph.clean, gt), InvalidArgument);
}

TEST(Coregister, AlignedGroupStaysNearIdentity) {
  const Phantom ph = small_phantom(2);
  const SyntheticCase sc = make_case(ph, translations({Vec::Zero(), Vec::Zero(), Vec::Zero()}), 0.01, 3);
  const RegistrationResult r = coregister(sc.images, translation_config());
  for (const auto& c : r.transforms) EXPECT_LT(translation_of(c).norm(), 0.3);
  EXPECT_LT(gwi(sc.truth, r.transforms), 0.3);
}

TEST(Coregister, IdenticalCopiesAreStationary) {
  const Phantom ph = small_phantom(14);
  const std::vector<Volume> copies(3, ph.clean[1]);
  CoRegConfig cfg = translation_config();
  cfg.pyramid = {PyramidLevel{0.0, 1, 10, 0.0}};
  cfg.max_iterations = 10;
  const RegistrationResult r = coregister(copies, cfg);
  EXPECT_EQ(r.trace.size(), 10u);
  for (const auto& c : r.transforms) EXPECT_LT(translation_of(c).norm(), 1e-3);
}

TEST(Coregister, RecoversOffsetBetweenTwoCopies) {
  const Phantom ph = small_phantom(15);
  const std::vector<Volume> same(2, ph.clean[0]);
  const std::vector<double> background(2, ph.class_means[0][0]);
  const SyntheticCase sc = make_case(ph, same, background, translations({Vec(3.0, 0.0, 0.0), Vec::Zero()}), 0.01, 16);
  const RegistrationResult r = coregister(sc.images, translation_config());
  const Vec relative = translation_of(r.transforms[1]) - translation_of(r.transforms[0]);
  EXPECT_NEAR(relative[0], 3.0, 0.2);
  EXPECT_NEAR(relative[1], 0.0, 0.2);
}

TEST(Coregister, RecoversOpposedTranslations) {
  const Phantom ph = small_phantom(4);
  const SyntheticCase sc = make_case(
      ph, translations({Vec(3.0, 0.0, 0.0), Vec(-3.0, 0.0, 0.0), Vec(0.0, 0.0, 0.0)}), 0.01, 5);
  std::vector<double> loss;
  RunOptions opts;
  opts.observer = [&](const IterationView& v) {
    // Zero-mean constraint holds after every iteration.
    Vec sum = Vec::Zero();
    for (const auto& c : v.transforms) sum += translation_of(c);
    EXPECT_LT(sum.norm(), 1e-9);
    EXPECT_NEAR(v.common.pi.sum(), 1.0, 1e-9);
    loss.push_back(v.record.loss);
  };
  const RegistrationResult r = coregister(sc.images, translation_config(), opts);
  EXPECT_NEAR(translation_of(r.transforms[0])[0], -3.0, 0.2);
  EXPECT_NEAR(translation_of(r.transforms[1])[0], 3.0, 0.2);
  EXPECT_NEAR(translation_of(r.transforms[2])[0], 0.0, 0.2);
  for (const auto& c : r.transforms) EXPECT_NEAR(translation_of(c)[1], 0.0, 0.2);
  EXPECT_EQ(loss.size(), r.trace.size());
  EXPECT_LT(loss.back(), loss.front());
}

TEST(Coregister, DeterministicForFixedSeed) {
  const Phantom ph = small_phantom(6);
  const SyntheticCase sc = make_case(ph, translations({Vec(2.0, 1.0, 0.0), Vec(-1.0, 0.0, 0.0), Vec::Zero()}),
                                     0.02, 7);
  CoRegConfig cfg = translation_config();
  cfg.pyramid = {PyramidLevel{0.0, 2, 30, 0.0}};
  cfg.max_iterations = 30;
  const RegistrationResult a = coregister(sc.images, cfg);
  const RegistrationResult b = coregister(sc.images, cfg);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace.records[i].loss, b.trace.records[i].loss);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(a.transforms[j].last().params(), b.transforms[j].last().params());
  EXPECT_EQ(a.common.gamma, b.common.gamma);
  cfg.seed = 8;
  const RegistrationResult c = coregister(sc.images, cfg);
  EXPECT_NE(a.trace.records.back().loss, c.trace.records.back().loss);
}

TEST(Coregister, BaselineMetricsReduceMisalignment) {
  const Phantom ph = small_phantom(9);
  const auto mis = translations({Vec(2.0, -1.0, 0.0), Vec(-2.0, 1.0, 0.0), Vec(0.0, 0.0, 0.0)});
  const SyntheticCase multi = make_case(ph, mis, 0.01, 10);
  // VI and congealing assume one shared intensity scale.
  const std::vector<Volume> same(3, ph.clean[0]);
  const std::vector<double> background(3, ph.class_means[0][0]);
  const SyntheticCase mono = make_case(ph, same, background, mis, 0.01, 10);
  const double before = gwi(multi.truth, identity_estimates(3, 2));
  for (MetricKind m : {MetricKind::ape, MetricKind::gmm, MetricKind::cte, MetricKind::vi, MetricKind::congealing}) {
    const bool mono_only = m == MetricKind::vi || m == MetricKind::congealing;
    const SyntheticCase& sc = mono_only ? mono : multi;
    CoRegConfig cfg = translation_config();
    cfg.metric = m;
    const double after = gwi(sc.truth, coregister(sc.images, cfg).transforms);
    EXPECT_LT(after, 0.5 * before) << to_string(m);
  }
}

TEST(StagedRigid, AlignedGroupStaysAligned) {
  PhantomSpec ps;
  ps.dims = {64, 64};
  ps.blob_sigma = 5.0;
  ps.seed = 11;
  const Phantom ph = make_phantom(ps);
  std::vector<TransformChain> none;
  for (int j = 0; j < 3; ++j) none.emplace_back(Transform::identity(TransformKind::rigid, 2));
  const SyntheticCase sc = make_case(ph, none, 0.01, 12);
  StagedRigidConfig cfg = default_staged_rigid(MetricKind::xmetric, 8);
  const RegistrationResult r = staged_rigid(sc.images, cfg);
  // Free rotation centers leave a sub-voxel residual at the corners.
  EXPECT_LT(gre(sc.truth, r.transforms), 1.0);
  for (const auto& c : r.transforms) {
    // The translation result seeds a single rigid stage.
    ASSERT_EQ(c.stages.size(), 1u);
    EXPECT_EQ(c.last().kind(), TransformKind::rigid);
  }
}

TEST(StagedRigid, TranslationStageWidensCaptureRange) {
  // Large shifts on a small field of view: the coarse translation pyramid
  // captures more cases than starting the rigid stage from identity.
  int staged_ok = 0, rigid_ok = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    PhantomSpec ps;
    ps.dims = {64, 64};
    ps.blob_sigma = 5.0;
    ps.seed = 30 + s;
    const Phantom ph = make_phantom(ps);
    MisalignmentSpec ms;
    ms.max_angle_deg = 0.0;
    ms.max_translation = 12.0;
    const SyntheticCase sc = make_case(ph, make_misalignment(ms, ph.grid, 3, 100 + s), 0.01, 200 + s);
    const StagedRigidConfig cfg = default_staged_rigid(MetricKind::xmetric, 8);
    staged_ok += gre(sc.truth, staged_rigid(sc.images, cfg).transforms) < 2.0;
    rigid_ok += gre(sc.truth, coregister(sc.images, cfg.rigid).transforms) < 2.0;
  }
  EXPECT_GT(staged_ok, rigid_ok);
  EXPECT_GE(staged_ok, 6);
}

TEST(MotionCorrect, FfdStageBarelyMovesTranslatedSequence) {
  SequenceSpec ss;
  ss.dims = {64, 64};
  ss.frames = 6;
  ss.elastic_amplitude = 0.0;
  ss.seed = 40;
  const SyntheticCase sc = make_cardiac_sequence(ss);
  MotionConfig cfg = default_motion();
  const RegistrationResult with = motion_correct(sc.images, cfg);
  cfg.run_ffd = false;
  const RegistrationResult without = motion_correct(sc.images, cfg);
  const Grid& g = sc.images[0].grid;
  double change = 0.0;
  for (std::size_t j = 0; j < with.transforms.size(); ++j)
    for (std::size_t i = 0; i < g.size(); ++i)
      change += (with.transforms[j].apply(g.point(i)) - without.transforms[j].apply(g.point(i))).norm();
  EXPECT_LT(change / static_cast<double>(g.size() * with.transforms.size()), 0.5);
}

TEST(MotionCorrect, NeedsThreeFrames) {
  const Phantom ph = small_phantom(13);
  EXPECT_THROW(motion_correct(std::span(ph.clean).first(2), default_motion()), InvalidArgument);
}

TEST(ResampleCommon, NearestTransfer) {
  const Grid fine = Grid::make({8, 8}, {1, 1});
  const Grid coarse = Grid::make({4, 4}, {2, 2});
  const CommonSpace cs = init_common_space(coarse, 3, 1);
  const CommonSpace out = resample_common(cs, coarse, fine);
  EXPECT_EQ(out.gamma.rows(), 64);
  EXPECT_EQ(out.gamma.row(0), cs.gamma.row(0));
  EXPECT_EQ(out.gamma.row(fine.flatten({6, 6, 0})), cs.gamma.row(coarse.flatten({3, 3, 0})));
  EXPECT_EQ(resample_common(cs, coarse, coarse).gamma, cs.gamma);
  EXPECT_THROW(resample_common(cs, fine, coarse), InvalidArgument);
}
