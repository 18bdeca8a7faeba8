#include "xcoreg/coreg.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

namespace xcoreg {

double StepSizes::operator()(ParamRole role) const {
  switch (role) {
    case ParamRole::translation: return translation;
    case ParamRole::rotation_center: return rotation_center;
    case ParamRole::rotation: return rotation;
    case ParamRole::matrix: return matrix;
    case ParamRole::displacement: return displacement;
  }
  return translation;
}

void validate(const CoRegConfig& cfg) {
  if (cfg.max_iterations < 1) throw InvalidArgument("max_iterations must be >= 1");
  if (!(cfg.sample_rate > 0.0 && cfg.sample_rate <= 1.0)) throw InvalidArgument("sample_rate must lie in (0, 1]");
  if (cfg.classes < 1) throw InvalidArgument("classes must be >= 1");
  if (cfg.min_samples < 0) throw InvalidArgument("min_samples must be >= 0");
  if (cfg.levels < 2) throw InvalidArgument("levels must be >= 2");
  if (!(cfg.lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
  if (cfg.pyramid.empty()) throw InvalidArgument("pyramid needs at least one level");
  if (cfg.convergence_window < 1) throw InvalidArgument("convergence window must be >= 1");
  long total = 0;
  for (const auto& level : cfg.pyramid) {
    if (level.iterations < 1) throw InvalidArgument("pyramid level needs >= 1 iteration");
    if (level.factor < 1) throw InvalidArgument("pyramid factor must be >= 1");
    if (!(level.sigma >= 0.0)) throw InvalidArgument("pyramid sigma must be >= 0");
    total += level.iterations;
  }
  if (total > cfg.max_iterations) throw InvalidArgument("pyramid iterations exceed max_iterations");
  if (cfg.transform == TransformKind::ffd && !(cfg.pyramid.front().ffd_spacing > 0.0))
    throw InvalidArgument("FFD runs need a positive ffd_spacing on the first level");
  if ((cfg.metric == MetricKind::xmetric || cfg.metric == MetricKind::xmetric_gt) && cfg.classes < 2)
    throw InvalidArgument("the X-metric needs K >= 2");
}

void adam_step(std::span<double> params, std::span<const double> gradient, AdamState& state,
               std::span<const double> eta) {
  const auto n = params.size();
  if (gradient.size() != n || eta.size() != n || static_cast<std::size_t>(state.m.size()) != n ||
      static_cast<std::size_t>(state.v.size()) != n)
    throw InvalidArgument("adam_step: size mismatch");
  for (double g : gradient)
    if (!std::isfinite(g)) throw NumericalError("non-finite gradient");
  ++state.step;
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    state.m[k] = AdamState::kBeta1 * state.m[k] + (1.0 - AdamState::kBeta1) * gradient[i];
    state.v[k] = AdamState::kBeta2 * state.v[k] + (1.0 - AdamState::kBeta2) * gradient[i] * gradient[i];
    params[i] -= eta[i] * (state.m[k] / c1) / (std::sqrt(state.v[k] / c2) + AdamState::kEpsilon);
  }
}

std::vector<double> IterationTrace::losses() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.loss);
  return out;
}

bool check_convergence(std::span<const double> losses, int window, double rtol) {
  if (window < 1) throw InvalidArgument("convergence window must be >= 1");
  const auto w = static_cast<std::size_t>(window);
  if (losses.size() < 2 * w) return false;
  const auto end = losses.end();
  const double recent = std::accumulate(end - static_cast<long>(w), end, 0.0) / static_cast<double>(w);
  const double before =
      std::accumulate(end - static_cast<long>(2 * w), end - static_cast<long>(w), 0.0) / static_cast<double>(w);
  return std::abs(recent - before) <= rtol * std::max(std::abs(before), 1e-12);
}

CommonSpace resample_common(const CommonSpace& cs, const Grid& from, const Grid& to) {
  if (static_cast<std::size_t>(cs.gamma.rows()) != from.size())
    throw InvalidArgument("resample_common: gamma does not match the source grid");
  CommonSpace out;
  out.classes = cs.classes;
  out.pi = cs.pi;
  out.gamma.resize(static_cast<Eigen::Index>(to.size()), cs.classes);
  for (std::size_t i = 0; i < to.size(); ++i) {
    const Vec c = from.continuous_index(to.point(i));
    Index3 idx{0, 0, 0};
    for (int a = 0; a < from.dim; ++a)
      idx[a] = std::clamp(static_cast<int>(std::lround(c[a])), 0, from.dims[a] - 1);
    out.gamma.row(static_cast<Eigen::Index>(i)) = cs.gamma.row(static_cast<Eigen::Index>(from.flatten(idx)));
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<double> step_sizes(const Transform& t, const StepSizes& eta) {
  std::vector<double> out;
  for (ParamRole role : t.param_roles()) out.push_back(eta(role));
  return out;
}

Transform identity_stage(TransformKind kind, const Grid& common, double ffd_spacing) {
  if (kind == TransformKind::ffd) return Transform::ffd(FfdMesh::covering(common, ffd_spacing));
  return Transform::identity(kind, common.dim);
}

RowMatrix gather_rows(const RowMatrix& gamma, std::span<const std::size_t> rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), gamma.cols());
  for (std::size_t s = 0; s < rows.size(); ++s)
    out.row(static_cast<Eigen::Index>(s)) = gamma.row(static_cast<Eigen::Index>(rows[s]));
  return out;
}

void scatter_rows(RowMatrix& gamma, std::span<const std::size_t> rows, const RowMatrix& values) {
  for (std::size_t s = 0; s < rows.size(); ++s)
    gamma.row(static_cast<Eigen::Index>(rows[s])) = values.row(static_cast<Eigen::Index>(s));
}

std::vector<AppearanceTable> appearance_tables(const MetricContext& ctx, const RowMatrix& gamma) {
  std::vector<AppearanceTable> out;
  for (std::size_t j = 0; j < ctx.num_images; ++j) {
    const auto c = ctx.intensity.col(static_cast<Eigen::Index>(j));
    out.push_back(appearance_model({c.data(), static_cast<std::size_t>(c.size())}, gamma, ctx.binning[j]));
  }
  return out;
}

bool uses_common_space(MetricKind m) { return m == MetricKind::xmetric || m == MetricKind::xmetric_gt; }

}  // namespace

RegistrationResult coregister(std::span<const Volume> images, const CoRegConfig& cfg, RunOptions opts) {
  validate(cfg);
  const std::size_t n = images.size();
  if (n < 2) throw InvalidArgument("groupwise registration needs at least 2 images");
  for (const auto& v : images) {
    validate(v);
    if (v.grid.dim != images[0].grid.dim) throw InvalidArgument("all images must share one dimensionality");
  }
  if (cfg.metric == MetricKind::xmetric_gt && opts.fixed_appearance.size() != n)
    throw InvalidArgument("xmetric-gt needs one fixed appearance table per image");
  if (cfg.metric == MetricKind::congealing && n < 2) throw InvalidArgument("congealing needs N >= 2");

  const Grid full = opts.common_grid ? *opts.common_grid : images[0].grid;
  validate(full);
  const int k_count = cfg.classes;
  std::vector<Binning> binning;
  for (const auto& v : images) binning.push_back(Binning::from_volume(v, cfg.levels, cfg.bandwidth));

  std::vector<TransformChain> chains = opts.initial;
  if (chains.empty()) chains.resize(n);
  if (chains.size() != n) throw InvalidArgument("one initial transform chain per image required");
  if (!opts.append_stage) {
    for (const auto& c : chains) {
      if (c.stages.empty() || c.last().kind() != cfg.transform)
        throw InvalidArgument("in-place optimization needs initial stages of the configured kind");
    }
  }

  RegistrationResult result;
  IterationTrace& trace = result.trace;
  CommonSpace cs;
  Grid cs_grid;
  bool have_common = false;
  if (opts.initial_common.classes == k_count && opts.initial_common.gamma.rows() > 0) {
    cs = opts.initial_common;
    cs_grid = opts.initial_common_grid;
    have_common = true;
  }
  std::optional<GmmModel> gmm;
  double current_spacing = 0.0;
  int iteration = 0;

  auto fail = [&](const std::string& what) -> RegistrationError { return RegistrationError(what, trace); };

  for (std::size_t li = 0; li < cfg.pyramid.size(); ++li) {
    const PyramidLevel& level = cfg.pyramid[li];
    const Grid grid = downsample_grid(full, level.factor);
    std::vector<Volume> level_images;
    for (const auto& v : images) level_images.push_back(downsample(gaussian_smooth(v, level.sigma), level.factor));

    bool new_stage = li == 0 && opts.append_stage;
    if (cfg.transform == TransformKind::ffd && li > 0 && level.ffd_spacing > 0.0 &&
        level.ffd_spacing != current_spacing)
      new_stage = true;
    if (new_stage) {
      const double spacing = level.ffd_spacing > 0.0 ? level.ffd_spacing : current_spacing;
      for (auto& c : chains) c.stages.push_back(identity_stage(cfg.transform, full, spacing));
    }
    if (cfg.transform == TransformKind::ffd && level.ffd_spacing > 0.0) current_spacing = level.ffd_spacing;

    if (uses_common_space(cfg.metric)) {
      if (!have_common) {
        cs = init_common_space(grid, k_count, mix_seed(cfg.seed, 0xC0));
        if (cfg.gamma_init == GammaInit::uniform) cs.gamma.setConstant(1.0 / k_count);
        have_common = true;
      } else if (!(cs_grid == grid)) {
        cs = resample_common(cs, cs_grid, grid);
      }
      cs_grid = grid;
    }

    std::vector<AdamState> adam;
    std::vector<std::vector<double>> eta;
    for (const auto& c : chains) {
      adam.emplace_back(c.last().num_params());
      eta.push_back(step_sizes(c.last(), cfg.eta));
    }
    std::vector<double> level_losses;
    const double rate =
        std::min(1.0, std::max(cfg.sample_rate, static_cast<double>(cfg.min_samples) / static_cast<double>(grid.size())));

    for (int it = 0; it < level.iterations; ++it, ++iteration) {
      const auto start = Clock::now();
      IterationRecord rec;
      rec.iteration = iteration;
      rec.level = static_cast<int>(li);
      rec.metric_before_update = std::numeric_limits<double>::quiet_NaN();
      rec.metric_after_update = std::numeric_limits<double>::quiet_NaN();

      const auto it_seed = static_cast<std::uint64_t>(iteration);
      const SampleSet sample = draw_samples(grid, rate, mix_seed(cfg.seed, 2 * it_seed));
      const MetricContext ctx_f = build_context(level_images, chains, grid, sample.indices, binning);
      if (ctx_f.samples() == 0) throw fail("empty overlap region at iteration " + std::to_string(iteration));
      std::optional<MetricContext> ctx_joint;
      if (cfg.independent_joint_sample && uses_common_space(cfg.metric)) {
        const SampleSet s2 = draw_samples(grid, rate, mix_seed(cfg.seed, 2 * it_seed + 1));
        ctx_joint = build_context(level_images, chains, grid, s2.indices, binning);
        if (ctx_joint->samples() == 0)
          throw fail("empty overlap region at iteration " + std::to_string(iteration));
      }
      const MetricContext& ctx = ctx_joint ? *ctx_joint : ctx_f;
      rec.overlap_samples = ctx.samples();

      MetricValue mv;
      std::vector<AppearanceTable> appearance;
      RowMatrix sample_gamma;
      switch (cfg.metric) {
        case MetricKind::xmetric:
        case MetricKind::xmetric_gt: {
          if (cfg.metric == MetricKind::xmetric) {
            appearance = appearance_tables(ctx_f, gather_rows(cs.gamma, ctx_f.sample_index));
            for (const auto& a : appearance) result.empty_class_events += a.empty_classes();
          } else {
            appearance = opts.fixed_appearance;
          }
          const RowMatrix before = gather_rows(cs.gamma, ctx.sample_index);
          rec.metric_before_update = xmetric(ctx, CommonSpace{k_count, before, cs.pi}).value;
          if (cfg.gamma_update == GammaUpdate::overlap) {
            std::vector<std::size_t> all(grid.size());
            std::iota(all.begin(), all.end(), std::size_t{0});
            const MetricContext whole = build_context(level_images, chains, grid, all, binning);
            PosteriorResult post = posterior_update(appearance, cs.pi, whole.intensity, binning);
            result.posterior_fallbacks += post.fallback_samples;
            scatter_rows(cs.gamma, whole.sample_index, post.gamma);
            cs.pi = prior_update(gather_rows(cs.gamma, ctx.sample_index));
          } else {
            PosteriorResult post = posterior_update(appearance, cs.pi, ctx.intensity, binning);
            result.posterior_fallbacks += post.fallback_samples;
            if (ctx_joint) {
              PosteriorResult post_f = posterior_update(appearance, cs.pi, ctx_f.intensity, binning);
              scatter_rows(cs.gamma, ctx_f.sample_index, post_f.gamma);
            }
            scatter_rows(cs.gamma, ctx.sample_index, post.gamma);
            cs.pi = prior_update(post.gamma);
          }
          sample_gamma = gather_rows(cs.gamma, ctx.sample_index);
          mv = xmetric(ctx, CommonSpace{k_count, sample_gamma, cs.pi});
          rec.metric_after_update = mv.value;
          rec.pi = cs.pi;
          break;
        }
        case MetricKind::congealing: mv = congealing(ctx, cfg.cg_sigma); break;
        case MetricKind::ape: mv = ape(ctx); break;
        case MetricKind::cte: mv = cte(ctx); break;
        case MetricKind::vi: mv = vi(ctx); break;
        case MetricKind::gmm: {
          if (!gmm) gmm = gmm_init(ctx.intensity, k_count);
          gmm = gmm_em_step(ctx.intensity, *gmm);
          result.gmm_resets = gmm->resets;
          mv = gmm_loglik(ctx, *gmm);
          rec.pi = Eigen::Map<const Eigen::VectorXd>(gmm->weights.data(), static_cast<Eigen::Index>(gmm->weights.size()));
          break;
        }
      }

      std::vector<Eigen::VectorXd> grads = parameter_gradient(ctx, mv.sensitivity, chains);
      double loss = -mv.value;
      double grad_sq = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        grads[j] = -grads[j];
        if (cfg.lambda > 0.0 && chains[j].last().kind() == TransformKind::ffd) {
          const BendingEnergy be = bending_energy(chains[j].last());
          loss += cfg.lambda * be.value;
          grads[j] += cfg.lambda * Eigen::Map<const Eigen::VectorXd>(be.gradient.data(),
                                                                       static_cast<Eigen::Index>(be.gradient.size()));
        }
        grad_sq += grads[j].squaredNorm();
      }
      rec.metric = mv.value;
      rec.loss = loss;
      rec.grad_norm = std::sqrt(grad_sq);
      if (!std::isfinite(loss) || !std::isfinite(rec.grad_norm)) {
        trace.records.push_back(rec);
        throw fail("non-finite loss at iteration " + std::to_string(iteration));
      }

      for (std::size_t j = 0; j < n; ++j) {
        auto& p = chains[j].last().params();
        adam_step(p, {grads[j].data(), static_cast<std::size_t>(grads[j].size())}, adam[j], eta[j]);
      }
      if (cfg.zero_mean) {
        std::vector<Transform> last;
        for (const auto& c : chains) last.push_back(c.last());
        last = project_zero_mean(std::move(last), full);
        for (std::size_t j = 0; j < n; ++j) chains[j].last() = std::move(last[j]);
      }

      rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
      trace.records.push_back(rec);
      level_losses.push_back(loss);
      if (opts.observer) {
        const IterationView view{trace.records.back(), ctx, appearance, sample_gamma, cs, chains};
        opts.observer(view);
      }
      if (check_convergence(level_losses, cfg.convergence_window, cfg.convergence_rtol)) {
        ++iteration;
        break;
      }
    }
  }

  result.transforms = std::move(chains);
  result.common_grid = full;
  if (uses_common_space(cfg.metric)) {
    result.common = cs_grid == full ? cs : resample_common(cs, cs_grid, full);
  }
  return result;
}

namespace {

std::vector<TransformChain> translations_to_rigid(std::vector<TransformChain> chains, const Vec& center) {
  for (auto& c : chains) c.last() = rigid_from_translation(c.last(), center);
  return chains;
}

void append_trace(RegistrationResult& total, const RegistrationResult& part) {
  const int offset = total.trace.records.empty() ? 0 : total.trace.records.back().iteration + 1;
  for (auto rec : part.trace.records) {
    rec.iteration += offset;
    total.trace.records.push_back(std::move(rec));
  }
  total.posterior_fallbacks += part.posterior_fallbacks;
  total.empty_class_events += part.empty_class_events;
  total.gmm_resets += part.gmm_resets;
}

RegistrationResult run_stage(std::span<const Volume> images, const CoRegConfig& cfg, const RunOptions& base,
                             std::vector<TransformChain> initial, bool append, const RegistrationResult* previous) {
  RunOptions o = base;
  o.initial = std::move(initial);
  o.append_stage = append;
  if (previous && previous->common.classes == cfg.classes) {
    o.initial_common = previous->common;
    o.initial_common_grid = previous->common_grid;
  }
  return coregister(images, cfg, std::move(o));
}

void finish(RegistrationResult& total, RegistrationResult&& last) {
  append_trace(total, last);
  total.transforms = std::move(last.transforms);
  total.common = std::move(last.common);
  total.common_grid = last.common_grid;
}

}  // namespace

StagedRigidConfig default_staged_rigid(MetricKind metric, int classes) {
  StagedRigidConfig c;
  c.translation.metric = metric;
  c.translation.transform = TransformKind::translation;
  c.translation.classes = classes;
  c.translation.levels = 32;
  c.translation.pyramid = {{4.0, 8, 50, 0.0}, {2.0, 4, 50, 0.0}, {1.0, 2, 50, 0.0}, {0.0, 1, 50, 0.0}};
  c.translation.max_iterations = 200;
  c.rigid = c.translation;
  c.rigid.transform = TransformKind::rigid;
  c.rigid.levels = 64;
  c.rigid.pyramid = {{1.0, 2, 200, 0.0}, {0.0, 1, 200, 0.0}};
  c.rigid.max_iterations = 400;
  c.rigid.seed = 1;
  return c;
}

RegistrationResult staged_rigid(std::span<const Volume> images, const StagedRigidConfig& cfg,
                                const RunOptions& opts) {
  if (cfg.translation.transform != TransformKind::translation || cfg.rigid.transform != TransformKind::rigid)
    throw InvalidArgument("staged rigid needs a translation stage and a rigid stage");
  if (images.empty()) throw InvalidArgument("no images");
  const Grid common = opts.common_grid ? *opts.common_grid : images[0].grid;
  RegistrationResult total;
  RegistrationResult first = run_stage(images, cfg.translation, opts, opts.initial, true, nullptr);
  append_trace(total, first);
  auto chains = translations_to_rigid(first.transforms, common.center());
  finish(total, run_stage(images, cfg.rigid, opts, std::move(chains), false, &first));
  return total;
}

MotionConfig default_motion(MetricKind metric, int classes) {
  MotionConfig c;
  CoRegConfig base;
  base.metric = metric;
  base.classes = classes;
  base.levels = 64;
  base.zero_mean = true;
  base.eta = {0.1, 0.1, 0.001, 0.001, 0.1};
  c.translation = base;
  c.translation.transform = TransformKind::translation;
  c.translation.pyramid = {{1.0, 2, 50, 0.0}, {0.0, 1, 50, 0.0}};
  c.translation.max_iterations = 100;
  c.rigid = base;
  c.rigid.transform = TransformKind::rigid;
  c.rigid.pyramid = {{1.0, 2, 25, 0.0}, {0.0, 1, 25, 0.0}};
  c.rigid.max_iterations = 50;
  c.rigid.seed = 1;
  c.ffd = base;
  c.ffd.transform = TransformKind::ffd;
  c.ffd.lambda = 0.01;
  c.ffd.pyramid = {{0.0, 1, 50, 40.0}};
  c.ffd.max_iterations = 50;
  c.ffd.seed = 2;
  return c;
}

RegistrationResult motion_correct(std::span<const Volume> sequence, const MotionConfig& cfg,
                                  const RunOptions& opts) {
  if (sequence.size() < 3) throw InvalidArgument("motion correction needs at least 3 frames");
  if (cfg.translation.transform != TransformKind::translation || cfg.rigid.transform != TransformKind::rigid ||
      cfg.ffd.transform != TransformKind::ffd)
    throw InvalidArgument("motion correction stages must be translation, rigid and ffd");
  std::vector<Volume> frames;
  for (const auto& v : sequence) frames.push_back(gaussian_smooth(v, cfg.prefilter_sigma));
  const Grid common = opts.common_grid ? *opts.common_grid : frames[0].grid;
  RegistrationResult total;
  RegistrationResult first = run_stage(frames, cfg.translation, opts, opts.initial, true, nullptr);
  append_trace(total, first);
  auto chains = translations_to_rigid(first.transforms, common.center());
  RegistrationResult second = run_stage(frames, cfg.rigid, opts, std::move(chains), false, &first);
  if (!cfg.run_ffd) {
    finish(total, std::move(second));
    return total;
  }
  append_trace(total, second);
  finish(total, run_stage(frames, cfg.ffd, opts, second.transforms, true, &second));
  return total;
}

}  // namespace xcoreg
