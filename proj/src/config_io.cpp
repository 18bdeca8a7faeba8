#include "xcoreg/config_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "xcoreg/error.hpp"

namespace xcoreg {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw InvalidArgument("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const std::set<std::string> kCoRegKeys{
    "metric",      "transform", "classes",     "levels",   "bandwidth",    "max_iterations",
    "lambda",      "sample_rate", "min_samples", "zero_mean", "seed",     "cg_sigma",     "independent_joint_sample",
    "gamma_update", "gamma_init", "eta",       "pyramid",  "convergence"};

GammaUpdate parse_gamma_update(const std::string& s) {
  if (s == "sample") return GammaUpdate::sample;
  if (s == "overlap") return GammaUpdate::overlap;
  throw InvalidArgument("gamma_update must be 'sample' or 'overlap'");
}

GammaInit parse_gamma_init(const std::string& s) {
  if (s == "random") return GammaInit::random;
  if (s == "uniform") return GammaInit::uniform;
  throw InvalidArgument("gamma_init must be 'random' or 'uniform'");
}

json subset(const json& j, const std::set<std::string>& keys) {
  json out = json::object();
  for (const auto& [key, value] : j.items())
    if (keys.count(key)) out[key] = value;
  return out;
}

}  // namespace

CoRegConfig coreg_config_from_json(const json& j, CoRegConfig c) {
  check_keys(j, kCoRegKeys, "registration config");
  try {
    if (j.contains("metric")) c.metric = parse_metric_kind(j.at("metric").get<std::string>());
    if (j.contains("transform")) c.transform = parse_transform_kind(j.at("transform").get<std::string>());
    read(j, "classes", c.classes);
    read(j, "levels", c.levels);
    read(j, "bandwidth", c.bandwidth);
    read(j, "max_iterations", c.max_iterations);
    read(j, "lambda", c.lambda);
    read(j, "sample_rate", c.sample_rate);
    read(j, "min_samples", c.min_samples);
    read(j, "zero_mean", c.zero_mean);
    read(j, "seed", c.seed);
    read(j, "cg_sigma", c.cg_sigma);
    read(j, "independent_joint_sample", c.independent_joint_sample);
    if (j.contains("gamma_update")) c.gamma_update = parse_gamma_update(j.at("gamma_update").get<std::string>());
    if (j.contains("gamma_init")) c.gamma_init = parse_gamma_init(j.at("gamma_init").get<std::string>());
    if (j.contains("eta")) {
      const json& e = j.at("eta");
      check_keys(e, {"translation", "rotation_center", "rotation", "matrix", "displacement"}, "eta");
      read(e, "translation", c.eta.translation);
      read(e, "rotation_center", c.eta.rotation_center);
      read(e, "rotation", c.eta.rotation);
      read(e, "matrix", c.eta.matrix);
      read(e, "displacement", c.eta.displacement);
    }
    if (j.contains("pyramid")) {
      c.pyramid.clear();
      for (const auto& lj : j.at("pyramid")) {
        check_keys(lj, {"sigma", "factor", "iterations", "ffd_spacing"}, "pyramid level");
        PyramidLevel level;
        read(lj, "sigma", level.sigma);
        read(lj, "factor", level.factor);
        read(lj, "iterations", level.iterations);
        read(lj, "ffd_spacing", level.ffd_spacing);
        c.pyramid.push_back(level);
      }
    }
    if (j.contains("convergence")) {
      const json& cv = j.at("convergence");
      check_keys(cv, {"window", "rtol"}, "convergence");
      read(cv, "window", c.convergence_window);
      read(cv, "rtol", c.convergence_rtol);
    }
    if (!j.contains("max_iterations")) {
      int total = 0;
      for (const auto& level : c.pyramid) total += level.iterations;
      c.max_iterations = std::max(c.max_iterations, total);
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed registration config: ") + e.what());
  }
  validate(c);
  return c;
}

json coreg_config_to_json(const CoRegConfig& c) {
  json pyramid = json::array();
  for (const auto& l : c.pyramid)
    pyramid.push_back({{"sigma", l.sigma}, {"factor", l.factor}, {"iterations", l.iterations},
                       {"ffd_spacing", l.ffd_spacing}});
  return json{{"metric", to_string(c.metric)},
              {"transform", to_string(c.transform)},
              {"classes", c.classes},
              {"levels", c.levels},
              {"bandwidth", c.bandwidth},
              {"max_iterations", c.max_iterations},
              {"lambda", c.lambda},
              {"sample_rate", c.sample_rate},
              {"min_samples", c.min_samples},
              {"zero_mean", c.zero_mean},
              {"seed", c.seed},
              {"cg_sigma", c.cg_sigma},
              {"independent_joint_sample", c.independent_joint_sample},
              {"gamma_update", c.gamma_update == GammaUpdate::sample ? "sample" : "overlap"},
              {"gamma_init", c.gamma_init == GammaInit::random ? "random" : "uniform"},
              {"eta",
               {{"translation", c.eta.translation},
                {"rotation_center", c.eta.rotation_center},
                {"rotation", c.eta.rotation},
                {"matrix", c.eta.matrix},
                {"displacement", c.eta.displacement}}},
              {"pyramid", pyramid},
              {"convergence", {{"window", c.convergence_window}, {"rtol", c.convergence_rtol}}}};
}

Pipeline parse_pipeline(const std::string& name) {
  if (name == "xcoreg") return Pipeline::xcoreg;
  if (name == "staged_rigid") return Pipeline::staged_rigid;
  if (name == "motion_correct") return Pipeline::motion_correct;
  throw InvalidArgument("unknown pipeline '" + name + "'");
}

std::string to_string(Pipeline p) {
  switch (p) {
    case Pipeline::xcoreg: return "xcoreg";
    case Pipeline::staged_rigid: return "staged_rigid";
    case Pipeline::motion_correct: return "motion_correct";
  }
  return "unknown";
}

MetricKind PipelineConfig::metric() const {
  switch (pipeline) {
    case Pipeline::xcoreg: return single.metric;
    case Pipeline::staged_rigid: return staged.rigid.metric;
    case Pipeline::motion_correct: return motion.run_ffd ? motion.ffd.metric : motion.rigid.metric;
  }
  return single.metric;
}

std::vector<CoRegConfig*> PipelineConfig::stages() {
  switch (pipeline) {
    case Pipeline::xcoreg: return {&single};
    case Pipeline::staged_rigid: return {&staged.translation, &staged.rigid};
    case Pipeline::motion_correct: return {&motion.translation, &motion.rigid, &motion.ffd};
  }
  return {};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  std::set<std::string> allowed = kCoRegKeys;
  allowed.insert({"pipeline", "translation", "rigid", "ffd", "prefilter_sigma", "run_ffd"});
  check_keys(j, allowed, "config");
  PipelineConfig pc;
  try {
    if (j.contains("pipeline")) pc.pipeline = parse_pipeline(j.at("pipeline").get<std::string>());
    const json shared = subset(j, kCoRegKeys);
    const MetricKind metric = shared.contains("metric") ? parse_metric_kind(shared.at("metric").get<std::string>())
                                                        : MetricKind::xmetric;
    switch (pc.pipeline) {
      case Pipeline::xcoreg:
        for (const char* k : {"translation", "rigid", "ffd", "prefilter_sigma", "run_ffd"})
          if (j.contains(k)) throw InvalidArgument(std::string("key '") + k + "' needs another pipeline");
        pc.single = coreg_config_from_json(shared);
        break;
      case Pipeline::staged_rigid: {
        for (const char* k : {"ffd", "prefilter_sigma", "run_ffd"})
          if (j.contains(k)) throw InvalidArgument(std::string("key '") + k + "' needs the motion_correct pipeline");
        const int classes = shared.value("classes", 8);
        pc.staged = default_staged_rigid(metric, classes);
        json t = shared, r = shared;
        t.erase("transform");
        r.erase("transform");
        if (j.contains("translation")) t.update(j.at("translation"));
        if (j.contains("rigid")) r.update(j.at("rigid"));
        if (shared.contains("seed") && !(j.contains("rigid") && j.at("rigid").contains("seed")))
          r["seed"] = shared.at("seed").get<std::uint64_t>() + 1;
        pc.staged.translation = coreg_config_from_json(t, pc.staged.translation);
        pc.staged.rigid = coreg_config_from_json(r, pc.staged.rigid);
        break;
      }
      case Pipeline::motion_correct: {
        const int classes = shared.value("classes", 4);
        pc.motion = default_motion(metric, classes);
        read(j, "prefilter_sigma", pc.motion.prefilter_sigma);
        read(j, "run_ffd", pc.motion.run_ffd);
        std::uint64_t offset = 0;
        for (auto [key, cfg] : {std::pair{"translation", &pc.motion.translation}, std::pair{"rigid", &pc.motion.rigid},
                                std::pair{"ffd", &pc.motion.ffd}}) {
          json s = shared;
          s.erase("transform");
          if (j.contains(key)) s.update(j.at(key));
          if (shared.contains("seed") && !(j.contains(key) && j.at(key).contains("seed")))
            s["seed"] = shared.at("seed").get<std::uint64_t>() + offset;
          *cfg = coreg_config_from_json(s, *cfg);
          ++offset;
        }
        break;
      }
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed config: ") + e.what());
  }
  return pc;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidArgument("malformed config " + path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

PhantomSpec phantom_spec_from_json(const json& j) {
  check_keys(j, {"dims", "spacing", "classes", "modalities", "blob_sigma", "body_radius", "bias", "seed"},
             "phantom spec");
  PhantomSpec s;
  try {
    read(j, "dims", s.dims);
    read(j, "spacing", s.spacing);
    read(j, "classes", s.classes);
    read(j, "modalities", s.modalities);
    read(j, "blob_sigma", s.blob_sigma);
    read(j, "body_radius", s.body_radius);
    read(j, "bias", s.bias);
    read(j, "seed", s.seed);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed phantom spec: ") + e.what());
  }
  return s;
}

MisalignmentSpec misalignment_spec_from_json(const json& j) {
  check_keys(j, {"kind", "max_angle_deg", "max_translation", "ffd_spacing", "ffd_max_displacement", "zero_mean"},
             "misalignment spec");
  MisalignmentSpec s;
  try {
    if (j.contains("kind")) s.kind = parse_transform_kind(j.at("kind").get<std::string>());
    read(j, "max_angle_deg", s.max_angle_deg);
    read(j, "max_translation", s.max_translation);
    read(j, "ffd_spacing", s.ffd_spacing);
    read(j, "ffd_max_displacement", s.ffd_max_displacement);
    read(j, "zero_mean", s.zero_mean);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed misalignment spec: ") + e.what());
  }
  return s;
}

SequenceSpec sequence_spec_from_json(const json& j) {
  check_keys(j, {"dims", "spacing", "frames", "noise", "bulk_amplitude", "elastic_amplitude", "ffd_spacing", "seed"},
             "sequence spec");
  SequenceSpec s;
  try {
    read(j, "dims", s.dims);
    read(j, "spacing", s.spacing);
    read(j, "frames", s.frames);
    read(j, "noise", s.noise);
    read(j, "bulk_amplitude", s.bulk_amplitude);
    read(j, "elastic_amplitude", s.elastic_amplitude);
    read(j, "ffd_spacing", s.ffd_spacing);
    read(j, "seed", s.seed);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed sequence spec: ") + e.what());
  }
  return s;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::string trace_to_csv(const IterationTrace& trace) {
  std::size_t k = 0;
  for (const auto& r : trace.records) k = std::max(k, static_cast<std::size_t>(r.pi.size()));
  std::ostringstream out;
  out << "iter,metric,loss,grad_norm";
  for (std::size_t i = 0; i < k; ++i) out << ",pi_" << i;
  out << ",seconds,level,overlap,metric_before_update,metric_after_update\n";
  for (const auto& r : trace.records) {
    out << r.iteration << ',' << format_double(r.metric) << ',' << format_double(r.loss) << ','
        << format_double(r.grad_norm);
    for (std::size_t i = 0; i < k; ++i) {
      out << ',';
      if (i < static_cast<std::size_t>(r.pi.size())) out << format_double(r.pi[static_cast<Eigen::Index>(i)]);
    }
    out << ',' << format_double(r.seconds) << ',' << r.level << ',' << r.overlap_samples << ','
        << format_double(r.metric_before_update) << ',' << format_double(r.metric_after_update) << '\n';
  }
  return out.str();
}

std::string report_to_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << "case_id,metric_name,method,transform_kind,value\n";
  for (const auto& r : rows)
    out << r.case_id << ',' << r.metric_name << ',' << r.method << ',' << r.transform_kind << ','
        << format_double(r.value) << '\n';
  return out.str();
}

std::vector<ReportRow> report_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<ReportRow> rows;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("case_id,", 0) == 0) continue;
    }
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw InvalidArgument("malformed report row: " + line);
    ReportRow r{cells[0], cells[1], cells[2], cells[3], 0.0};
    const auto res = std::from_chars(cells[4].data(), cells[4].data() + cells[4].size(), r.value);
    if (res.ec != std::errc()) throw InvalidArgument("malformed report value: " + cells[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void merge_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  std::vector<ReportRow> existing;
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    existing = report_from_csv(buf.str());
  }
  std::set<std::pair<std::string, std::string>> replaced;
  for (const auto& r : rows) replaced.emplace(r.case_id, r.method);
  std::vector<ReportRow> merged;
  for (auto& r : existing)
    if (!replaced.count({r.case_id, r.method})) merged.push_back(std::move(r));
  merged.insert(merged.end(), rows.begin(), rows.end());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << report_to_csv(merged);
}

}  // namespace xcoreg
