#include "cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "xcoreg/config_io.hpp"
#include "xcoreg/coreg.hpp"
#include "xcoreg/eval.hpp"
#include "xcoreg/phantom.hpp"
#include "xcoreg/transform_io.hpp"
#include "xcoreg/volume_io.hpp"

namespace xcoreg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw InvalidArgument("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string indexed(const std::string& stem, std::size_t j, const std::string& ext) {
  return stem + "_" + std::to_string(j) + ext;
}

Volume label_volume(const Grid& grid, const std::vector<int>& labels) {
  return Volume(grid, std::vector<double>(labels.begin(), labels.end()), "labels");
}

std::vector<int> labels_from(const Volume& v) {
  std::vector<int> out;
  out.reserve(v.data.size());
  for (double d : v.data) out.push_back(static_cast<int>(std::lround(d)));
  return out;
}

struct Manifest {
  fs::path dir;
  json doc;
  std::string case_id;
  std::uint64_t seed = 0;
  int classes = 4;

  fs::path resolve(const std::string& rel) const { return dir / rel; }
  std::vector<fs::path> list(const char* key) const {
    std::vector<fs::path> out;
    for (const auto& p : doc.at(key)) out.push_back(resolve(p.get<std::string>()));
    return out;
  }
};

Manifest load_manifest(const fs::path& path) {
  Manifest m;
  m.dir = path.parent_path();
  m.doc = read_json(path);
  try {
    m.case_id = m.doc.at("case_id").get<std::string>();
    m.seed = m.doc.value("seed", std::uint64_t{0});
    m.classes = m.doc.value("classes", 4);
    for (const char* key : {"images", "truth", "labels"})
      if (!m.doc.at(key).is_array()) throw InvalidArgument(std::string("manifest key '") + key + "' must be a list");
  } catch (const json::exception& e) {
    throw InvalidArgument("malformed manifest " + path.string() + ": " + e.what());
  }
  for (const char* key : {"images", "truth", "labels"})
    for (const auto& p : m.list(key))
      if (!fs::exists(p)) throw IoError("manifest references missing file " + p.string());
  return m;
}

std::vector<Volume> load_images(const Manifest& m) {
  std::vector<Volume> images;
  for (const auto& p : m.list("images")) images.push_back(load_volume(p));
  if (images.size() < 2) throw InvalidArgument("a case needs at least 2 images");
  return images;
}

GroundTruth load_truth(const Manifest& m) {
  GroundTruth gt;
  for (const auto& p : m.list("truth")) gt.misalignment.push_back(load_chain(p));
  gt.foreground = load_volume(m.resolve(m.doc.at("foreground").get<std::string>()));
  gt.grid = gt.foreground.grid;
  for (const auto& p : m.list("labels")) gt.labels.push_back(labels_from(load_volume(p)));
  return gt;
}

std::uint64_t run_seed(const Manifest& m) {
  if (const char* env = std::getenv("XCOREG_SEED"); env && *env) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw InvalidArgument(std::string("XCOREG_SEED is not an unsigned integer: ") + env);
    }
  }
  return m.seed;
}

}  // namespace

void cmd_synth(const fs::path& spec_path, const fs::path& out_dir) {
  const json spec = read_json(spec_path);
  const std::string kind = spec.value("kind", std::string("phantom"));
  const std::string case_id = spec.value("case_id", std::string("case"));
  const auto seed = spec.value("seed", std::uint64_t{0});
  const double noise = spec.value("noise", 0.02);
  for (const auto& [key, value] : spec.items()) {
    if (key != "kind" && key != "case_id" && key != "seed" && key != "noise" && key != "phantom" &&
        key != "misalignment" && key != "sequence")
      throw InvalidArgument("unknown key '" + key + "' in synth spec");
  }
  SyntheticCase sc;
  int classes = 0;
  json evaluate;
  json extra = json::object();
  if (kind == "phantom") {
    PhantomSpec ps = phantom_spec_from_json(spec.value("phantom", json::object()));
    if (!spec.value("phantom", json::object()).contains("seed")) ps.seed = seed;
    const MisalignmentSpec ms = misalignment_spec_from_json(spec.value("misalignment", json::object()));
    const Phantom ph = make_phantom(ps);
    const auto mis = make_misalignment(ms, ph.grid, ph.clean.size(), seed + 1);
    sc = make_case(ph, mis, noise, seed + 2);
    classes = ps.classes;
    evaluate = json::array({"gwi", "gre"});
  } else if (kind == "sequence") {
    SequenceSpec ss = sequence_spec_from_json(spec.value("sequence", json::object()));
    if (!spec.value("sequence", json::object()).contains("seed")) ss.seed = seed;
    if (!spec.value("sequence", json::object()).contains("noise") && spec.contains("noise")) ss.noise = noise;
    sc = make_cardiac_sequence(ss);
    classes = kSequenceClasses;
    evaluate = json::array({"dsc", "gwi"});
    extra["dsc_label"] = kMyocardiumLabel;
  } else {
    throw InvalidArgument("synth kind must be 'phantom' or 'sequence'");
  }

  fs::create_directories(out_dir);
  json images = json::array(), truth = json::array(), labels = json::array();
  for (std::size_t j = 0; j < sc.images.size(); ++j) {
    save_volume(sc.images[j], out_dir / indexed("image", j, ".pvol"));
    save_chain(sc.truth.misalignment[j], out_dir / indexed("truth", j, ".json"));
    save_volume(label_volume(sc.truth.grid, sc.truth.labels[j]), out_dir / indexed("labels", j, ".pvol"));
    images.push_back(indexed("image", j, ".pvol"));
    truth.push_back(indexed("truth", j, ".json"));
    labels.push_back(indexed("labels", j, ".pvol"));
  }
  save_volume(sc.truth.foreground, out_dir / "foreground.pvol");
  json manifest{{"case_id", case_id}, {"kind", kind},     {"seed", seed},     {"classes", classes},
                {"images", images},   {"truth", truth},   {"labels", labels}, {"foreground", "foreground.pvol"},
                {"evaluate", evaluate}};
  manifest.update(extra);
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

void cmd_register(const fs::path& manifest_path, const fs::path& config_path, const fs::path& out_dir,
                  std::ostream& log) {
  const Manifest m = load_manifest(manifest_path);
  PipelineConfig pc = load_pipeline_config(config_path);
  const std::vector<Volume> images = load_images(m);
  const std::uint64_t seed = run_seed(m);
  std::uint64_t offset = 0;
  for (CoRegConfig* c : pc.stages()) c->seed = seed + offset++;
  const MetricKind metric = pc.metric();
  if (metric == MetricKind::congealing && images.size() < kCongealingReliableGroupSize)
    log << "warning: congealing with N=" << images.size() << " images gives unreliable stack densities (N >= "
        << kCongealingReliableGroupSize << " recommended)\n";

  RunOptions opts;
  if (metric == MetricKind::xmetric_gt) {
    const GroundTruth gt = load_truth(m);
    const CoRegConfig& last = *pc.stages().back();
    for (std::size_t j = 0; j < images.size(); ++j) {
      const Binning b = Binning::from_volume(images[j], last.levels, last.bandwidth);
      opts.fixed_appearance.push_back(appearance_from_labels(images[j], gt.labels[j], last.classes, b));
    }
  }

  fs::create_directories(out_dir);
  RegistrationResult result;
  try {
    switch (pc.pipeline) {
      case Pipeline::xcoreg: result = coregister(images, pc.single, opts); break;
      case Pipeline::staged_rigid: result = staged_rigid(images, pc.staged, opts); break;
      case Pipeline::motion_correct: result = motion_correct(images, pc.motion, opts); break;
    }
  } catch (const RegistrationError& e) {
    write_text(out_dir / "trace.csv", trace_to_csv(e.trace()));
    throw;
  }

  const Grid& common = result.common_grid;
  for (std::size_t j = 0; j < images.size(); ++j) {
    save_chain(result.transforms[j], out_dir / indexed("transform", j, ".json"));
    save_volume(warp_volume(images[j], result.transforms[j], common), out_dir / indexed("warped", j, ".pvol"));
  }
  write_text(out_dir / "trace.csv", trace_to_csv(result.trace));
  if (result.common.classes > 0 && static_cast<std::size_t>(result.common.gamma.rows()) == common.size()) {
    ChannelVolume g{common, result.common.classes,
                    std::vector<double>(result.common.gamma.data(),
                                        result.common.gamma.data() + result.common.gamma.size()),
                    "gamma"};
    save_channels(g, out_dir / "gamma.pvol");
  }
  if (result.posterior_fallbacks > 0)
    log << "note: " << result.posterior_fallbacks << " samples fell back to the prior\n";
  if (result.gmm_resets > 0) log << "warning: " << result.gmm_resets << " GMM components were reset\n";
  const json run{{"case_id", m.case_id},
                 {"method", to_string(metric)},
                 {"pipeline", to_string(pc.pipeline)},
                 {"transform_kind", to_string(result.transforms.front().last().kind())},
                 {"seed", seed},
                 {"images", images.size()}};
  write_text(out_dir / "run.json", run.dump(2) + "\n");
}

void cmd_evaluate(const fs::path& manifest_path, const fs::path& estimated_dir, const fs::path& report) {
  const Manifest m = load_manifest(manifest_path);
  const GroundTruth gt = load_truth(m);
  const std::size_t n = gt.misalignment.size();
  const json run = read_json(estimated_dir / "run.json");
  std::vector<TransformChain> estimated;
  for (std::size_t j = 0; j < n; ++j) estimated.push_back(load_chain(estimated_dir / indexed("transform", j, ".json")));
  const auto identity = identity_estimates(n, gt.grid.dim);
  const std::string method = run.at("method").get<std::string>();
  const std::string kind = run.at("transform_kind").get<std::string>();

  std::vector<std::string> wanted;
  for (const auto& e : m.doc.value("evaluate", json::array({"gwi", "gre"}))) wanted.push_back(e.get<std::string>());
  auto score = [&](const std::string& name, std::span<const TransformChain> est) {
    if (name == "gwi") return gwi(gt, est);
    if (name == "gre") return gre(gt, est);
    if (name == "dsc") {
      const int label = m.doc.value("dsc_label", kMyocardiumLabel);
      std::vector<std::vector<int>> maps;
      for (std::size_t j = 0; j < n; ++j) maps.push_back(warp_labels(gt.labels[j], gt.grid, est[j], gt.grid));
      return pairwise_dsc(maps, label);
    }
    throw InvalidArgument("unknown evaluation metric '" + name + "'");
  };
  std::vector<ReportRow> initial, rows;
  for (const auto& name : wanted) {
    initial.push_back({m.case_id, name, "initial", "identity", score(name, identity)});
    rows.push_back({m.case_id, name, method, kind, score(name, estimated)});
  }
  merge_report(report, initial);
  merge_report(report, rows);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Groupwise multimodal image registration"};
  app.require_subcommand(1);
  fs::path spec, synth_out, manifest, config, register_out, eval_manifest, estimated, report;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic case");
  synth->add_option("--spec", spec, "Synthesis spec JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output directory")->required();
  auto* reg = app.add_subcommand("register", "Register the images of a case");
  reg->add_option("--manifest", manifest, "Case manifest.json")->required()->check(CLI::ExistingFile);
  reg->add_option("--config", config, "Registration config JSON")->required()->check(CLI::ExistingFile);
  reg->add_option("--out", register_out, "Output directory")->required();
  auto* eval = app.add_subcommand("evaluate", "Score estimated transforms");
  eval->add_option("--manifest", eval_manifest, "Case manifest.json")->required()->check(CLI::ExistingFile);
  eval->add_option("--estimated", estimated, "Directory written by register")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--report", report, "Report CSV to update")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsage;
  }

  try {
    if (*synth) cmd_synth(spec, synth_out);
    if (*reg) cmd_register(manifest, config, register_out, err);
    if (*eval) cmd_evaluate(eval_manifest, estimated, report);
    return kSuccess;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const VolumeFormatError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace xcoreg::cli
