// JSON configuration, trace CSV and evaluation report CSV.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "xcoreg/coreg.hpp"
#include "xcoreg/phantom.hpp"

namespace xcoreg {

/// Overlays the keys present in `j` onto `base`. Unknown keys are rejected.
///
///   metric, transform, classes, levels, bandwidth, max_iterations, lambda,
///   sample_rate, zero_mean, seed, cg_sigma, independent_joint_sample,
///   gamma_update ("sample" | "overlap"), gamma_init ("random" | "uniform"),
///   eta {translation, rotation_center, rotation, matrix, displacement},
///   pyramid [{sigma, factor, iterations, ffd_spacing}],
///   convergence {window, rtol}
CoRegConfig coreg_config_from_json(const nlohmann::json& j, CoRegConfig base = {});
nlohmann::json coreg_config_to_json(const CoRegConfig& cfg);

enum class Pipeline { xcoreg, staged_rigid, motion_correct };
Pipeline parse_pipeline(const std::string& name);
std::string to_string(Pipeline p);

/// Run configuration for the command line. Top-level registration keys
/// apply to every stage; "translation", "rigid" and "ffd" objects then
/// override per stage.
struct PipelineConfig {
  Pipeline pipeline = Pipeline::xcoreg;
  CoRegConfig single;
  StagedRigidConfig staged;
  MotionConfig motion;

  /// Metric of the last stage, used for labeling outputs.
  MetricKind metric() const;
  std::vector<CoRegConfig*> stages();
};

PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

PhantomSpec phantom_spec_from_json(const nlohmann::json& j);
MisalignmentSpec misalignment_spec_from_json(const nlohmann::json& j);
SequenceSpec sequence_spec_from_json(const nlohmann::json& j);

/// Columns: iter, metric, loss, grad_norm, pi_0..pi_{K-1}, seconds, level,
/// overlap, metric_before_update, metric_after_update.
std::string trace_to_csv(const IterationTrace& trace);

struct ReportRow {
  std::string case_id;
  std::string metric_name;
  std::string method;
  std::string transform_kind;
  double value = 0.0;
};

/// Doubles are printed with 17 significant digits.
std::string report_to_csv(const std::vector<ReportRow>& rows);
std::vector<ReportRow> report_from_csv(const std::string& text);

/// Replaces rows sharing (case_id, method) with `rows`, keeps all others in
/// their original order, and rewrites the file.
void merge_report(const std::filesystem::path& path, const std::vector<ReportRow>& rows);

std::string format_double(double v);

}  // namespace xcoreg
