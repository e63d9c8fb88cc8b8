#pragma once

#include "gcalib/pipeline.hpp"
#include "gcalib/simulator.hpp"

#include <string>

namespace gcalib {

constexpr int kSchemaVersion = 1;

/// Shortest-safe decimal form used for timestamps (17 significant digits).
std::string format_timestamp(double t);
double parse_timestamp(const std::string& s);

std::string scenario_to_string(const Scenario& scenario);
Scenario scenario_from_string(const std::string& text);
void export_scenario(const Scenario& scenario, const std::string& path);
Scenario import_scenario(const std::string& path);

struct ConfigFile {
  ScenarioConfig scenario;
  PipelineConfig pipeline = PipelineConfig::defaults();
};

/// Missing sections and keys take their defaults; unknown keys are rejected.
ConfigFile config_from_string(const std::string& text);
ConfigFile load_config(const std::string& path);
std::string config_to_string(const ConfigFile& config);

std::string report_to_string(const CalibrationReport& report);
CalibrationReport report_from_string(const std::string& text);
void write_report(const CalibrationReport& report, const std::string& path);
CalibrationReport read_report(const std::string& path);

/// One row per keyframe pair; returns the written file path.
std::string write_keyframe_csv(const CalibrationReport& report, const std::string& directory);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace gcalib
