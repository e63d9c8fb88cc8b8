// gcalib: simulate scenarios, calibrate them, evaluate reports, run Monte-Carlo sweeps.

#include "gcalib/error.hpp"
#include "gcalib/harness.hpp"
#include "gcalib/io.hpp"
#include "gcalib/pipeline.hpp"
#include "gcalib/simulator.hpp"

#include "CLI11.hpp"

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kScenarioError = 3;
constexpr int kPipelineFailure = 4;

using gcalib::Error;
using gcalib::ErrorCode;

int fail(int code, const std::string& what) {
  std::cerr << "gcalib: " << what << "\n";
  return code;
}

gcalib::ConfigFile load_config_or_throw(const std::string& path) { return gcalib::load_config(path); }

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw Error(ErrorCode::InvalidConfig, "bad noise grid entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw Error(ErrorCode::InvalidConfig, "empty noise grid");
  return out;
}

int cmd_simulate(const std::string& config_path, std::uint64_t seed, const std::string& out) {
  gcalib::ConfigFile cfg;
  try {
    cfg = load_config_or_throw(config_path);
  } catch (const Error& e) {
    return fail(kConfigError, e.what());
  }
  cfg.scenario.seed = seed;
  try {
    gcalib::export_scenario(gcalib::generate(cfg.scenario), out);
  } catch (const Error& e) {
    return fail(e.code() == ErrorCode::InvalidConfig ? kConfigError : kScenarioError, e.what());
  }
  return kOk;
}

int cmd_calibrate(const std::string& scenario_path, const std::string& config_path,
                  const std::string& out, const std::string& csv_dir) {
  gcalib::ConfigFile cfg;
  try {
    cfg = load_config_or_throw(config_path);
  } catch (const Error& e) {
    return fail(kConfigError, e.what());
  }
  gcalib::Scenario scenario;
  try {
    scenario = gcalib::import_scenario(scenario_path);
  } catch (const Error& e) {
    return fail(kScenarioError, e.what());
  }
  gcalib::CalibrationReport report;
  try {
    report = gcalib::run_pipeline(scenario, cfg.pipeline);
  } catch (const Error& e) {
    return fail(e.code() == ErrorCode::InvalidConfig ? kConfigError : kPipelineFailure, e.what());
  }
  try {
    gcalib::write_report(report, out);
    if (!csv_dir.empty()) gcalib::write_keyframe_csv(report, csv_dir);
  } catch (const Error& e) {
    return fail(kPipelineFailure, e.what());
  }
  if (report.aborted) return fail(kPipelineFailure, "pipeline aborted: " + report.abort_reason);
  return kOk;
}

int cmd_evaluate(const std::string& report_path, const std::string& scenario_path,
                 const std::string& out, double bound) {
  gcalib::CalibrationReport report;
  gcalib::Scenario scenario;
  try {
    report = gcalib::read_report(report_path);
    scenario = gcalib::import_scenario(scenario_path);
  } catch (const Error& e) {
    return fail(kScenarioError, e.what());
  }
  try {
    gcalib::write_text_file(out, gcalib::summary_to_string(gcalib::summarize(report, scenario, bound)));
  } catch (const Error& e) {
    return fail(kScenarioError, e.what());
  }
  return kOk;
}

int cmd_sweep(const std::string& config_path, const std::string& grid_text, int replicas,
              const std::string& out_dir) {
  gcalib::ConfigFile cfg;
  std::vector<double> grid;
  try {
    cfg = load_config_or_throw(config_path);
    grid = parse_grid(grid_text);
    if (replicas < 1) throw Error(ErrorCode::InvalidConfig, "replicas must be >= 1");
  } catch (const Error& e) {
    return fail(kConfigError, e.what());
  }
  std::vector<std::vector<gcalib::CalibrationReport>> reports;
  gcalib::SweepResult result;
  try {
    result = gcalib::run_sweep(cfg, grid, replicas, &reports);
  } catch (const Error& e) {
    return fail(e.code() == ErrorCode::InvalidConfig ? kConfigError : kPipelineFailure, e.what());
  }
  try {
    const std::filesystem::path dir(out_dir);
    gcalib::write_text_file((dir / "sweep.json").string(), gcalib::sweep_to_string(result));
    for (std::size_t c = 0; c < reports.size(); ++c)
      for (std::size_t r = 0; r < reports[c].size(); ++r)
        gcalib::write_report(reports[c][r], (dir / ("noise_" + std::to_string(c)) /
                                             ("replica_" + std::to_string(r) + ".json"))
                                                .string());
  } catch (const Error& e) {
    return fail(kPipelineFailure, e.what());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monocular camera-to-ground calibration"};
  app.require_subcommand(1);

  std::string config, out, scenario, report, csv, grid;
  std::uint64_t seed = 1;
  int replicas = 20;
  double bound = 1.0;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic scenario");
  sim->add_option("--config", config, "config file")->required();
  sim->add_option("--seed", seed, "scenario seed")->required();
  sim->add_option("--out", out, "scenario output")->required();

  auto* cal = app.add_subcommand("calibrate", "run the calibration pipeline on a scenario");
  cal->add_option("--scenario", scenario, "scenario file")->required();
  cal->add_option("--config", config, "config file")->required();
  cal->add_option("--out", out, "report output")->required();
  cal->add_option("--csv", csv, "directory for the per-keyframe CSV");

  auto* ev = app.add_subcommand("evaluate", "summarise a report against scenario truth");
  ev->add_option("--report", report, "report file")->required();
  ev->add_option("--scenario", scenario, "scenario file")->required();
  ev->add_option("--out", out, "summary output")->required();
  ev->add_option("--transfer-bound", bound, "eps_f bound in pixels for the within-bound share");

  auto* sw = app.add_subcommand("sweep", "Monte-Carlo runs over a pixel noise grid");
  sw->add_option("--config", config, "config file")->required();
  sw->add_option("--noise-grid", grid, "comma separated pixel noise sigmas")->required();
  sw->add_option("--replicas", replicas, "replicas per noise level")->required();
  sw->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*sim) return cmd_simulate(config, seed, out);
    if (*cal) return cmd_calibrate(scenario, config, out, csv);
    if (*ev) return cmd_evaluate(report, scenario, out, bound);
    if (*sw) return cmd_sweep(config, grid, replicas, out);
  } catch (const std::exception& e) {
    return fail(kPipelineFailure, e.what());
  }
  return kOk;
}
