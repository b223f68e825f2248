#pragma once

#include "homog/cell.hpp"
#include "homog/clt.hpp"
#include "homog/effective.hpp"
#include "homog/fk.hpp"
#include "homog/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace homog {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitValidation = 3, kExitStage = 4, kExitBudget = 5 };

const char* tool_version();

/// Hex SHA-256 of a byte string / file.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

struct SolveSettings {
  std::vector<double> x;  // defaults to the origin
  int regime = 0;
  double eps = 0.1;  // 0 solves the homogenized problem
  double t = 1.0;
  std::size_t n_paths = 10000;
  std::optional<double> dt;  // default min(1e-3, 0.02 eps^2)
};

/// Everything a run needs besides the output directory and thread count.
struct RunConfig {
  nlohmann::json problem_doc;
  std::filesystem::path problem_path;  // empty when the problem is inline
  std::optional<std::uint64_t> seed;

  std::vector<int> cells;  // one entry per axis, or one entry for all
  std::string scheme = "exponential-fitted";
  double spd_floor = 1e-6;
  std::size_t validation_samples = 10000;

  std::vector<double> clt_eps{0.2, 0.1, 0.05};
  std::vector<double> clt_t{0.5, 1.0};
  std::size_t clt_paths = 10000;
  double clt_dt_factor = 1.0 / 50.0;
  std::size_t clt_batches = 20;
  double clt_z = 3.0;

  std::vector<double> eps{0.5, 0.2, 0.1, 0.05};
  std::vector<StudyPoint> points;  // default: origin in every regime
  StudyOptions study;

  SolveSettings solve;
  std::optional<std::filesystem::path> out;
};

/// Reads a run config. A document with a "problem" key (path relative to the
/// config file, or inline object) is a run config; anything else is taken as
/// a bare problem spec with default run parameters. Throws SpecError.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);

/// Resolved parameters (no output directory, no thread count) as JSON.
nlohmann::json to_json(const RunConfig& cfg);

/// Outcome of one command. `stage` names the failing stage.
struct CommandResult {
  int exit_code = kExitOk;
  std::string stage;
  std::string message;
  std::vector<std::string> files;  // relative to the output directory
};

/// Subcommands: validate, stationary, corrector, effective, clt,
/// solve-elliptic, solve-parabolic, converge, pipeline. Each writes its
/// artifacts plus manifest.json into out_dir. The seed must be set.
CommandResult run_command(const std::string& name, const RunConfig& cfg, const std::filesystem::path& out_dir);

const std::vector<std::string>& command_names();

}  // namespace homog
