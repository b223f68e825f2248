#include "homog/error.hpp"
#include "homog/parallel.hpp"
#include "homog/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Homogenization of regime-switching diffusions"};
  app.set_version_flag("--version", homog::tool_version());
  app.require_subcommand(1, 1);

  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::vector<double> eps;
  std::vector<int> cells;

  app.add_option("--config", config, "Run config or problem JSON")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out, "Output directory (default: config 'out', then $HOMOG_OUT_DIR, then ./homog_out)");
  auto* seed_opt = app.add_option("--seed", seed, "Master seed (required unless the config sets one)");
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--eps", eps, "Comma-separated eps list")->delimiter(',');
  app.add_option("--cells", cells, "Grid cells, one value or one per axis")->delimiter(',');

  const std::vector<std::pair<std::string, std::string>> help{
      {"validate", "Check the standing assumptions and write validation.json"},
      {"stationary", "Invariant measure on the torus grid"},
      {"corrector", "Cell-problem corrector"},
      {"effective", "Effective covariance, drift and killing rate"},
      {"clt", "Moment and normality test of the rescaled process"},
      {"solve-elliptic", "Feynman-Kac estimate of the elliptic problem (eps = 0: homogenized)"},
      {"solve-parabolic", "Feynman-Kac estimate of the parabolic problem (eps = 0: homogenized)"},
      {"converge", "Gap between eps-problem and homogenized solutions over an eps list"},
      {"pipeline", "All stages with a manifest"}};
  for (const auto& [name, text] : help) app.add_subcommand(name, text)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return homog::kExitUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  homog::RunConfig cfg;
  try {
    cfg = homog::load_run_config(config);
    if (seed_opt->count() > 0) cfg.seed = seed;
    if (!eps.empty()) {
      for (double e : eps)
        if (!(e > 0.0)) throw homog::SpecError("--eps: values must be positive");
      cfg.eps = eps;
      cfg.clt_eps = eps;
      cfg.solve.eps = eps.front();
    }
    if (!cells.empty()) cfg.cells = cells;
  } catch (const homog::SpecError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return homog::kExitUsage;
  }

  fs::path out_dir;
  if (!out.empty()) {
    out_dir = out;
  } else if (cfg.out) {
    out_dir = *cfg.out;
  } else if (const char* env = std::getenv("HOMOG_OUT_DIR"); env && *env) {
    out_dir = env;
  } else {
    out_dir = "homog_out";
  }

  if (threads > 0) homog::set_thread_count(threads);
  const auto result = homog::run_command(command, cfg, out_dir);
  if (result.exit_code == homog::kExitOk) {
    std::cout << command << ": ok, " << result.files.size() + 1 << " files in " << out_dir.string() << '\n';
  } else {
    std::cerr << command << ": stage '" << result.stage << "' failed (exit " << result.exit_code
              << "): " << result.message << '\n';
  }
  return result.exit_code;
}
