#include "homog/pipeline.hpp"

#include "homog/error.hpp"
#include "homog/problem_json.hpp"
#include "homog/rng.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#ifndef HOMOG_VERSION
#define HOMOG_VERSION "0.0.0"
#endif

namespace homog {

using nlohmann::json;
namespace fs = std::filesystem;

const char* tool_version() { return HOMOG_VERSION; }

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream out;
  out << std::hex << std::setfill('0');
  for (unsigned int k = 0; k < len; ++k) out << std::setw(2) << static_cast<int>(digest[k]);
  return out.str();
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpecError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

// ---------------------------------------------------------------------------
// Run config

namespace {

std::vector<double> doubles(const json& j, const char* key) {
  if (!j.is_array() || j.empty()) throw SpecError(std::string(key) + ": expected a non-empty array of numbers");
  return j.get<std::vector<double>>();
}

void require_positive(double v, const char* key) {
  if (!(v > 0.0)) throw SpecError(std::string(key) + ": must be positive");
}

void require_positive_list(const std::vector<double>& v, const char* key) {
  for (double x : v) require_positive(x, key);
}

ExitDetection exit_from_string(const std::string& s) {
  if (s == "bridge") return ExitDetection::BrownianBridge;
  if (s == "endpoint") return ExitDetection::Endpoint;
  throw SpecError("fk.exit: expected 'bridge' or 'endpoint', got '" + s + "'");
}

const char* to_string(ExitDetection e) { return e == ExitDetection::BrownianBridge ? "bridge" : "endpoint"; }

}  // namespace

RunConfig run_config_from_json(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw SpecError("config: expected a JSON object");
  RunConfig cfg;
  try {
    if (!doc.contains("problem")) {
      cfg.problem_doc = doc;
      return cfg;
    }
    const auto& p = doc.at("problem");
    if (p.is_string()) {
      cfg.problem_path = base_dir / p.get<std::string>();
      try {
        cfg.problem_doc = json::parse(read_file(cfg.problem_path));
      } catch (const json::parse_error& e) {
        throw SpecError(cfg.problem_path.string() + ": " + e.what());
      }
    } else if (p.is_object()) {
      cfg.problem_doc = p;
    } else {
      throw SpecError("problem: expected a path or an object");
    }

    if (doc.contains("seed")) cfg.seed = doc.at("seed").get<std::uint64_t>();
    if (doc.contains("cells")) cfg.cells = doc.at("cells").get<std::vector<int>>();
    cfg.scheme = doc.value("scheme", cfg.scheme);
    drift_scheme_from_string(cfg.scheme);
    cfg.spd_floor = doc.value("spd_floor", cfg.spd_floor);
    cfg.validation_samples = doc.value("validation_samples", cfg.validation_samples);
    if (doc.contains("eps")) cfg.eps = doubles(doc.at("eps"), "eps");
    if (doc.contains("out")) cfg.out = base_dir / doc.at("out").get<std::string>();

    if (doc.contains("clt")) {
      const auto& c = doc.at("clt");
      if (c.contains("eps")) cfg.clt_eps = doubles(c.at("eps"), "clt.eps");
      if (c.contains("t")) cfg.clt_t = doubles(c.at("t"), "clt.t");
      cfg.clt_paths = c.value("n_paths", cfg.clt_paths);
      cfg.clt_dt_factor = c.value("dt_factor", cfg.clt_dt_factor);
      cfg.clt_batches = c.value("batches", cfg.clt_batches);
      cfg.clt_z = c.value("z_threshold", cfg.clt_z);
    }
    if (doc.contains("fk")) {
      const auto& f = doc.at("fk");
      auto& s = cfg.study;
      s.n_paths = f.value("n_paths", s.n_paths);
      s.dt_factor = f.value("dt_factor", s.dt_factor);
      s.dt_max = f.value("dt_max", s.dt_max);
      s.dt_hom = f.value("dt_hom", s.dt_hom);
      s.horizon_cap = f.value("horizon_cap", s.horizon_cap);
      if (f.contains("exit")) s.exit = exit_from_string(f.at("exit").get<std::string>());
      s.check_growth = f.value("check_growth", s.check_growth);
      s.step_budget = f.value("step_budget", s.step_budget);
      s.tolerance = f.value("tolerance", s.tolerance);
    }
    if (doc.contains("points")) {
      for (const auto& p : doc.at("points")) {
        StudyPoint sp;
        sp.x = p.at("x").get<std::vector<double>>();
        sp.regime = p.value("i", 0);
        if (p.contains("t")) sp.t = p.at("t").get<double>();
        cfg.points.push_back(std::move(sp));
      }
    }
    if (doc.contains("solve")) {
      const auto& s = doc.at("solve");
      if (s.contains("x")) cfg.solve.x = s.at("x").get<std::vector<double>>();
      cfg.solve.regime = s.value("i", cfg.solve.regime);
      cfg.solve.eps = s.value("eps", cfg.solve.eps);
      cfg.solve.t = s.value("t", cfg.solve.t);
      cfg.solve.n_paths = s.value("n_paths", cfg.solve.n_paths);
      if (s.contains("dt")) cfg.solve.dt = s.at("dt").get<double>();
    }
  } catch (const json::exception& e) {
    throw SpecError(std::string("config: ") + e.what());
  }

  require_positive(cfg.spd_floor, "spd_floor");
  require_positive_list(cfg.eps, "eps");
  require_positive_list(cfg.clt_eps, "clt.eps");
  require_positive_list(cfg.clt_t, "clt.t");
  require_positive(cfg.clt_dt_factor, "clt.dt_factor");
  require_positive(cfg.clt_z, "clt.z_threshold");
  require_positive(cfg.study.dt_factor, "fk.dt_factor");
  require_positive(cfg.study.dt_max, "fk.dt_max");
  require_positive(cfg.study.dt_hom, "fk.dt_hom");
  require_positive(cfg.study.horizon_cap, "fk.horizon_cap");
  if (cfg.study.tolerance < 0.0) throw SpecError("fk.tolerance: must be nonnegative");
  if (cfg.solve.eps < 0.0) throw SpecError("solve.eps: must be nonnegative");
  if (cfg.solve.dt) require_positive(*cfg.solve.dt, "solve.dt");
  for (int c : cfg.cells)
    if (c < 3) throw SpecError("cells: need at least 3 per axis");
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw SpecError(path.string() + ": " + e.what());
  }
  return run_config_from_json(doc, path.parent_path());
}

json to_json(const RunConfig& cfg) {
  json points = json::array();
  for (const auto& p : cfg.points) {
    json e{{"x", p.x}, {"i", p.regime}};
    if (p.t) e["t"] = *p.t;
    points.push_back(std::move(e));
  }
  const auto& s = cfg.study;
  json solve{{"x", cfg.solve.x}, {"i", cfg.solve.regime}, {"eps", cfg.solve.eps},
             {"t", cfg.solve.t}, {"n_paths", cfg.solve.n_paths}};
  if (cfg.solve.dt) solve["dt"] = *cfg.solve.dt;
  return json{{"problem", cfg.problem_doc},
              {"seed", cfg.seed ? json(*cfg.seed) : json(nullptr)},
              {"cells", cfg.cells},
              {"scheme", cfg.scheme},
              {"spd_floor", cfg.spd_floor},
              {"validation_samples", cfg.validation_samples},
              {"eps", cfg.eps},
              {"clt",
               {{"eps", cfg.clt_eps},
                {"t", cfg.clt_t},
                {"n_paths", cfg.clt_paths},
                {"dt_factor", cfg.clt_dt_factor},
                {"batches", cfg.clt_batches},
                {"z_threshold", cfg.clt_z}}},
              {"fk",
               {{"n_paths", s.n_paths},
                {"dt_factor", s.dt_factor},
                {"dt_max", s.dt_max},
                {"dt_hom", s.dt_hom},
                {"horizon_cap", s.horizon_cap},
                {"exit", to_string(s.exit)},
                {"check_growth", s.check_growth},
                {"step_budget", s.step_budget},
                {"tolerance", s.tolerance}}},
              {"points", std::move(points)},
              {"solve", std::move(solve)}};
}

// ---------------------------------------------------------------------------
// Commands

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"validate",       "stationary",      "corrector",
                                              "effective",      "clt",             "solve-elliptic",
                                              "solve-parabolic", "converge",       "pipeline"};
  return names;
}

namespace {

constexpr std::uint64_t kStageSalt = 0x5354414745;

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct StageFailure : std::runtime_error {
  int code;
  StageFailure(int c, const std::string& m) : std::runtime_error(m), code(c) {}
};

class Runner {
 public:
  Runner(const RunConfig& cfg, fs::path out, std::string command)
      : cfg_(cfg), out_(std::move(out)), command_(std::move(command)) {
    manifest_ = json{{"tool", "homog"},
                     {"version", tool_version()},
                     {"command", command_},
                     {"config_hash", sha256_hex(to_json(cfg).dump())},
                     {"seed", *cfg.seed},
                     {"timestamps", {{"started", utc_now()}}},
                     {"stages", json::array()}};
    json inputs = json::array();
    if (!cfg.problem_path.empty())
      inputs.push_back({{"file", cfg.problem_path.filename().string()}, {"sha256", sha256_file(cfg.problem_path)}});
    else
      inputs.push_back({{"file", "<inline problem>"}, {"sha256", sha256_hex(cfg.problem_doc.dump())}});
    manifest_["inputs"] = std::move(inputs);
  }

  CommandResult run(const std::function<void(Runner&)>& body) {
    CommandResult result;
    try {
      fs::create_directories(out_);
      body(*this);
    } catch (const StageFailure& e) {
      result.exit_code = e.code;
      result.message = e.what();
    } catch (const SpecError& e) {
      result.exit_code = kExitUsage;
      result.message = e.what();
    } catch (const BudgetError& e) {
      result.exit_code = kExitBudget;
      result.message = e.what();
    } catch (const std::exception& e) {
      result.exit_code = kExitStage;
      result.message = e.what();
    }
    if (result.exit_code != kExitOk) {
      result.stage = current_.empty() ? "setup" : current_;
      if (!stage_closed_) close_stage("failed", result.message);
      manifest_["failed_stage"] = result.stage;
      manifest_["error"] = result.message;
    }
    manifest_["status"] = result.exit_code == kExitOk ? "complete" : "failed";
    manifest_["exit_code"] = result.exit_code;
    manifest_["timestamps"]["finished"] = utc_now();
    try {
      std::ofstream(out_ / "manifest.json") << manifest_.dump(2) << '\n';
    } catch (const std::exception&) {
    }
    result.files = files_;
    return result;
  }

  void begin(const std::string& stage) {
    current_ = stage;
    stage_closed_ = false;
    stage_ = json{{"name", stage}, {"outputs", json::array()}};
  }

  void summary(const std::string& key, json value) { stage_["summary"][key] = std::move(value); }

  void end() { close_stage("ok", ""); }

  void fail(int code, const std::string& message) { throw StageFailure(code, current_ + ": " + message); }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(out_ / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (out_ / name).string());
    out << content;
    out.close();
    stage_["outputs"].push_back({{"file", name}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}});
    files_.push_back(name);
  }

  std::uint64_t seed(std::uint64_t stream) const { return derive_seed(*cfg_.seed, stream, kStageSalt); }

  const RunConfig& cfg() const { return cfg_; }

 private:
  void close_stage(const std::string& status, const std::string& message) {
    if (current_.empty()) return;
    stage_["status"] = status;
    if (!message.empty()) stage_["error"] = message;
    manifest_["stages"].push_back(stage_);
    stage_closed_ = true;
  }

  const RunConfig& cfg_;
  fs::path out_;
  std::string command_;
  json manifest_;
  json stage_;
  std::string current_;
  bool stage_closed_ = true;
  std::vector<std::string> files_;
};

// Seed streams per stage.
constexpr std::uint64_t kValidateStream = 0;
constexpr std::uint64_t kCltStream = 1;
constexpr std::uint64_t kStudyStream = 2;
constexpr std::uint64_t kSolveStream = 3;

struct State {
  ProblemSpec spec;
  TorusGrid grid;
  GeneratorMatrix G;
  InvariantMeasure pi;
  Corrector corr;
  EffectiveCoefficients ec;
};

std::vector<int> resolve_cells(const RunConfig& cfg, int d) {
  if (cfg.cells.empty()) return std::vector<int>(d, d == 1 ? 256 : d == 2 ? 48 : 16);
  if (cfg.cells.size() == 1) return std::vector<int>(d, cfg.cells[0]);
  if (static_cast<int>(cfg.cells.size()) != d)
    throw SpecError("cells: expected 1 or " + std::to_string(d) + " entries");
  return cfg.cells;
}

void stage_validate(Runner& r, State& s, bool write_report) {
  r.begin("validate");
  s.spec = problem_from_json(r.cfg().problem_doc);
  ValidationOptions vo;
  vo.samples = r.cfg().validation_samples;
  vo.seed = r.seed(kValidateStream);
  const auto report = validate_spec(s.spec, vo);
  const json j = to_json(report);
  if (write_report) r.write("validation.json", j.dump(2) + "\n");
  r.summary("report", j);
  if (!report.passed()) {
    std::string failed;
    for (const auto& c : report.checks)
      if (!c.passed) failed += (failed.empty() ? "" : ", ") + c.name;
    r.fail(kExitValidation, "failed checks: " + failed);
  }
  r.end();
}

void stage_stationary(Runner& r, State& s, bool write_csv) {
  r.begin("stationary");
  s.grid = TorusGrid(resolve_cells(r.cfg(), s.spec.d), s.spec.tau, s.spec.n);
  GeneratorOptions go;
  go.scheme = drift_scheme_from_string(r.cfg().scheme);
  s.G = discretize_generator(s.spec, s.grid, 0.0, go);
  s.pi = stationary_measure(s.G);
  if (write_csv) {
    std::ostringstream csv;
    write_measure_csv(s.pi, csv);
    r.write("stationary.csv", csv.str());
  }
  r.summary("cells", s.grid.cells());
  r.summary("scheme", to_string(go.scheme));
  r.summary("residual", s.pi.residual);
  r.summary("regime_marginal", s.pi.regime_marginal());
  r.summary("warnings", s.pi.warnings);
  r.end();
}

void stage_corrector(Runner& r, State& s, bool write_csv) {
  r.begin("corrector");
  s.corr = solve_corrector(s.G, s.spec, s.pi);
  if (write_csv) {
    std::ostringstream csv;
    write_corrector_csv(s.corr, csv);
    r.write("corrector.csv", csv.str());
  }
  r.summary("pi0_b", s.corr.pi_b);
  r.summary("residual", s.corr.residual);
  r.end();
}

void stage_effective(Runner& r, State& s, bool write_json) {
  r.begin("effective");
  s.ec = effective_coefficients(s.pi, s.corr, s.spec);
  const auto cert = assert_spd(s.ec, r.cfg().spd_floor);
  json j = to_json(s.ec);
  j["spd"] = {{"passed", cert.passed},
              {"floor", r.cfg().spd_floor},
              {"min_eigenvalue", cert.min_eigenvalue},
              {"witness", std::vector<double>(cert.witness.data(), cert.witness.data() + cert.witness.size())}};
  if (write_json) r.write("effective.json", j.dump(2) + "\n");
  r.summary("min_eigenvalue", cert.min_eigenvalue);
  if (!cert.passed) r.fail(kExitStage, "effective covariance is not positive definite (min eigenvalue " +
                                           std::to_string(cert.min_eigenvalue) + ")");
  r.end();
}

void stage_clt(Runner& r, State& s) {
  r.begin("clt");
  CltOptions o;
  o.eps_list = r.cfg().clt_eps;
  o.t_list = r.cfg().clt_t;
  o.n_paths = r.cfg().clt_paths;
  o.dt_factor = r.cfg().clt_dt_factor;
  o.batches = r.cfg().clt_batches;
  o.z_threshold = r.cfg().clt_z;
  const auto rep = run_clt(s.spec, s.ec, s.ec.pi_b, o, r.seed(kCltStream));
  std::ostringstream csv;
  write_clt_csv(rep, csv);
  r.write("clt.csv", csv.str());
  r.write("clt.json", to_json(rep).dump(2) + "\n");
  r.summary("passed", rep.passed);
  r.summary("max_z_smallest_eps", rep.max_z_smallest_eps);
  if (!rep.passed)
    r.fail(kExitStage, "moments at eps = " + std::to_string(rep.smallest_eps) + " deviate by " +
                           std::to_string(rep.max_z_smallest_eps) + " standard errors");
  r.end();
}

std::vector<StudyPoint> study_points(const RunConfig& cfg, const ProblemSpec& spec) {
  if (!cfg.points.empty()) return cfg.points;
  std::vector<StudyPoint> pts;
  const std::vector<double> origin(static_cast<std::size_t>(spec.d), 0.0);
  for (int i = 0; i < spec.n; ++i) {
    StudyPoint p{origin, i, std::nullopt};
    if (!spec.is_elliptic()) p.t = cfg.solve.t;
    pts.push_back(std::move(p));
  }
  return pts;
}

void stage_converge(Runner& r, State& s) {
  r.begin("converge");
  if (!s.spec.is_elliptic() && !s.spec.is_parabolic())
    r.fail(kExitStage, "the problem declares neither a domain nor a growth bound");
  const auto rep =
      convergence_study(s.spec, s.ec, study_points(r.cfg(), s.spec), r.cfg().eps, r.cfg().study, r.seed(kStudyStream));
  std::ostringstream csv;
  write_study_csv(rep, csv);
  r.write("convergence.csv", csv.str());
  r.summary("final_close", rep.final_close);
  r.summary("regimes_agree", rep.regimes_agree);
  r.summary("gaps_decrease", rep.gaps_decrease);
  r.summary("steps", rep.steps);
  if (rep.budget_exhausted) r.fail(kExitBudget, "step budget exhausted after " + std::to_string(rep.rows.size()) + " rows");
  if (!rep.final_close) r.fail(kExitStage, "gap at the smallest eps exceeds 3 combined SE + tolerance");
  if (!rep.regimes_agree) r.fail(kExitStage, "regimes disagree at the smallest eps");
  r.end();
}

FkOptions solve_options(const RunConfig& cfg, double eps) {
  FkOptions o;
  o.n_paths = cfg.solve.n_paths;
  o.dt = cfg.solve.dt ? *cfg.solve.dt
                      : (eps > 0.0 ? std::min(cfg.study.dt_max, cfg.study.dt_factor * eps * eps) : cfg.study.dt_hom);
  o.horizon_cap = cfg.study.horizon_cap;
  o.exit = cfg.study.exit;
  o.check_growth = cfg.study.check_growth;
  return o;
}

void stage_solve(Runner& r, State& s, bool elliptic) {
  const auto& cfg = r.cfg();
  const double eps = cfg.solve.eps;
  std::vector<double> x = cfg.solve.x;
  if (x.empty()) x.assign(static_cast<std::size_t>(s.spec.d), 0.0);
  const FkOptions o = solve_options(cfg, eps);
  r.begin(elliptic ? "solve-elliptic" : "solve-parabolic");
  FkEstimate est;
  if (elliptic) {
    if (eps > 0.0) {
      est = solve_elliptic_eps(s.spec, x, cfg.solve.regime, eps, o, r.seed(kSolveStream));
    } else {
      if (!s.spec.domain) r.fail(kExitStage, "the problem has no domain");
      est = solve_elliptic_hom(LimitProcessParams::from(s.ec), *s.spec.domain, s.spec.source_f, s.spec.boundary_g, x,
                               o, r.seed(kSolveStream));
    }
  } else {
    if (eps > 0.0) {
      est = solve_parabolic_eps(s.spec, cfg.solve.t, x, cfg.solve.regime, eps, o, r.seed(kSolveStream));
    } else {
      est = solve_parabolic_hom(LimitProcessParams::from(s.ec), s.spec.source_f, s.spec.boundary_g, cfg.solve.t, x, o,
                                r.seed(kSolveStream));
    }
  }
  json j = to_json(est);
  j["x"] = x;
  j["i"] = cfg.solve.regime;
  r.write(elliptic ? "solve_elliptic.json" : "solve_parabolic.json", j.dump(2) + "\n");
  r.end();
}

}  // namespace

CommandResult run_command(const std::string& name, const RunConfig& cfg, const fs::path& out_dir) {
  if (std::find(command_names().begin(), command_names().end(), name) == command_names().end())
    return {kExitUsage, "setup", "unknown command '" + name + "'", {}};
  if (!cfg.seed) return {kExitUsage, "setup", "a master seed is required (--seed or \"seed\" in the config)", {}};

  Runner runner(cfg, out_dir, name);
  return runner.run([&](Runner& r) {
    State s;
    const bool cell_outputs = name == "pipeline";
    if (name == "validate") {
      stage_validate(r, s, true);
      return;
    }
    stage_validate(r, s, false);
    const bool needs_effective = !((name == "solve-elliptic" || name == "solve-parabolic") && cfg.solve.eps > 0.0);
    if (!needs_effective) {
      stage_solve(r, s, name == "solve-elliptic");
      return;
    }
    stage_stationary(r, s, cell_outputs || name == "stationary");
    if (name == "stationary") return;
    stage_corrector(r, s, cell_outputs || name == "corrector");
    if (name == "corrector") return;
    stage_effective(r, s, cell_outputs || name == "effective");
    if (name == "effective") return;
    if (name == "clt" || name == "pipeline") stage_clt(r, s);
    if (name == "converge" || name == "pipeline") stage_converge(r, s);
    if (name == "solve-elliptic" || name == "solve-parabolic") stage_solve(r, s, name == "solve-elliptic");
  });
}

}  // namespace homog
