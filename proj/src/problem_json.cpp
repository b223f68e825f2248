#include "homog/problem_json.hpp"

#include "homog/error.hpp"

#include <fstream>

namespace homog {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw SpecError(where + ": " + what);
}

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) fail(where, std::string("missing key '") + key + "'");
  return obj.at(key);
}

double as_number(const json& v, const std::string& where) {
  if (!v.is_number()) fail(where, "expected a number");
  return v.get<double>();
}

std::vector<double> as_vector(const json& v, std::size_t len, const std::string& where) {
  if (!v.is_array() || v.size() != len)
    fail(where, "expected an array of " + std::to_string(len) + " numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < len; ++i) out.push_back(as_number(v[i], where));
  return out;
}

TrigPolynomial parse_trig(const json& v, const std::vector<double>& tau, const std::string& where) {
  if (v.is_number()) return TrigPolynomial::constant(v.get<double>());
  if (!v.is_object()) fail(where, "expected a number or {\"const\", \"terms\"}");
  const double c0 = v.contains("const") ? as_number(v.at("const"), where + ".const") : 0.0;
  std::vector<TrigPolynomial::Term> terms;
  if (v.contains("terms")) {
    const auto& arr = v.at("terms");
    if (!arr.is_array()) fail(where + ".terms", "expected an array");
    for (std::size_t t = 0; t < arr.size(); ++t) {
      const std::string w = where + ".terms[" + std::to_string(t) + "]";
      const auto& k = require(arr[t], "k", w);
      if (!k.is_array() || k.size() != tau.size())
        fail(w + ".k", "expected " + std::to_string(tau.size()) + " integer frequencies");
      TrigPolynomial::Term term;
      for (const auto& kj : k) {
        if (!kj.is_number_integer()) fail(w + ".k", "frequencies must be integers");
        term.k.push_back(kj.get<int>());
      }
      if (arr[t].contains("cos")) term.cos_coef = as_number(arr[t].at("cos"), w + ".cos");
      if (arr[t].contains("sin")) term.sin_coef = as_number(arr[t].at("sin"), w + ".sin");
      terms.push_back(std::move(term));
    }
  }
  return TrigPolynomial(c0, std::move(terms), tau);
}

// Per-regime list of component lists. A regime entry is either a list of
// `dim` fields or, when dim == 1, a single field. Nested row lists (sigma as
// d rows of m entries) are flattened row-major.
PeriodicField parse_field(const json& v, int n, int dim, const std::vector<double>& tau,
                          const std::string& where) {
  if (!v.is_array() || static_cast<int>(v.size()) != n)
    fail(where, "expected an array with one entry per regime (" + std::to_string(n) + ")");
  std::vector<std::vector<TrigPolynomial>> table;
  for (int i = 0; i < n; ++i) {
    const std::string w = where + "[" + std::to_string(i) + "]";
    const auto& entry = v[i];
    std::vector<json> flat;
    if (entry.is_array()) {
      for (const auto& e : entry) {
        if (e.is_array())
          for (const auto& inner : e) flat.push_back(inner);
        else
          flat.push_back(e);
      }
    } else {
      flat.push_back(entry);
    }
    if (static_cast<int>(flat.size()) != dim)
      fail(w, "expected " + std::to_string(dim) + " components, got " + std::to_string(flat.size()));
    std::vector<TrigPolynomial> comps;
    for (int k = 0; k < dim; ++k)
      comps.push_back(parse_trig(flat[k], tau, w + "[" + std::to_string(k) + "]"));
    table.push_back(std::move(comps));
  }
  return PeriodicField::trig(dim, std::move(table));
}

ScalarFunction parse_scalar(const json& v, int d, const std::string& where) {
  if (v.is_number()) return ScalarFunction::constant(d, v.get<double>());
  const auto& type = require(v, "type", where);
  if (type == "constant") return ScalarFunction::constant(d, as_number(require(v, "value", where), where));
  if (type == "polynomial") {
    const auto& arr = require(v, "terms", where);
    if (!arr.is_array()) fail(where + ".terms", "expected an array");
    std::vector<ScalarFunction::Monomial> terms;
    for (std::size_t t = 0; t < arr.size(); ++t) {
      const std::string w = where + ".terms[" + std::to_string(t) + "]";
      ScalarFunction::Monomial mono;
      mono.coef = as_number(require(arr[t], "coef", w), w + ".coef");
      const auto& pw = require(arr[t], "pow", w);
      if (!pw.is_array() || static_cast<int>(pw.size()) != d)
        fail(w + ".pow", "expected " + std::to_string(d) + " exponents");
      for (const auto& p : pw) {
        if (!p.is_number_integer() || p.get<int>() < 0)
          fail(w + ".pow", "exponents must be nonnegative integers");
        mono.powers.push_back(p.get<int>());
      }
      terms.push_back(std::move(mono));
    }
    return ScalarFunction::polynomial(d, std::move(terms));
  }
  if (type == "ball") {
    const auto center = as_vector(require(v, "center", where), d, where + ".center");
    return ScalarFunction::ball(center, as_number(require(v, "radius", where), where + ".radius"));
  }
  fail(where + ".type", "unknown scalar function type '" + type.dump() + "'");
}

int as_positive_int(const json& doc, const char* key) {
  const auto& v = require(doc, key, "problem");
  if (!v.is_number_integer() || v.get<int>() < 1)
    fail(std::string("problem.") + key, "expected a positive integer");
  return v.get<int>();
}

}  // namespace

ProblemSpec problem_from_json(const json& doc) {
  if (!doc.is_object()) throw SpecError("problem: expected a JSON object");
  ProblemSpec spec;
  spec.name = doc.value("name", std::string("unnamed"));
  spec.d = as_positive_int(doc, "d");
  spec.m = doc.contains("m") ? as_positive_int(doc, "m") : spec.d;
  spec.n = doc.contains("n") ? as_positive_int(doc, "n") : 1;
  spec.tau = doc.contains("tau") ? as_vector(doc.at("tau"), spec.d, "problem.tau")
                                 : std::vector<double>(spec.d, 1.0);
  for (double t : spec.tau)
    if (!(t > 0.0)) fail("problem.tau", "periods must be strictly positive");

  spec.drift_b = parse_field(require(doc, "drift_b", "problem"), spec.n, spec.d, spec.tau,
                             "problem.drift_b");
  spec.drift_c = doc.contains("drift_c")
                     ? parse_field(doc.at("drift_c"), spec.n, spec.d, spec.tau, "problem.drift_c")
                     : PeriodicField::zero(spec.d, spec.n);
  spec.sigma = parse_field(require(doc, "sigma", "problem"), spec.n, spec.d * spec.m, spec.tau,
                           "problem.sigma");
  spec.killing_e = doc.contains("killing_e")
                       ? parse_field(doc.at("killing_e"), spec.n, 1, spec.tau, "problem.killing_e")
                       : PeriodicField::zero(1, spec.n);

  if (doc.contains("q_matrix")) {
    const auto& q = doc.at("q_matrix");
    if (!q.is_array() || static_cast<int>(q.size()) != spec.n)
      fail("problem.q_matrix", "expected " + std::to_string(spec.n) + " rows");
    spec.q_matrix.resize(spec.n, spec.n);
    for (int i = 0; i < spec.n; ++i) {
      const auto row = as_vector(q[i], spec.n, "problem.q_matrix[" + std::to_string(i) + "]");
      for (int j = 0; j < spec.n; ++j) spec.q_matrix(i, j) = row[j];
    }
  } else if (spec.n > 1) {
    fail("problem", "missing key 'q_matrix'");
  }

  if (doc.contains("domain")) {
    const auto& dom = doc.at("domain");
    LevelSetDomain ls;
    ls.level = parse_scalar(require(dom, "level_set", "problem.domain"), spec.d,
                            "problem.domain.level_set");
    ls.delta = as_number(require(dom, "delta", "problem.domain"), "problem.domain.delta");
    const auto& bbox = require(dom, "bbox", "problem.domain");
    ls.bbox.lo = as_vector(require(bbox, "lo", "problem.domain.bbox"), spec.d, "problem.domain.bbox.lo");
    ls.bbox.hi = as_vector(require(bbox, "hi", "problem.domain.bbox"), spec.d, "problem.domain.bbox.hi");
    spec.domain = std::move(ls);
  }
  if (doc.contains("source_f")) spec.source_f = parse_scalar(doc.at("source_f"), spec.d, "problem.source_f");
  if (doc.contains("boundary_g"))
    spec.boundary_g = parse_scalar(doc.at("boundary_g"), spec.d, "problem.boundary_g");
  if (doc.contains("growth")) {
    const auto& g = doc.at("growth");
    spec.growth = Growth{as_number(require(g, "K", "problem.growth"), "problem.growth.K"),
                         as_number(require(g, "kappa", "problem.growth"), "problem.growth.kappa")};
  }
  spec.finalize();
  return spec;
}

ProblemSpec load_problem(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open problem file " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw SpecError(path.string() + ": " + e.what());
  }
  if (doc.contains("problem") && doc.at("problem").is_object()) return problem_from_json(doc.at("problem"));
  return problem_from_json(doc);
}

json to_json(const ValidationReport& report) {
  json checks = json::array();
  for (const auto& c : report.checks) {
    json entry{{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}, {"measured", c.measured}};
    if (!c.witness_x.empty()) entry["witness"] = {{"x", c.witness_x}, {"regime", c.witness_regime}};
    checks.push_back(std::move(entry));
  }
  return json{{"passed", report.passed()}, {"checks", std::move(checks)}};
}

}  // namespace homog
