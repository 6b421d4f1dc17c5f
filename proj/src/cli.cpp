#include "keyforge/cli.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "keyforge/asymptotic.hpp"
#include "keyforge/decoy.hpp"
#include "keyforge/finitekey.hpp"
#include "keyforge/protocol.hpp"

namespace keyforge::cli {

namespace {

using njson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// result rows

struct Row {
  std::optional<double> parameter;
  std::string method;
  std::optional<double> certified;  // present only with a validated certificate
  double raw = 0.0;
  double clamped = 0.0;
  double residual = 0.0;
  long iterations = 0;
  double runtime = 0.0;
  std::string status = "ok";
};

constexpr const char* kHeader =
    "parameter,method,certified_lower_bound,raw_rate,clamped_rate,"
    "certificate_residual,iterations,runtime_seconds,status";

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void emit_csv(const std::vector<Row>& rows, std::ostream& out) {
  out << kHeader << "\n";
  for (const Row& r : rows) {
    out << (r.parameter ? fmt("%.10g", *r.parameter) : "") << ","
        << r.method << ","
        << (r.certified ? fmt("%.10g", *r.certified) : "") << ","
        << fmt("%.10g", r.raw) << "," << fmt("%.10g", r.clamped) << ","
        << fmt("%.3e", r.residual) << "," << r.iterations << ","
        << fmt("%.3f", r.runtime) << "," << r.status << "\n";
  }
}

void emit_json(const std::vector<Row>& rows, std::ostream& out) {
  njson arr = njson::array();
  for (const Row& r : rows) {
    njson o;
    o["parameter"] = r.parameter ? njson(*r.parameter) : njson(nullptr);
    o["method"] = r.method;
    o["certified_lower_bound"] =
        r.certified ? njson(*r.certified) : njson(nullptr);
    o["raw_rate"] = r.raw;
    o["clamped_rate"] = r.clamped;
    o["certificate_residual"] = r.residual;
    o["iterations"] = r.iterations;
    o["runtime_seconds"] = r.runtime;
    o["status"] = r.status;
    arr.push_back(std::move(o));
  }
  out << arr.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// validation plumbing: every check appends "<path>: <message>" and walkers
// keep going, so one run reports every violation at once.

struct Vctx {
  std::vector<std::string> errors;
  void err(const std::string& path, const std::string& msg) {
    errors.push_back(path + ": " + msg);
  }
};

bool expect_object(const njson& j, const std::string& path,
                   std::initializer_list<const char*> allowed, Vctx& v) {
  if (!j.is_object()) {
    v.err(path, "expected an object");
    return false;
  }
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) v.err(path + "." + item.key(), "unknown key");
  }
  return true;
}

std::optional<double> get_number(const njson& j, const std::string& path,
                                 const char* key, Vctx& v,
                                 std::optional<double> fallback = {}) {
  if (!j.contains(key)) {
    if (!fallback) v.err(path + "." + key, "required number is missing");
    return fallback;
  }
  if (!j[key].is_number()) {
    v.err(path + "." + key, "expected a number");
    return {};
  }
  return j[key].get<double>();
}

std::optional<std::int64_t> get_count(const njson& j, const std::string& path,
                                      const char* key, Vctx& v,
                                      std::optional<std::int64_t> fallback = {}) {
  const std::optional<double> d =
      get_number(j, path, key, v,
                 fallback ? std::optional<double>(double(*fallback))
                          : std::nullopt);
  if (!d) return {};
  if (*d < 1.0 || *d > 9.2e18 || std::fabs(*d - std::round(*d)) > 1e-6) {
    v.err(path + "." + key, "expected a positive integer");
    return {};
  }
  return static_cast<std::int64_t>(std::llround(*d));
}

std::optional<std::string> get_string(const njson& j, const std::string& path,
                                      const char* key, Vctx& v,
                                      const char* fallback = nullptr) {
  if (!j.contains(key)) {
    if (!fallback) {
      v.err(path + "." + key, "required string is missing");
      return {};
    }
    return std::string(fallback);
  }
  if (!j[key].is_string()) {
    v.err(path + "." + key, "expected a string");
    return {};
  }
  return j[key].get<std::string>();
}

// [re, im] pair -> complex entry.
std::optional<cx> parse_entry(const njson& j, const std::string& path,
                              Vctx& v) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() ||
      !j[1].is_number()) {
    v.err(path, "expected a complex entry as [re, im]");
    return {};
  }
  return cx(j[0].get<double>(), j[1].get<double>());
}

// Row-major nested arrays of [re, im] pairs. dim < 0 accepts any square size.
std::optional<Mat> parse_matrix(const njson& j, const std::string& path,
                                int dim, Vctx& v) {
  if (!j.is_array() || j.empty()) {
    v.err(path, "expected a matrix as nested arrays of [re, im] pairs");
    return {};
  }
  const int rows = static_cast<int>(j.size());
  const int want = dim < 0 ? rows : dim;
  if (rows != want) {
    v.err(path, "expected " + std::to_string(want) + " rows, got " +
                    std::to_string(rows));
    return {};
  }
  Mat m = Mat::zeros(want, want);
  bool ok = true;
  for (int r = 0; r < want; ++r) {
    const njson& row = j[r];
    if (!row.is_array() || static_cast<int>(row.size()) != want) {
      v.err(path + "[" + std::to_string(r) + "]",
            "expected a row of " + std::to_string(want) + " entries");
      ok = false;
      continue;
    }
    for (int c = 0; c < want; ++c) {
      const auto e = parse_entry(
          row[c], path + "[" + std::to_string(r) + "][" + std::to_string(c) + "]",
          v);
      if (!e) {
        ok = false;
        continue;
      }
      m(r, c) = *e;
    }
  }
  if (!ok) return {};
  return m;
}

std::optional<Mat> parse_column(const njson& j, const std::string& path,
                                int dim, Vctx& v) {
  if (!j.is_array() || static_cast<int>(j.size()) != dim) {
    v.err(path, "expected a vector of " + std::to_string(dim) +
                    " [re, im] pairs");
    return {};
  }
  Mat m = Mat::zeros(dim, 1);
  for (int r = 0; r < dim; ++r) {
    const auto e = parse_entry(j[r], path + "[" + std::to_string(r) + "]", v);
    if (!e) return {};
    m(r, 0) = *e;
  }
  return m;
}

// ---------------------------------------------------------------------------
// config sections

struct MethodSpec {
  std::string name;  // frank_wolfe | gauss_radau | min_entropy
  double eps_stop = 1e-6;
  int max_iter = 300;
  double eps_pert = 1e-10;
  int m = 8;
  int x_star = 0;
};

struct FiniteSpec {
  std::string framework;  // eur | postselection | eat
  std::int64_t n = 0, m_test = 0;
  finitekey::SecurityParams sec;
  int d = 4;
};

struct Config {
  std::optional<protocol::Scenario> scenario;
  std::optional<double> scenario_qz, scenario_qx;  // bb84 only
  std::vector<MethodSpec> methods;
  std::optional<FiniteSpec> finite;
  std::optional<decoy::DecoyModel> decoy_model;
  double decoy_qz = -1.0;  // <0: derive from the signal observations
  double decoy_fec = 1.0;
  // sweep
  std::string sweep_parameter;
  double sweep_from = 0.0, sweep_to = 0.0;
  int sweep_steps = 0;
};

void validate_povms(const njson& j, const std::string& path, int dim,
                    std::vector<protocol::Povm>& out, Vctx& v) {
  if (!j.is_array() || j.empty()) {
    v.err(path, "expected an array of POVMs (one per basis)");
    return;
  }
  for (size_t b = 0; b < j.size(); ++b) {
    const std::string pb = path + "[" + std::to_string(b) + "]";
    const njson& povm = j[b];
    if (!povm.is_array() || povm.empty()) {
      v.err(pb, "expected an array of POVM elements");
      continue;
    }
    protocol::Povm p;
    p.basis = static_cast<int>(b);
    bool ok = true;
    for (size_t e = 0; e < povm.size(); ++e) {
      const std::string pe = pb + "[" + std::to_string(e) + "]";
      const auto m = parse_matrix(povm[e], pe, dim, v);
      if (!m) {
        ok = false;
        continue;
      }
      if (!is_hermitian(*m, 1e-9)) {
        v.err(pe, "POVM element is not Hermitian");
        ok = false;
        continue;
      }
      p.elements.push_back(hermitize(*m));
    }
    if (!ok) continue;
    try {
      protocol::check_povm(p, dim);
    } catch (const Error& err) {
      v.err(pb, err.what());
      continue;
    }
    out.push_back(std::move(p));
  }
}

void build_custom_scenario(const njson& j, const std::string& path, Config& c,
                           Vctx& v) {
  protocol::Scenario sc;
  const auto da = get_count(j, path, "dim_a", v);
  const auto db = get_count(j, path, "dim_b", v);
  if (!da || !db) return;
  sc.d_a = static_cast<int>(*da);
  sc.d_b = static_cast<int>(*db);

  if (!j.contains("povms_a") || !j.contains("povms_b")) {
    if (!j.contains("povms_a")) v.err(path + ".povms_a", "required");
    if (!j.contains("povms_b")) v.err(path + ".povms_b", "required");
    return;
  }
  validate_povms(j["povms_a"], path + ".povms_a", sc.d_a, sc.povms_a, v);
  validate_povms(j["povms_b"], path + ".povms_b", sc.d_b, sc.povms_b, v);
  if (sc.povms_a.empty() || sc.povms_b.empty()) return;

  for (const char* key : {"probs_a", "probs_b"}) {
    if (!j.contains(key)) continue;
    auto& dst = key[6] == 'a' ? sc.probs_a : sc.probs_b;
    const njson& arr = j[key];
    if (!arr.is_array()) {
      v.err(path + "." + key, "expected an array of probabilities");
      continue;
    }
    for (const auto& x : arr) {
      if (!x.is_number()) {
        v.err(path + "." + key, "expected numbers");
        dst.clear();
        break;
      }
      dst.push_back(x.get<double>());
    }
  }

  // imperfections act on Bob's POVMs before anything downstream sees them
  if (j.contains("imperfections")) {
    const njson& imp = j["imperfections"];
    const std::string pi = path + ".imperfections";
    if (expect_object(imp, pi, {"noclick", "efficiency", "fidelity"}, v)) {
      if (imp.contains("efficiency")) {
        const njson& eff = imp["efficiency"];
        if (!eff.is_array() || eff.size() != sc.povms_b.size()) {
          v.err(pi + ".efficiency",
                "expected one array of per-outcome efficiencies per Bob basis");
        } else {
          for (size_t b = 0; b < sc.povms_b.size(); ++b) {
            std::vector<double> eta;
            for (const auto& x : eff[b]) {
              if (x.is_number()) eta.push_back(x.get<double>());
            }
            try {
              sc.povms_b[b] = protocol::apply_efficiency(sc.povms_b[b], eta);
            } catch (const Error& e) {
              v.err(pi + ".efficiency[" + std::to_string(b) + "]", e.what());
            }
          }
          sc.d_b += 1;
        }
      } else if (imp.contains("noclick") && imp["noclick"].is_boolean() &&
                 imp["noclick"].get<bool>()) {
        for (auto& p : sc.povms_b) p = protocol::extend_noclick(p);
        sc.d_b += 1;
      }
      // fidelity handled below, once dimensions are final
    }
  }

  if (j.contains("kept_pairs")) {
    const njson& kp = j["kept_pairs"];
    if (!kp.is_array()) {
      v.err(path + ".kept_pairs", "expected an array of [x, y] pairs");
    } else {
      for (const auto& pr : kp) {
        if (!pr.is_array() || pr.size() != 2 || !pr[0].is_number_integer() ||
            !pr[1].is_number_integer()) {
          v.err(path + ".kept_pairs", "expected [x, y] integer pairs");
          break;
        }
        sc.kept_pairs.emplace_back(pr[0].get<int>(), pr[1].get<int>());
      }
    }
  } else {
    const int nb = static_cast<int>(
        std::min(sc.povms_a.size(), sc.povms_b.size()));
    for (int x = 0; x < nb; ++x) sc.kept_pairs.emplace_back(x, x);
  }

  int max_out = 0;
  for (const auto& p : sc.povms_a)
    max_out = std::max(max_out, static_cast<int>(p.elements.size()));
  if (j.contains("key_map")) {
    const njson& km = j["key_map"];
    if (!km.is_object()) {
      v.err(path + ".key_map", "expected an object {\"x,a,y\": symbol}");
    } else {
      for (const auto& item : km.items()) {
        int x, a, y;
        if (std::sscanf(item.key().c_str(), "%d,%d,%d", &x, &a, &y) != 3 ||
            !item.value().is_number_integer()) {
          v.err(path + ".key_map." + item.key(),
                "expected \"x,a,y\": integer symbol");
          continue;
        }
        sc.key_map[{x, a, y}] = item.value().get<int>();
      }
    }
  } else {
    for (const auto& [x, y] : sc.kept_pairs)
      for (int a = 0; a < max_out; ++a) sc.key_map[{x, a, y}] = a;
  }
  int max_sym = 0;
  for (const auto& [k, s] : sc.key_map) max_sym = std::max(max_sym, s);
  sc.key_dim = max_sym + 1;
  if (j.contains("key_dim")) {
    if (const auto kd = get_count(j, path, "key_dim", v))
      sc.key_dim = static_cast<int>(*kd);
  }

  if (!j.contains("constraints")) {
    v.err(path + ".constraints", "required for a custom scenario");
    return;
  }
  const njson& cons = j["constraints"];
  if (!cons.is_array()) {
    v.err(path + ".constraints", "expected an array");
    return;
  }
  const int d = sc.d_a * sc.d_b;
  bool has_identity = false;
  for (size_t i = 0; i < cons.size(); ++i) {
    const std::string pc = path + ".constraints[" + std::to_string(i) + "]";
    const njson& cj = cons[i];
    if (!expect_object(cj, pc, {"op", "value", "kind", "halfwidth"}, v))
      continue;
    if (!cj.contains("op")) {
      v.err(pc + ".op", "required matrix is missing");
      continue;
    }
    const auto op = parse_matrix(cj["op"], pc + ".op", d, v);
    const auto val = get_number(cj, pc, "value", v);
    if (!op || !val) continue;
    if (!is_hermitian(*op, 1e-9)) {
      v.err(pc + ".op", "constraint operator is not Hermitian");
      continue;
    }
    protocol::ObservableConstraint oc;
    oc.op = hermitize(*op);
    oc.value = *val;
    const auto kind = get_string(cj, pc, "kind", v, "equality");
    if (kind && *kind == "interval") {
      oc.kind = protocol::ConstraintKind::Interval;
      if (const auto hw = get_number(cj, pc, "halfwidth", v))
        oc.halfwidth = *hw;
    } else if (kind && *kind != "equality") {
      v.err(pc + ".kind", "expected \"equality\" or \"interval\"");
      continue;
    }
    sc.constraints.push_back(std::move(oc));
    double id_dev = 0.0;
    for (int r = 0; r < d; ++r)
      for (int cix = 0; cix < d; ++cix)
        id_dev = std::max(id_dev, std::abs(sc.constraints.back().op(r, cix) -
                                           (r == cix ? cx(1, 0) : cx(0, 0))));
    if (id_dev < 1e-12 && std::fabs(*val - 1.0) < 1e-12) has_identity = true;
  }
  if (!has_identity) {
    protocol::ObservableConstraint id;
    id.op = Mat::identity(d);
    id.value = 1.0;
    sc.constraints.insert(sc.constraints.begin(), std::move(id));
  }

  if (j.contains("imperfections") && j["imperfections"].contains("fidelity")) {
    const njson& fid = j["imperfections"]["fidelity"];
    const std::string pf = path + ".imperfections.fidelity";
    if (expect_object(fid, pf, {"psi", "eps"}, v)) {
      const auto eps = get_number(fid, pf, "eps", v);
      if (fid.contains("psi") && eps) {
        if (const auto psi = parse_column(fid["psi"], pf + ".psi", d, v))
          sc.constraints.push_back(protocol::fidelity_constraint(*psi, *eps));
      } else if (!fid.contains("psi")) {
        v.err(pf + ".psi", "required state vector is missing");
      }
    }
  }

  try {
    protocol::check_scenario(sc);
  } catch (const Error& e) {
    v.err(path, e.what());
    return;
  }
  c.scenario = std::move(sc);
}

void build_scenario(const njson& j, Config& c, Vctx& v) {
  const std::string path = "scenario";
  if (!expect_object(j, path,
                     {"protocol", "qz", "qx", "granularity", "dim_a", "dim_b",
                      "povms_a", "povms_b", "probs_a", "probs_b", "kept_pairs",
                      "key_map", "key_dim", "constraints", "imperfections"},
                     v))
    return;
  const auto proto = get_string(j, path, "protocol", v);
  if (!proto) return;

  if (*proto == "bb84") {
    for (const char* k : {"dim_a", "dim_b", "povms_a", "povms_b", "probs_a",
                          "probs_b", "kept_pairs", "key_map", "key_dim",
                          "constraints"}) {
      if (j.contains(k)) v.err(path + "." + k, "not a bb84 key");
    }
    const auto qz = get_number(j, path, "qz", v);
    if (!qz) return;
    const auto qx = get_number(j, path, "qx", v, *qz);
    const auto gran = get_string(j, path, "granularity", v, "fine");
    if (gran && *gran != "fine" && *gran != "coarse") {
      v.err(path + ".granularity", "expected \"fine\" or \"coarse\"");
      return;
    }

    std::optional<double> efficiency;
    std::optional<std::pair<Mat, double>> fidelity;
    if (j.contains("imperfections")) {
      const njson& imp = j["imperfections"];
      const std::string pi = path + ".imperfections";
      if (!expect_object(imp, pi, {"noclick", "efficiency", "fidelity"}, v))
        return;
      if (imp.contains("noclick")) {
        v.err(pi + ".noclick",
              "bb84 has no free no-click slot; use efficiency, or a custom "
              "scenario");
      }
      if (imp.contains("efficiency")) {
        if (!imp["efficiency"].is_number()) {
          v.err(pi + ".efficiency",
                "bb84 efficiency is a single number (uniform detector "
                "efficiency)");
        } else {
          efficiency = imp["efficiency"].get<double>();
          if (j.contains("granularity"))
            v.err(path + ".granularity",
                  "fixed by the lossy bb84 construction; remove it");
          if (qx && std::fabs(*qx - *qz) > 1e-12)
            v.err(path + ".qx", "lossy bb84 uses a single error rate");
        }
      }
      if (imp.contains("fidelity")) {
        const njson& fid = imp["fidelity"];
        const std::string pf = pi + ".fidelity";
        if (expect_object(fid, pf, {"psi", "eps"}, v)) {
          const auto eps = get_number(fid, pf, "eps", v);
          const int d = efficiency ? 6 : 4;
          if (fid.contains("psi") && eps) {
            if (const auto psi = parse_column(fid["psi"], pf + ".psi", d, v))
              fidelity = {*psi, *eps};
          } else if (!fid.contains("psi")) {
            v.err(pf + ".psi", "required state vector is missing");
          }
        }
      }
    }
    if (!v.errors.empty()) return;

    try {
      protocol::Scenario sc =
          efficiency
              ? protocol::bb84_lossy_scenario(*qz, *efficiency)
              : protocol::bb84_scenario(*qz, *qx,
                                        *gran == "fine"
                                            ? protocol::Granularity::Fine
                                            : protocol::Granularity::Coarse);
      if (fidelity)
        sc.constraints.push_back(
            protocol::fidelity_constraint(fidelity->first, fidelity->second));
      c.scenario = std::move(sc);
      c.scenario_qz = *qz;
      c.scenario_qx = *qx;
    } catch (const Error& e) {
      v.err(path, e.what());
    }
    return;
  }
  if (*proto == "custom") {
    for (const char* k : {"qz", "qx", "granularity"}) {
      if (j.contains(k)) v.err(path + "." + k, "not a custom-scenario key");
    }
    if (v.errors.empty()) build_custom_scenario(j, path, c, v);
    return;
  }
  v.err(path + ".protocol", "expected \"bb84\" or \"custom\"");
}

void build_methods(const njson& j, Config& c, Vctx& v) {
  const std::string path = "method";
  if (!expect_object(j, path,
                     {"name", "eps_stop", "max_iter", "eps_pert", "m",
                      "x_star"},
                     v))
    return;
  std::vector<std::string> names;
  if (!j.contains("name")) {
    v.err(path + ".name", "required method name is missing");
    return;
  }
  if (j["name"].is_string()) {
    names.push_back(j["name"].get<std::string>());
  } else if (j["name"].is_array()) {
    for (const auto& n : j["name"]) {
      if (!n.is_string()) {
        v.err(path + ".name", "expected method names as strings");
        return;
      }
      names.push_back(n.get<std::string>());
    }
  } else {
    v.err(path + ".name", "expected a string or an array of strings");
    return;
  }
  MethodSpec base;
  if (const auto x = get_number(j, path, "eps_stop", v, base.eps_stop))
    base.eps_stop = *x;
  if (const auto x = get_count(j, path, "max_iter", v, base.max_iter))
    base.max_iter = static_cast<int>(*x);
  if (const auto x = get_number(j, path, "eps_pert", v, base.eps_pert))
    base.eps_pert = *x;
  if (const auto x = get_count(j, path, "m", v, base.m))
    base.m = static_cast<int>(*x);
  if (j.contains("x_star")) {
    if (const auto x = get_count(j, path, "x_star", v))
      base.x_star = static_cast<int>(*x);
  } else {
    base.x_star = 0;
  }
  for (const std::string& n : names) {
    if (n != "frank_wolfe" && n != "gauss_radau" && n != "min_entropy") {
      v.err(path + ".name",
            "unknown method \"" + n +
                "\" (expected frank_wolfe, gauss_radau, or min_entropy)");
      continue;
    }
    MethodSpec ms = base;
    ms.name = n;
    c.methods.push_back(std::move(ms));
  }
}

void build_finite(const njson& j, Config& c, Vctx& v) {
  const std::string path = "finite";
  if (!expect_object(j, path,
                     {"framework", "n", "m_test", "eps_pa", "eps_ir",
                      "eps_smooth", "d"},
                     v))
    return;
  FiniteSpec f;
  const auto fw = get_string(j, path, "framework", v);
  if (!fw) return;
  if (*fw != "eur" && *fw != "postselection" && *fw != "eat") {
    v.err(path + ".framework",
          "expected \"eur\", \"postselection\", or \"eat\"");
    return;
  }
  f.framework = *fw;
  const auto n = get_count(j, path, "n", v);
  const auto m = get_count(j, path, "m_test", v);
  if (!n || !m) return;
  f.n = *n;
  f.m_test = *m;
  if (const auto x = get_number(j, path, "eps_pa", v, f.sec.eps_pa))
    f.sec.eps_pa = *x;
  if (const auto x = get_number(j, path, "eps_ir", v, f.sec.eps_ir))
    f.sec.eps_ir = *x;
  if (const auto x = get_number(j, path, "eps_smooth", v, f.sec.eps_smooth))
    f.sec.eps_smooth = *x;
  if (const auto x = get_count(j, path, "d", v, std::int64_t{4}))
    f.d = static_cast<int>(*x);
  c.finite = std::move(f);
}

void build_decoy(const njson& j, Config& c, Vctx& v) {
  const std::string path = "decoy";
  if (!expect_object(j, path,
                     {"intensities", "gains", "error_gains", "cutoff", "q_z",
                      "f_ec"},
                     v))
    return;
  decoy::DecoyModel m;
  for (const char* key : {"intensities", "gains", "error_gains"}) {
    if (!j.contains(key)) {
      v.err(path + "." + key, "required array is missing");
      return;
    }
    const njson& arr = j[key];
    if (!arr.is_array() || arr.empty()) {
      v.err(path + "." + key, "expected a nonempty array of numbers");
      return;
    }
    std::vector<double>& dst = key[0] == 'i'   ? m.intensities
                               : key[0] == 'g' ? m.gains
                                               : m.error_gains;
    for (size_t i = 0; i < arr.size(); ++i) {
      if (!arr[i].is_number()) {
        v.err(path + "." + key + "[" + std::to_string(i) + "]",
              "expected a number");
        return;
      }
      dst.push_back(arr[i].get<double>());
    }
  }
  if (const auto x = get_count(j, path, "cutoff", v, std::int64_t{10}))
    m.cutoff = static_cast<int>(*x);
  if (const auto x = get_number(j, path, "q_z", v, -1.0)) c.decoy_qz = *x;
  if (const auto x = get_number(j, path, "f_ec", v, 1.0)) c.decoy_fec = *x;
  try {
    decoy::check_model(m);
  } catch (const Error& e) {
    v.err(path, e.what());
    return;
  }
  c.decoy_model = std::move(m);
}

void build_sweep(const njson& j, Config& c, Vctx& v) {
  const std::string path = "sweep";
  if (!expect_object(j, path, {"parameter", "from", "to", "steps"}, v)) return;
  const auto par = get_string(j, path, "parameter", v);
  const auto from = get_number(j, path, "from", v);
  const auto to = get_number(j, path, "to", v);
  const auto steps = get_count(j, path, "steps", v);
  if (!par || !from || !to || !steps) return;
  c.sweep_parameter = *par;
  c.sweep_from = *from;
  c.sweep_to = *to;
  c.sweep_steps = static_cast<int>(*steps);
}

// ---------------------------------------------------------------------------
// computation -> rows

double env_or(double explicit_tol) {
  if (explicit_tol > 0.0) return explicit_tol;
  if (const char* s = std::getenv("KEYFORGE_SOLVER_TOL")) {
    char* end = nullptr;
    const double v = std::strtod(s, &end);
    if (end != s && v > 0.0) return v;
  }
  return 0.0;
}

sdp::SolveOptions solver_options(double tol) {
  sdp::SolveOptions so;
  if (tol > 0.0) {
    so.gap_tol = tol;
    so.residual_tol = tol / 10.0;
  }
  return so;
}

Row error_row(const std::string& method, const std::exception& e) {
  Row r;
  r.method = method;
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    r.status = err->code();
  } else {
    r.status = "InternalError";
  }
  return r;
}

Row from_report(const asymptotic::KeyRateReport& rep,
                const std::string& method) {
  Row r;
  r.method = method;
  r.raw = rep.raw_rate;
  r.clamped = rep.clamped_rate;
  r.residual = rep.certificate_residual;
  r.iterations = rep.iterations;
  r.runtime = rep.runtime_seconds;
  if (rep.certificate_residual <= 1e-7) r.certified = rep.clamped_rate;
  return r;
}

std::vector<Row> run_asymptotic(const Config& c, double tol) {
  std::vector<Row> rows;
  const protocol::Scenario& sc = *c.scenario;
  const sdp::SolveOptions so = solver_options(tol);

  double ec = 0.0;
  try {
    const Mat rho_ref = sc.fixed_rho
                            ? *sc.fixed_rho
                            : asymptotic::find_feasible_state(sc, so);
    ec = asymptotic::error_correction_term(sc, rho_ref);
  } catch (const std::exception& e) {
    for (const auto& m : c.methods) rows.push_back(error_row(m.name, e));
    return rows;
  }

  for (const MethodSpec& m : c.methods) {
    try {
      if (m.name == "frank_wolfe") {
        asymptotic::FrankWolfeOptions fo;
        fo.epsilon_stop = m.eps_stop;
        fo.max_iterations = m.max_iter;
        fo.epsilon_pert = m.eps_pert;
        fo.sdp = so;
        rows.push_back(
            from_report(asymptotic::frank_wolfe_report(sc, ec, fo), m.name));
      } else if (m.name == "gauss_radau") {
        rows.push_back(from_report(
            asymptotic::gauss_radau_report(sc, m.x_star, m.m, ec, so),
            m.name));
      } else {  // min_entropy
        const auto t0 = std::chrono::steady_clock::now();
        const double hmin = asymptotic::hmin_bound(
            sc, sc.povms_a.at(static_cast<size_t>(m.x_star)), std::nullopt,
            so);
        const asymptotic::DwRate r = asymptotic::devetak_winter_rate(hmin, ec);
        Row row;
        row.method = m.name;
        row.raw = r.raw;
        row.clamped = r.clamped;
        row.certified = r.clamped;
        row.runtime = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        rows.push_back(std::move(row));
      }
    } catch (const std::exception& e) {
      rows.push_back(error_row(m.name, e));
    }
  }
  return rows;
}

std::vector<Row> run_finite(const Config& c) {
  const FiniteSpec& f = *c.finite;
  Row row;
  row.method = f.framework;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    finitekey::FiniteRunSpec run;
    run.n = f.n;
    run.m = f.m_test;
    run.qx_test = *c.scenario_qx;
    run.qz_test = *c.scenario_qz;
    run.d = f.d;
    const finitekey::EurResult base =
        finitekey::eur_bb84_key_length(run, f.sec);
    if (f.framework == "eur") {
      row.raw = base.raw / static_cast<double>(f.n);
      row.clamped = base.rate;
      row.certified = base.rate;
    } else if (f.framework == "postselection") {
      const finitekey::Lifted lf = finitekey::postselection_lift(
          base.raw, f.sec.eps_sec(), f.n, f.d);
      row.raw = lf.bits / static_cast<double>(f.n);
      row.clamped = std::max(0.0, row.raw);
      row.certified = row.clamped;
    } else {  // eat: EUR single-round threshold, accumulation-style first
              // order term, same reconciliation leak and hashing cost
      const double dev = finitekey::serfling_deviation(f.n + f.m_test,
                                                       f.m_test,
                                                       f.sec.eps_smooth);
      const double qx_up = std::min(run.qx_test + dev, 0.5);
      const double h = 1.0 - finitekey::binary_entropy(qx_up);
      const double ent = finitekey::eat_rate(f.n, h, 2, 1.0, f.sec.eps_smooth,
                                             1.0);
      const double leak = finitekey::leak_ir_bound(
          f.n, run.qz_test, f.sec.eps_ir, f.sec.eps_ir,
          finitekey::HmaxModel::Aep);
      const finitekey::KeyLength kl =
          finitekey::key_length_leftover(ent, leak, f.sec.eps_pa);
      row.raw = kl.raw / static_cast<double>(f.n);
      row.clamped = static_cast<double>(kl.bits) / static_cast<double>(f.n);
      row.certified = row.clamped;
    }
  } catch (const std::exception& e) {
    Row err = error_row(f.framework, e);
    err.runtime = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    return {err};
  }
  row.runtime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return {row};
}

std::vector<Row> run_decoy(const Config& c) {
  const decoy::DecoyModel& m = *c.decoy_model;
  Row row;
  row.method = "decoy";
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const decoy::DecoyBounds b = decoy::decoy_lp_bounds(m);
    const double qz = c.decoy_qz >= 0.0
                          ? c.decoy_qz
                          : (m.gains[0] > 0.0
                                 ? std::min(m.error_gains[0] / m.gains[0], 0.5)
                                 : 0.0);
    const double q1 = std::min(b.e1_upper, 0.5);
    const double rate = decoy::decoy_asymptotic_rate(m, q1, qz, c.decoy_fec);
    row.raw = rate;
    row.clamped = std::max(0.0, rate);
    row.residual = std::max(b.y1_gap, b.b1_gap);
    if (row.residual <= 1e-7) row.certified = row.clamped;
  } catch (const std::exception& e) {
    Row err = error_row("decoy", e);
    err.runtime = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    return {err};
  }
  row.runtime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return {row};
}

// ---------------------------------------------------------------------------
// sweep

// Resolves a dotted path with optional [i] suffixes ("scenario.qz",
// "decoy.gains[0]") to a numeric leaf of the document.
njson* resolve_path(njson& root, const std::string& path, std::string* err) {
  njson* cur = &root;
  size_t pos = 0;
  while (pos < path.size()) {
    size_t dot = path.find('.', pos);
    std::string seg = path.substr(pos, dot == std::string::npos
                                           ? std::string::npos
                                           : dot - pos);
    pos = dot == std::string::npos ? path.size() : dot + 1;
    std::vector<int> idx;
    size_t br = seg.find('[');
    std::string key = seg.substr(0, br);
    while (br != std::string::npos) {
      const size_t close = seg.find(']', br);
      if (close == std::string::npos) {
        *err = "malformed index in \"" + seg + "\"";
        return nullptr;
      }
      idx.push_back(std::atoi(seg.substr(br + 1, close - br - 1).c_str()));
      br = seg.find('[', close);
    }
    if (!cur->is_object() || !cur->contains(key)) {
      *err = "no such key \"" + key + "\"";
      return nullptr;
    }
    cur = &(*cur)[key];
    for (int i : idx) {
      if (!cur->is_array() || i < 0 || static_cast<size_t>(i) >= cur->size()) {
        *err = "index " + std::to_string(i) + " out of range";
        return nullptr;
      }
      cur = &(*cur)[static_cast<size_t>(i)];
    }
  }
  if (!cur->is_number()) {
    *err = "path does not end at a number";
    return nullptr;
  }
  return cur;
}

}  // namespace

int run_command(const std::string& verb, const std::string& config_text,
                std::ostream& out, std::ostream& diag,
                const RunOptions& opts) {
  if (verb != "asymptotic" && verb != "finite" && verb != "decoy" &&
      verb != "sweep") {
    diag << "unknown verb: " << verb << "\n";
    return 2;
  }

  njson doc;
  try {
    doc = njson::parse(config_text);
  } catch (const std::exception& e) {
    diag << "config: " << e.what() << "\n";
    return 2;
  }

  Vctx v;
  if (!expect_object(doc, "config",
                     {"scenario", "method", "finite", "decoy", "sweep"}, v)) {
    for (const auto& e : v.errors) diag << e << "\n";
    return 2;
  }

  // which sections this verb needs
  const bool needs_scenario = verb == "asymptotic" || verb == "finite";
  const bool needs_method = verb == "asymptotic";
  const bool needs_finite = verb == "finite";
  const bool needs_decoy = verb == "decoy";
  if (verb == "sweep" && !doc.contains("sweep"))
    v.err("sweep", "required section is missing");
  const bool sweep_finite = doc.contains("finite");
  const bool sweep_method = !sweep_finite && doc.contains("method");
  const bool sweep_decoy =
      !sweep_finite && !sweep_method && doc.contains("decoy");
  if (verb == "sweep" && !sweep_finite && !sweep_method && !sweep_decoy)
    v.err("config", "sweep needs a finite, method, or decoy section to run");

  Config cfg;
  if (doc.contains("scenario")) build_scenario(doc["scenario"], cfg, v);
  if (doc.contains("method")) build_methods(doc["method"], cfg, v);
  if (doc.contains("finite")) build_finite(doc["finite"], cfg, v);
  if (doc.contains("decoy")) build_decoy(doc["decoy"], cfg, v);
  if (doc.contains("sweep")) build_sweep(doc["sweep"], cfg, v);

  if (needs_scenario && !doc.contains("scenario"))
    v.err("scenario", "required section is missing");
  if (needs_method && !doc.contains("method"))
    v.err("method", "required section is missing");
  if (needs_finite && !doc.contains("finite"))
    v.err("finite", "required section is missing");
  if (needs_decoy && !doc.contains("decoy"))
    v.err("decoy", "required section is missing");
  if ((verb == "finite" || (verb == "sweep" && sweep_finite)) &&
      v.errors.empty() && !cfg.scenario_qz)
    v.err("scenario",
          "finite frameworks read their error rates from a bb84 scenario");
  if (verb == "sweep" && (doc.contains("method") || verb == "sweep") &&
      v.errors.empty() && sweep_method && cfg.methods.size() != 1)
    v.err("method", "sweep requires exactly one method");
  if (verb == "sweep" && v.errors.empty()) {
    njson probe = doc;
    std::string perr;
    if (!resolve_path(probe, cfg.sweep_parameter, &perr))
      v.err("sweep.parameter", perr);
  }

  if (!v.errors.empty()) {
    for (const auto& e : v.errors) diag << e << "\n";
    return 2;
  }

  const double tol = env_or(opts.solver_tol);
  std::vector<Row> rows;

  if (verb == "asymptotic") {
    if (cfg.scenario_qz) {
      rows = run_asymptotic(cfg, tol);
      for (Row& r : rows) r.parameter = *cfg.scenario_qz;
    } else {
      rows = run_asymptotic(cfg, tol);
    }
  } else if (verb == "finite") {
    rows = run_finite(cfg);
    for (Row& r : rows) r.parameter = *cfg.scenario_qz;
  } else if (verb == "decoy") {
    rows = run_decoy(cfg);
  } else {  // sweep
    const int steps = cfg.sweep_steps;
    std::vector<std::vector<Row>> slots(static_cast<size_t>(steps));
    std::atomic<int> next{0};
    const int want = opts.jobs > 0
                         ? opts.jobs
                         : static_cast<int>(
                               std::max(1u, std::thread::hardware_concurrency()));
    const int workers = std::max(1, std::min(want, steps));
    std::mutex diag_mu;

    auto work = [&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= steps) return;
        const double value =
            steps == 1 ? cfg.sweep_from
                       : cfg.sweep_from + (cfg.sweep_to - cfg.sweep_from) *
                                              static_cast<double>(i) /
                                              static_cast<double>(steps - 1);
        njson point = doc;
        std::string perr;
        njson* leaf = resolve_path(point, cfg.sweep_parameter, &perr);
        std::vector<Row> rs;
        if (!leaf) {
          Row r;
          r.method = "sweep";
          r.status = "ConfigValidation";
          rs = {r};
        } else {
          *leaf = value;
          Vctx pv;
          Config pc;
          if (point.contains("scenario"))
            build_scenario(point["scenario"], pc, pv);
          if (point.contains("method")) build_methods(point["method"], pc, pv);
          if (point.contains("finite")) build_finite(point["finite"], pc, pv);
          if (point.contains("decoy")) build_decoy(point["decoy"], pc, pv);
          if (!pv.errors.empty()) {
            Row r;
            r.method = sweep_finite   ? "finite"
                       : sweep_method ? cfg.methods[0].name
                                      : "decoy";
            r.status = "ConfigValidation";
            rs = {r};
            if (opts.verbose) {
              std::lock_guard<std::mutex> g(diag_mu);
              for (const auto& e : pv.errors)
                diag << "point " << i << ": " << e << "\n";
            }
          } else if (sweep_finite) {
            rs = run_finite(pc);
          } else if (sweep_method) {
            rs = run_asymptotic(pc, tol);
          } else {
            rs = run_decoy(pc);
          }
        }
        for (Row& r : rs) r.parameter = value;
        slots[static_cast<size_t>(i)] = std::move(rs);
        if (opts.verbose) {
          std::lock_guard<std::mutex> g(diag_mu);
          diag << "point " << i << " done\n";
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    for (auto& rs : slots)
      for (Row& r : rs) rows.push_back(std::move(r));
  }

  if (opts.json)
    emit_json(rows, out);
  else
    emit_csv(rows, out);

  for (const Row& r : rows)
    if (r.status != "ok") return 3;
  return 0;
}

}  // namespace keyforge::cli
