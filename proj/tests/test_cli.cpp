#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "keyforge/cli.hpp"

namespace {

struct Res {
  int code;
  std::string out;
  std::string diag;
};

Res run(const std::string& verb, const std::string& cfg,
        keyforge::cli::RunOptions o = {}) {
  std::ostringstream out, diag;
  const int code = keyforge::cli::run_command(verb, cfg, out, diag, o);
  return {code, out.str(), diag.str()};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string l;
  while (std::getline(is, l)) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string f;
  while (std::getline(is, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

// CSV rows minus the wall-clock column, for determinism comparisons.
std::string mask_runtime(const std::string& csv) {
  std::string out;
  for (const std::string& l : lines(csv)) {
    auto fs = fields(l);
    if (fs.size() == 9) fs[7] = "T";
    for (size_t i = 0; i < fs.size(); ++i)
      out += fs[i] + (i + 1 < fs.size() ? "," : "");
    out += "\n";
  }
  return out;
}

constexpr const char* kHeader =
    "parameter,method,certified_lower_bound,raw_rate,clamped_rate,"
    "certificate_residual,iterations,runtime_seconds,status";

const char* kBb84Fw = R"({
  "scenario": {"protocol": "bb84", "qz": 0.05},
  "method": {"name": "frank_wolfe"}
})";

double h2(double q) {
  if (q <= 0.0 || q >= 1.0) return 0.0;
  return -q * std::log2(q) - (1 - q) * std::log2(1 - q);
}

}  // namespace

TEST_CASE("csv header and bb84 frank-wolfe row") {
  const Res r = run("asymptotic", kBb84Fw);
  CHECK(r.code == 0);
  const auto ls = lines(r.out);
  REQUIRE(ls.size() == 2);
  CHECK(ls[0] == kHeader);
  const auto fs = fields(ls[1]);
  REQUIRE(fs.size() == 9);
  CHECK(fs[0] == "0.05");
  CHECK(fs[1] == "frank_wolfe");
  CHECK(fs[8] == "ok");
  REQUIRE(!fs[2].empty());
  const double bound = std::stod(fs[2]);
  CHECK(bound == doctest::Approx(1.0 - 2.0 * h2(0.05)).epsilon(0).scale(0).epsilon(5e-3));
  CHECK(bound == doctest::Approx(0.4271).epsilon(0).scale(0).epsilon(5e-3));
  CHECK(std::stod(fs[5]) <= 1e-7);
}

TEST_CASE("gauss-radau row tracks frank-wolfe") {
  const char* cfg = R"({
    "scenario": {"protocol": "bb84", "qz": 0.05},
    "method": {"name": ["frank_wolfe", "gauss_radau"], "m": 8}
  })";
  const Res r = run("asymptotic", cfg);
  CHECK(r.code == 0);
  const auto ls = lines(r.out);
  REQUIRE(ls.size() == 3);
  const auto fw = fields(ls[1]);
  const auto gr = fields(ls[2]);
  CHECK(fw[1] == "frank_wolfe");
  CHECK(gr[1] == "gauss_radau");
  CHECK(gr[8] == "ok");
  const double vfw = std::stod(fw[2]);
  const double vgr = std::stod(gr[2]);
  CHECK(std::fabs(vfw - vgr) <= 2e-3);
}

TEST_CASE("min entropy row is certified and below frank-wolfe") {
  const char* cfg = R"({
    "scenario": {"protocol": "bb84", "qz": 0.03},
    "method": {"name": ["frank_wolfe", "min_entropy"]}
  })";
  const Res r = run("asymptotic", cfg);
  CHECK(r.code == 0);
  const auto ls = lines(r.out);
  REQUIRE(ls.size() == 3);
  const auto fw = fields(ls[1]);
  const auto me = fields(ls[2]);
  CHECK(me[1] == "min_entropy");
  CHECK(me[8] == "ok");
  REQUIRE(!me[2].empty());
  CHECK(std::stod(me[2]) <= std::stod(fw[2]) + 1e-4);
}

TEST_CASE("identical configs produce identical rows") {
  const Res a = run("asymptotic", kBb84Fw);
  const Res b = run("asymptotic", kBb84Fw);
  CHECK(a.code == 0);
  CHECK(mask_runtime(a.out) == mask_runtime(b.out));
}

TEST_CASE("json emission mirrors the csv columns") {
  keyforge::cli::RunOptions o;
  o.json = true;
  const Res r = run("asymptotic", kBb84Fw, o);
  CHECK(r.code == 0);
  const auto doc = nlohmann::json::parse(r.out);
  REQUIRE(doc.is_array());
  REQUIRE(doc.size() == 1);
  CHECK(doc[0]["method"] == "frank_wolfe");
  CHECK(doc[0]["parameter"] == doctest::Approx(0.05));
  CHECK(doc[0]["status"] == "ok");
  CHECK(doc[0]["certified_lower_bound"].is_number());
  CHECK(doc[0].size() == 9);
}

TEST_CASE("malformed povm element is reported with its document path") {
  const char* cfg = R"({
    "scenario": {
      "protocol": "custom",
      "dim_a": 2, "dim_b": 2,
      "povms_a": [[
        [[[1,0],[0,0]],[[0,0],[0,0]]],
        [[[0,0],[0,0]],[[1,0],[0,0]]]
      ]],
      "povms_b": [[
        [[[1,0],[0,0]],[[0,0],[0,0]]],
        [[[0,0],[0,0]],[[1,0],[0,0]]]
      ]],
      "constraints": []
    },
    "method": {"name": "frank_wolfe"}
  })";
  // break element [0][1] of Alice's first POVM: non-Hermitian off-diagonals
  std::string bad = cfg;
  const std::string good = "[[[0,0],[0,0]],[[0,0],[1,0]]]";
  // replace the second element of povms_a[0]
  const size_t pos = bad.find("[[[0,0],[0,0]],[[1,0],[0,0]]]");
  REQUIRE(pos != std::string::npos);
  bad.replace(pos, good.size(), "[[[0,0],[1,0]],[[0,0],[1,0]]]");
  const Res r = run("asymptotic", bad);
  CHECK(r.code == 2);
  CHECK(r.diag.find("scenario.povms_a[0][1]") != std::string::npos);
  CHECK(r.diag.find("Hermitian") != std::string::npos);
}

TEST_CASE("unknown keys are rejected at every level") {
  const Res top = run("asymptotic", R"({
    "scenario": {"protocol": "bb84", "qz": 0.05},
    "method": {"name": "frank_wolfe"},
    "surprise": 1
  })");
  CHECK(top.code == 2);
  CHECK(top.diag.find("config.surprise") != std::string::npos);

  const Res nested = run("asymptotic", R"({
    "scenario": {"protocol": "bb84", "qz": 0.05, "qzz": 0.1},
    "method": {"name": "frank_wolfe"}
  })");
  CHECK(nested.code == 2);
  CHECK(nested.diag.find("scenario.qzz") != std::string::npos);
}

TEST_CASE("all violations are listed at once") {
  const Res r = run("asymptotic", R"({
    "scenario": {"protocol": "bb84", "qz": "high", "extra": 1},
    "method": {"name": "warp_drive"}
  })");
  CHECK(r.code == 2);
  CHECK(r.diag.find("scenario.qz") != std::string::npos);
  CHECK(r.diag.find("scenario.extra") != std::string::npos);
  CHECK(r.diag.find("method.name") != std::string::npos);
}

TEST_CASE("unknown verb and malformed json are config errors") {
  CHECK(run("anneal", "{}").code == 2);
  CHECK(run("asymptotic", "{nope").code == 2);
  CHECK(run("asymptotic", "{}").code == 2);
}

TEST_CASE("sweep emits one row per step in parameter order") {
  const char* cfg = R"({
    "scenario": {"protocol": "bb84", "qz": 0.01},
    "finite": {"framework": "eur", "n": 100000000, "m_test": 1000000},
    "sweep": {"parameter": "scenario.qz", "from": 0.0, "to": 0.12, "steps": 25}
  })";
  const Res r = run("sweep", cfg);
  CHECK(r.code == 0);
  const auto ls = lines(r.out);
  REQUIRE(ls.size() == 26);
  double prev_q = -1.0, prev_rate = 2.0;
  for (size_t i = 1; i < ls.size(); ++i) {
    const auto fs = fields(ls[i]);
    REQUIRE(fs.size() == 9);
    const double q = std::stod(fs[0]);
    const double rate = std::stod(fs[4]);
    CHECK(q > prev_q);
    CHECK(rate <= prev_rate + 1e-12);
    CHECK(q == doctest::Approx(0.12 * double(i - 1) / 24.0).epsilon(1e-12));
    prev_q = q;
    prev_rate = rate;
  }
}

TEST_CASE("sweep rejects a parameter that is not in the document") {
  const char* cfg = R"({
    "scenario": {"protocol": "bb84", "qz": 0.01},
    "finite": {"framework": "eur", "n": 1000000, "m_test": 10000},
    "sweep": {"parameter": "scenario.qber", "from": 0.0, "to": 0.1, "steps": 3}
  })";
  const Res r = run("sweep", cfg);
  CHECK(r.code == 2);
  CHECK(r.diag.find("sweep.parameter") != std::string::npos);
}

TEST_CASE("sweep requires exactly one method") {
  const char* cfg = R"({
    "scenario": {"protocol": "bb84", "qz": 0.01},
    "method": {"name": ["frank_wolfe", "gauss_radau"]},
    "sweep": {"parameter": "scenario.qz", "from": 0.0, "to": 0.1, "steps": 3}
  })";
  CHECK(run("sweep", cfg).code == 2);
}

TEST_CASE("too few rounds is a computation failure, not a config error") {
  const char* cfg = R"({
    "scenario": {"protocol": "bb84", "qz": 0.01},
    "finite": {"framework": "eur", "n": 50, "m_test": 10}
  })";
  const Res r = run("finite", cfg);
  CHECK(r.code == 3);
  const auto ls = lines(r.out);
  REQUIRE(ls.size() == 2);
  const auto fs = fields(ls[1]);
  REQUIRE(fs.size() == 9);
  CHECK(fs[8] == "TooFewRounds");
  CHECK(fs[2].empty());
}

TEST_CASE("finite frameworks agree with the library rates") {
  const char* cfg = R"({
    "scenario": {"protocol": "bb84", "qz": 0.01},
    "finite": {"framework": "eur", "n": 100000000, "m_test": 1000000}
  })";
  const Res r = run("finite", cfg);
  CHECK(r.code == 0);
  const auto fs = fields(lines(r.out)[1]);
  CHECK(std::stod(fs[4]) == doctest::Approx(0.96151065).epsilon(1e-6));

  const char* post = R"({
    "scenario": {"protocol": "bb84", "qz": 0.01},
    "finite": {"framework": "postselection", "n": 1000000, "m_test": 10000,
               "d": 4}
  })";
  const Res rp = run("finite", post);
  CHECK(rp.code == 0);
  const auto fp = fields(lines(rp.out)[1]);
  CHECK(fp[1] == "postselection");
  CHECK(std::stod(fp[4]) < std::stod(fields(lines(run("finite", R"({
    "scenario": {"protocol": "bb84", "qz": 0.01},
    "finite": {"framework": "eur", "n": 1000000, "m_test": 10000}
  })").out)[1])[4]));

  const char* eat = R"({
    "scenario": {"protocol": "bb84", "qz": 0.01},
    "finite": {"framework": "eat", "n": 100000000, "m_test": 1000000}
  })";
  const Res re = run("finite", eat);
  CHECK(re.code == 0);
  CHECK(fields(lines(re.out)[1])[1] == "eat");
}

TEST_CASE("decoy verb certifies a single-photon rate") {
  // pure-loss channel at eta = 0.1, intensities 0.5 / 0.1
  auto gain = [](double mu, double eta, double d) {
    return (1.0 - std::exp(-eta * mu)) + d * std::exp(-eta * mu);
  };
  std::ostringstream cfg;
  cfg << R"({"decoy": {"intensities": [0.5, 0.1], "gains": [)"
      << gain(0.5, 0.1, 0) << "," << gain(0.1, 0.1, 0)
      << R"(], "error_gains": [0, 0]}})";
  const Res r = run("decoy", cfg.str());
  CHECK(r.code == 0);
  const auto fs = fields(lines(r.out)[1]);
  REQUIRE(fs.size() == 9);
  CHECK(fs[1] == "decoy");
  CHECK(fs[8] == "ok");
  REQUIRE(!fs[2].empty());
  CHECK(std::stod(fs[2]) > 0.0);
  CHECK(std::stod(fs[5]) <= 1e-7);
}

TEST_CASE("decoy verb with dark observations reports zero rate") {
  const char* cfg = R"({
    "decoy": {"intensities": [0.5, 0.1], "gains": [0, 0],
              "error_gains": [0, 0]}
  })";
  const Res r = run("decoy", cfg);
  CHECK(r.code == 0);
  const auto fs = fields(lines(r.out)[1]);
  CHECK(std::stod(fs[3]) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(std::stod(fs[4]) == 0.0);
}

TEST_CASE("solver tolerance can come from the environment") {
  setenv("KEYFORGE_SOLVER_TOL", "1e-8", 1);
  const Res r = run("asymptotic", kBb84Fw);
  unsetenv("KEYFORGE_SOLVER_TOL");
  CHECK(r.code == 0);
  CHECK(fields(lines(r.out)[1])[8] == "ok");
  // explicit option wins over the environment
  setenv("KEYFORGE_SOLVER_TOL", "not-a-number", 1);
  const Res r2 = run("asymptotic", kBb84Fw);
  unsetenv("KEYFORGE_SOLVER_TOL");
  CHECK(r2.code == 0);
}

TEST_CASE("lossy bb84 flows through the cli") {
  const char* cfg = R"({
    "scenario": {"protocol": "bb84", "qz": 0.02,
                 "imperfections": {"efficiency": 0.9}},
    "method": {"name": "frank_wolfe"}
  })";
  const Res r = run("asymptotic", cfg);
  CHECK(r.code == 0);
  const auto fs = fields(lines(r.out)[1]);
  CHECK(fs[8] == "ok");
  REQUIRE(!fs[2].empty());
  const Res full = run("asymptotic", R"({
    "scenario": {"protocol": "bb84", "qz": 0.02,
                 "imperfections": {"efficiency": 1.0}},
    "method": {"name": "frank_wolfe"}
  })");
  CHECK(std::stod(fs[2]) < std::stod(fields(lines(full.out)[1])[2]));
}

TEST_CASE("binary round trip: flags, files, exit codes") {
#ifdef KEYFORGE_BIN
  const std::string bin = KEYFORGE_BIN;
  const std::string cfg_path = "/tmp/kf_cli_cfg.json";
  const std::string out_path = "/tmp/kf_cli_out.csv";
  {
    std::ofstream f(cfg_path);
    f << kBb84Fw;
  }
  std::remove(out_path.c_str());
  const std::string cmd = bin + " asymptotic --config " + cfg_path +
                          " --out " + out_path + " 2>/dev/null";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  CHECK(WEXITSTATUS(rc) == 0);
  std::ifstream f(out_path);
  REQUIRE(f.good());
  std::string header;
  std::getline(f, header);
  CHECK(header == kHeader);

  const int rc2 =
      std::system((bin + " asymptotic --config /tmp/kf_absent.json 2>/dev/null")
                      .c_str());
  CHECK(WEXITSTATUS(rc2) == 2);
  const int rc3 = std::system((bin + " 2>/dev/null").c_str());
  CHECK(WEXITSTATUS(rc3) != 0);
#endif
}
