#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kstep/models/datasets.hpp"
#include "kstep/serialization.hpp"
#include "kstep_cli/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = kstep::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path workdir(const std::string& name) {
  const fs::path p = fs::path(KSTEP_TEST_WORKDIR) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) { return kstep::read_text_file(p.string()); }

void write(const fs::path& p, const std::string& text) { kstep::write_text_file(p.string(), text); }

}  // namespace

TEST_CASE("tables writes the three csv files and matches the frozen rows") {
  const auto dir = workdir("tables");
  const auto r = cli({"tables", "-o", dir.string()});
  CHECK_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"table1.csv", "table2.csv", "table3.csv", "tables.json", "manifest.json"}) {
    CHECK(fs::exists(dir / f));
  }
  const auto t1 = slurp(dir / "table1.csv");
  CHECK(t1.rfind("model,psi,k,exponent,exponent_num,exponent_den,k_star\n", 0) == 0);
  CHECK(t1.find("cox,1/4,2,25/48,25,48,2") != std::string::npos);
  const auto t3 = slurp(dir / "table3.csv");
  CHECK(t3.find("51/200") != std::string::npos);

  const auto manifest = json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["command"] == "tables");
  CHECK(manifest["matches_expected"] == true);
  CHECK(manifest.contains("started_at"));
  CHECK(manifest.contains("finished_at"));

  const auto again = workdir("tables2");
  REQUIRE(cli({"tables", "-o", again.string()}).code == 0);
  for (const char* f : {"table1.csv", "table2.csv", "table3.csv", "tables.json"}) {
    CHECK(slurp(dir / f) == slurp(again / f));
  }
}

TEST_CASE("tables into an unwritable location is a usage error") {
  const auto dir = workdir("blocked");
  write(dir / "file", "x");
  const auto r = cli({"tables", "-o", (dir / "file" / "sub").string()});
  CHECK(r.code == kstep::cli::kUsage);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("frozen expectations agree with the emitted tables") {
  CHECK(kstep::cli::diff_against_expected(kstep::rates::emit_tables()).empty());
  auto tables = kstep::rates::emit_tables();
  tables[0].blocks[0].rows[0].k_star += 1;
  CHECK_FALSE(kstep::cli::diff_against_expected(tables).empty());
}

TEST_CASE("plan prints k* and the exponents") {
  auto r = cli({"plan", "--regime", "profile", "--psi", "1/4", "--r", "1/3"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("k*=2") != std::string::npos);
  CHECK(r.out.find("25/48") != std::string::npos);

  r = cli({"plan", "--regime", "smooth-fd", "--psi", "1/4", "--g", "151/600"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("k*=8") != std::string::npos);

  r = cli({"plan", "--regime", "profile", "--psi", "1/3", "--r", "1/3", "--n", "10000"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("s_n=0.01") != std::string::npos);

  r = cli({"plan", "--regime", "profile", "--psi", "1/4", "--r", "1/3", "--json"});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["k_star"] == 2);
}

TEST_CASE("plan rejects inputs outside the domain and names the flag") {
  auto r = cli({"plan", "--regime", "profile", "--psi", "3/5", "--r", "1/3"});
  CHECK(r.code == kstep::cli::kUsage);
  CHECK(r.err.find("--psi") != std::string::npos);

  r = cli({"plan", "--regime", "profile", "--psi", "1/4"});
  CHECK(r.code == kstep::cli::kUsage);
  CHECK(r.err.find("--r") != std::string::npos);

  r = cli({"plan", "--regime", "profile", "--psi", "one", "--r", "1/3"});
  CHECK(r.code == kstep::cli::kUsage);

  r = cli({"plan", "--regime", "sideways", "--psi", "1/4", "--r", "1/3"});
  CHECK(r.code == kstep::cli::kUsage);
  CHECK(r.err.find("--regime") != std::string::npos);

  CHECK(cli({"bogus"}).code == kstep::cli::kUsage);
  CHECK(cli({}).code == kstep::cli::kUsage);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("generate writes a dataset that reads back") {
  const auto dir = workdir("generate");
  const auto file = dir / "cem.csv";
  const auto r = cli({"generate", "--model", "cem-normal", "--n", "50", "--theta0", "1,0.5", "--seed", "3", "-o", file.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto d = kstep::models::from_csv(slurp(file));
  CHECK(kstep::models::size_of(d) == 50);
  CHECK(cli({"generate", "--model", "cem-normal", "--n", "50", "--theta0", "1,x"}).code == kstep::cli::kUsage);
  CHECK(cli({"generate", "--model", "nope", "--n", "50", "--theta0", "1"}).code == kstep::cli::kUsage);
}

TEST_CASE("fit on a partial linear dataset zeroes the null coefficients") {
  const auto dir = workdir("fit_plm");
  write(dir / "fit.json", R"({
    "model": "plm",
    "generate": {"n": 400, "theta0": [3, 1.5, 0, 0, 2, 0, 0, 0], "seed": 13},
    "init": {"method": "pilot"},
    "engine": {"regime": "penalized", "psi": "1/2", "k_max": 1},
    "model_params": {"lambda0": 0.1, "tau0": 2.0}
  })");
  const auto r = cli({"fit", "--config", (dir / "fit.json").string(), "-o", (dir / "out.json").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto j = json::parse(slurp(dir / "out.json"));
  const auto last = j["iterates"].back();
  REQUIRE(last.size() == 8);
  for (int idx : {2, 3, 5, 6, 7}) CHECK(last[idx].get<double>() == 0.0);
  CHECK(last[0].get<double>() == doctest::Approx(3.0).epsilon(0.1));
  CHECK(fs::exists(dir / "manifest.json"));
}

TEST_CASE("fit with k_max zero returns the initial estimate") {
  const auto dir = workdir("fit_k0");
  write(dir / "fit.json", R"({
    "model": "cem-normal",
    "generate": {"n": 200, "theta0": [1, 0.5], "seed": 4},
    "init": {"method": "given", "theta": [0.9, 0.6]},
    "engine": {"regime": "smooth-analytic", "psi": "1/4", "k_max": 0}
  })");
  const auto r = cli({"fit", "--config", (dir / "fit.json").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto j = json::parse(r.out);
  CHECK(j["iterates"].size() == 1);
  CHECK(j["iterates"][0][0].get<double>() == 0.9);
}

TEST_CASE("fit on a dataset file relative to the config") {
  const auto dir = workdir("fit_cox");
  REQUIRE(cli({"generate", "--model", "cox", "--n", "150", "--theta0", "1", "--seed", "2", "-o", (dir / "d.csv").string()}).code == 0);
  write(dir / "fit.json", R"({
    "model": "cox",
    "data": "d.csv",
    "init": {"method": "deterministic", "lower": [-1], "upper": [3], "psi": "1/3"},
    "engine": {"regime": "profile", "psi": "1/3", "r": "1/3"}
  })");
  const auto r = cli({"fit", "--config", (dir / "fit.json").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto j = json::parse(r.out);
  CHECK(j["steps"].size() == 2);
  CHECK(std::isfinite(j["iterates"].back()[0].get<double>()));
}

TEST_CASE("fit config errors name the key") {
  const auto dir = workdir("fit_bad");
  write(dir / "a.json", R"({"model": "plm", "generate": {"n": 100, "theta0": [1, 0]}, "init": {"method": "pilot"},
    "engine": {"regime": "penalized"}})");
  auto r = cli({"fit", "--config", (dir / "a.json").string()});
  CHECK(r.code == kstep::cli::kUsage);
  CHECK(r.err.find("engine.psi") != std::string::npos);

  write(dir / "b.json", R"({"model": "plm", "generate": {"n": 100, "theta0": [1, 0]},
    "engine": {"regime": "penalized", "psi": "1/2"}})");
  r = cli({"fit", "--config", (dir / "b.json").string()});
  CHECK(r.code == kstep::cli::kUsage);
  CHECK(r.err.find("'init'") != std::string::npos);

  write(dir / "c.json", "{not json");
  CHECK(cli({"fit", "--config", (dir / "c.json").string()}).code == kstep::cli::kUsage);
  CHECK(cli({"fit", "--config", (dir / "missing.json").string()}).code == kstep::cli::kUsage);
}

TEST_CASE("simulate is reproducible and validates its overrides") {
  const auto dir = workdir("simulate");
  write(dir / "sim.json", R"({
    "model": "cem-normal", "theta0": [1, 0.5], "n_grid": [60, 120], "replications": 4, "seed": 9,
    "init": {"method": "oracle", "psi": "1/4"},
    "engine": {"regime": "smooth-analytic", "psi": "1/4", "k_max": 2},
    "checks": []
  })");
  const auto a = cli({"simulate", "--config", (dir / "sim.json").string(), "-o", (dir / "a").string()});
  REQUIRE_MESSAGE(a.code == 0, a.err);
  const auto b = cli({"simulate", "--config", (dir / "sim.json").string(), "-o", (dir / "b").string()});
  REQUIRE(b.code == 0);
  CHECK(slurp(dir / "a" / "report.json") == slurp(dir / "b" / "report.json"));
  CHECK(slurp(dir / "a" / "medians.csv") == slurp(dir / "b" / "medians.csv"));
  const auto m = json::parse(slurp(dir / "a" / "manifest.json"));
  CHECK(m["seed"] == 9);

  const auto c = cli({"simulate", "--config", (dir / "sim.json").string(), "--seed", "10", "-o", (dir / "c").string()});
  REQUIRE(c.code == 0);
  CHECK(slurp(dir / "a" / "report.json") != slurp(dir / "c" / "report.json"));

  const auto z = cli({"simulate", "--config", (dir / "sim.json").string(), "--replications", "0", "-o", (dir / "z").string()});
  CHECK(z.code == kstep::cli::kUsage);
}

TEST_CASE("a failing check gives the mismatch exit code") {
  const auto dir = workdir("simulate_fail");
  write(dir / "sim.json", R"({
    "model": "cem-normal", "theta0": [1, 0.5], "n_grid": [60, 120], "replications": 4, "seed": 9,
    "init": {"method": "oracle", "psi": "1/4"},
    "engine": {"regime": "smooth-analytic", "psi": "1/4", "k_max": 1},
    "checks": [{"kind": "slope_at_most", "k": 1, "against": "truth", "bound": -5.0, "slack": 0.0}]
  })");
  const auto r = cli({"simulate", "--config", (dir / "sim.json").string(), "-o", (dir / "out").string()});
  CHECK(r.code == kstep::cli::kMismatch);
  CHECK(r.out.find("FAIL") != std::string::npos);
}
