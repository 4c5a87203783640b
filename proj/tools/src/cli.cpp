#include "kstep_cli/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <limits>
#include <memory>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kstep/errors.hpp"
#include "kstep/initializers.hpp"
#include "kstep/models/conditional_model.hpp"
#include "kstep/models/cox_current_status.hpp"
#include "kstep/models/partial_spline.hpp"
#include "kstep/newton_engine.hpp"
#include "kstep/serialization.hpp"
#include "kstep/simharness.hpp"

#ifndef KSTEP_VERSION
#define KSTEP_VERSION "0.0.0"
#endif

namespace kstep::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Manifest {
  json j;

  Manifest(const std::string& command, const std::string& config_path) {
    j["schema"] = 1;
    j["command"] = command;
    j["config_path"] = config_path.empty() ? json(nullptr) : json(config_path);
    j["version"] = KSTEP_VERSION;
    j["started_at"] = utc_now();
    j["outputs"] = json::array();
  }

  void write(const fs::path& dir) {
    j["finished_at"] = utc_now();
    write_text_file((dir / "manifest.json").string(), j.dump(2) + "\n");
  }
};

Rational flag_rational(const std::string& flag, const std::string& text) {
  try {
    return Rational::parse(text);
  } catch (const Error& e) {
    throw ConfigError(flag + ": " + e.what());
  }
}

json load_json(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
}

const json& need(const json& j, const std::string& key, const std::string& ctx = "") {
  if (!j.is_object() || !j.contains(key)) throw ConfigError("missing key '" + ctx + key + "'");
  return j.at(key);
}

Vector parse_list(const std::string& flag, const std::string& text) {
  std::vector<double> xs;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      xs.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(flag + ": bad number '" + item + "'");
    }
  }
  if (xs.empty()) throw ConfigError(flag + ": empty list");
  return Eigen::Map<Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

// ---- tables ----

int cmd_tables(const std::string& out_dir, std::ostream& out, std::ostream& err) {
  Manifest m("tables", "");
  const auto tables = rates::emit_tables();
  const fs::path dir(out_dir);
  for (const auto& t : tables) {
    const auto name = t.name + ".csv";
    write_text_file((dir / name).string(), rates::table_csv(t));
    m.j["outputs"].push_back(name);
  }
  write_text_file((dir / "tables.json").string(), rates::tables_json(tables).dump(2) + "\n");
  m.j["outputs"].push_back("tables.json");
  const auto diff = diff_against_expected(tables);
  m.j["matches_expected"] = diff.empty();
  m.write(dir);
  if (!diff.empty()) {
    err << "kstep tables: emitted tables differ from the expected values\n";
    for (const auto& line : diff) err << "  " << line << '\n';
    return kMismatch;
  }
  out << "wrote " << tables.size() << " tables to " << out_dir << " (all entries match)\n";
  return kOk;
}

// ---- plan ----

struct PlanArgs {
  std::string regime = "profile";
  std::string psi;
  std::string r;
  std::string g;
  long n = 0;
  std::string hessian_mode;
  int k_max = -1;
  double step_constant = 1.0;
  bool as_json = false;
};

int cmd_plan(const PlanArgs& a, std::ostream& out) {
  KStepConfig cfg;
  try {
    cfg.regime = rates::parse_regime(a.regime);
  } catch (const Error& e) {
    throw ConfigError(std::string("--regime: ") + e.what());
  }
  const bool profile = cfg.regime == rates::Regime::Profile;
  cfg.psi = flag_rational("--psi", a.psi);
  if (!(cfg.psi > Rational(0)) || cfg.psi > Rational(1, 2)) {
    throw ConfigError("--psi: must satisfy 0 < psi <= 1/2, got " + cfg.psi.str());
  }
  if (profile) {
    if (a.r.empty()) throw ConfigError("--r is required for the profile regime");
    cfg.rate = flag_rational("--r", a.r);
  } else if (!a.g.empty()) {
    cfg.rate = flag_rational("--g", a.g);
  } else if (cfg.regime == rates::Regime::SmoothFiniteDiff) {
    throw ConfigError("--g is required for the smooth-fd regime");
  } else {
    cfg.rate = Rational(1, 2);
  }
  if (!a.hessian_mode.empty()) {
    try {
      cfg.hessian_mode = parse_info_construction(a.hessian_mode);
    } catch (const Error& e) {
      throw ConfigError(std::string("--hessian-mode: ") + e.what());
    }
  } else {
    cfg.hessian_mode = profile ? InfoConstruction::NumericSecondDiff
                               : (cfg.regime == rates::Regime::SmoothFiniteDiff ? InfoConstruction::GradientFD
                                                                                 : InfoConstruction::AnalyticHessian);
  }
  if (a.k_max >= 0) cfg.k_max = a.k_max;
  cfg.step_constant = a.step_constant;
  const long n = a.n > 0 ? a.n : 1;
  rates::RatePlan p;
  try {
    p = plan(cfg, n);
  } catch (const DomainError& e) {
    throw ConfigError(std::string(profile ? "--psi/--r: " : "--psi/--g: ") + e.what());
  }
  if (a.as_json) {
    out << to_json(p).dump(2) << '\n';
    return kOk;
  }
  out << "k*=" << p.k_star << '\n';
  out << "regime=" << rates::to_string(p.regime) << " psi=" << p.psi.str() << (profile ? " r=" : " g=")
      << p.nuisance_rate.str() << '\n';
  out << "exponents:";
  for (const auto& e : p.exponents) out << ' ' << e.str();
  out << '\n';
  for (const auto& st : p.steps) {
    out << "step " << st.k << ": rate " << st.exponent.str();
    if (profile) out << ", s exponent " << st.pair.s_exponent.str() << ", t exponent " << st.pair.t_exponent.str();
    if (a.n > 0) out << ", s_n=" << format_double(st.s_n) << ", t_n=" << format_double(st.t_n);
    out << '\n';
  }
  return kOk;
}

// ---- fit ----

models::ModelDataset fit_data(const json& cfg, const fs::path& base, models::ModelKind model, Vector* truth) {
  if (cfg.contains("data")) {
    fs::path p = need(cfg, "data").get<std::string>();
    if (p.is_relative()) p = base / p;
    std::string text;
    try {
      text = read_text_file(p.string());
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    auto d = models::from_csv(text);
    if (models::kind_of(d) != model) throw ConfigError("data file holds a " + models::to_string(models::kind_of(d)) + " dataset");
    return d;
  }
  if (!cfg.contains("generate")) throw ConfigError("missing key 'data' (or 'generate')");
  const auto& g = cfg.at("generate");
  const long n = need(g, "n", "generate.").get<long>();
  *truth = vector_from_json(need(g, "theta0", "generate."), "generate.theta0");
  const auto seed = g.value("seed", std::uint64_t{1});
  return models::generate(model, n, *truth, seed);
}

KStepTrajectory plm_trajectory(const models::PartialSplineCriterion& c, const Vector& start, int k_max) {
  const auto& prob = c.problem();
  KStepTrajectory t;
  t.iterates.push_back(start);
  double before = c.evaluate(start);
  const double n = static_cast<double>(c.sample_size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int k = 1; k <= k_max; ++k) {
    const Vector& cur = t.iterates.back();
    StepRecord rec;
    rec.score = {c.gradient(cur) / n, 0.0};
    rec.info = analytic_info(c, cur);
    rec.s_n = nan;
    rec.t_n = nan;
    rec.criterion_before = before;
    const Vector next = prob.one_step_sparse(c.penalty(), cur);
    rec.criterion_after = c.evaluate(next);
    before = rec.criterion_after;
    t.iterates.push_back(next);
    t.steps.push_back(std::move(rec));
  }
  t.stopped_by = StopReason::KMaxReached;
  return t;
}

int cmd_fit(const std::string& config_path, const std::string& out_path, std::ostream& out, std::ostream& err) {
  Manifest m("fit", config_path);
  const json cfg = load_json(config_path);
  m.j["config"] = cfg;
  models::ModelKind model;
  try {
    model = models::parse_model(need(cfg, "model").get<std::string>());
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  KStepConfig engine = sim::engine_from_json(need(cfg, "engine"));
  const sim::ModelParams params = sim::params_from_json(cfg.contains("model_params") ? cfg.at("model_params") : json());
  const auto& init = need(cfg, "init");
  const auto method = need(init, "method", "init.").get<std::string>();
  static const std::vector<std::string> methods{"given", "oracle", "deterministic", "stochastic", "pilot"};
  if (std::find(methods.begin(), methods.end(), method) == methods.end()) {
    throw ConfigError("key 'init.method' must be one of given|oracle|deterministic|stochastic|pilot");
  }
  validate(engine);

  Vector truth;
  const auto data = fit_data(cfg, fs::path(config_path).parent_path(), model, &truth);
  const long n = models::size_of(data);

  std::unique_ptr<ProfiledCriterion> crit;
  std::shared_ptr<models::PartialSplineProblem> plm;
  Vector pilot;
  if (model == models::ModelKind::CoxCurrentStatus) {
    crit = std::make_unique<models::CoxCurrentStatusCriterion>(std::get<models::CSDataset>(data), params.npmle);
  } else if (model == models::ModelKind::PartialLinear) {
    const double lambda = params.lambda0 * std::pow(static_cast<double>(n), -0.4);
    plm = std::make_shared<models::PartialSplineProblem>(std::get<models::PLMDataset>(data), lambda);
    pilot = plm->unpenalized();
    crit = std::make_unique<models::PartialSplineCriterion>(
        plm, models::scaled_penalty(n, params.lambda0, params.tau0, pilot, params.gamma));
  } else {
    crit = std::make_unique<models::CemCriterion>(std::get<models::CEMDataset>(data), params.kernel);
  }
  if ((engine.regime == rates::Regime::Profile) != (model == models::ModelKind::CoxCurrentStatus)) {
    throw ConfigError("the profile regime goes with the cox model and the smooth regimes with the others");
  }

  Vector theta0;
  if (method == "given") {
    theta0 = vector_from_json(need(init, "theta", "init."), "init.theta");
  } else if (method == "oracle") {
    if (truth.size() == 0) throw ConfigError("init method 'oracle' needs a generated dataset");
    std::mt19937_64 rng(init.value("seed", std::uint64_t{1}));
    Rational psi = init.contains("psi") ? rational_from_json(init.at("psi"), "init.psi") : engine.psi;
    theta0 = sim::oracle_initializer(truth, psi, n, rng);
  } else if (method == "pilot") {
    if (!plm) throw ConfigError("init method 'pilot' is only defined for the partial linear model");
    theta0 = pilot;
  } else {
    SearchSpace box{vector_from_json(need(init, "lower", "init."), "init.lower"),
                    vector_from_json(need(init, "upper", "init."), "init.upper")};
    GridSpec spec;
    spec.psi = init.contains("psi") ? rational_from_json(init.at("psi"), "init.psi") : Rational(1, 4);
    spec.side_scale = init.value("side_scale", 1.0);
    spec.min_card_scale = init.value("min_card_scale", 1.0);
    spec.seed = init.value("seed", std::uint64_t{0});
    const auto r = method == "deterministic" ? deterministic_search(*crit, box, spec, n) : stochastic_search(*crit, box, spec, n);
    theta0 = r.theta;
    m.j["init_search"] = {{"evaluated", r.evaluated}, {"failed", r.failed}};
  }
  if (theta0.size() != crit->dimension()) throw ConfigError("initial estimate has the wrong dimension");

  KStepTrajectory traj;
  if (plm) {
    const int k_max = engine.k_max.value_or(plan(engine, n).k_star);
    traj = plm_trajectory(static_cast<const models::PartialSplineCriterion&>(*crit), theta0, k_max);
  } else {
    traj = run(*crit, theta0, engine);
  }
  json result = to_json(traj);
  result["model"] = models::to_string(model);
  result["n"] = n;
  result["plan"] = to_json(plan(engine, n));
  if (truth.size() > 0) result["theta0"] = json_vector(truth);
  const std::string text = result.dump(2) + "\n";
  if (out_path.empty()) {
    out << text;
  } else {
    write_text_file(out_path, text);
    m.j["outputs"].push_back(fs::path(out_path).filename().string());
    m.write(fs::path(out_path).parent_path().empty() ? fs::path(".") : fs::path(out_path).parent_path());
  }
  if (traj.stopped_by == StopReason::DomainError) {
    err << "kstep fit: " << traj.message << '\n';
    return kNumerical;
  }
  return kOk;
}

// ---- simulate ----

int cmd_simulate(const std::string& config_path, int replications, std::int64_t seed, const std::string& out_dir,
                 std::ostream& out, std::ostream& err) {
  Manifest m("simulate", config_path);
  json raw = load_json(config_path);
  if (replications != -1) raw["replications"] = replications;
  if (seed >= 0) raw["seed"] = seed;
  const auto cfg = sim::experiment_from_json(raw);
  m.j["config"] = sim::to_json(cfg);
  m.j["seed"] = cfg.seed;
  const auto report = sim::run_experiment(cfg);
  const fs::path dir(out_dir);
  write_text_file((dir / "report.json").string(), sim::to_json(report).dump(2) + "\n");
  write_text_file((dir / "medians.csv").string(), sim::medians_csv(report));
  m.j["outputs"] = {"report.json", "medians.csv"};
  m.j["pass"] = report.pass;
  m.write(dir);
  for (const auto& c : report.checks) out << (c.pass ? "PASS " : "FAIL ") << c.check.kind << ": " << c.detail << '\n';
  if (!report.failure_rate_ok) err << "kstep simulate: replication failure rate above 5%\n";
  out << (report.pass ? "all checks passed" : "some checks failed") << " (" << out_dir << "/report.json)\n";
  return report.pass ? kOk : kMismatch;
}

// ---- generate ----

int cmd_generate(const std::string& model, long n, const std::string& theta, std::uint64_t seed, const std::string& out_path,
                 std::ostream& out) {
  models::ModelKind kind;
  try {
    kind = models::parse_model(model);
  } catch (const DomainError& e) {
    throw ConfigError(std::string("--model: ") + e.what());
  }
  const auto data = models::generate(kind, n, parse_list("--theta0", theta), seed);
  const auto text = models::to_csv(data);
  if (out_path.empty()) {
    out << text;
  } else {
    write_text_file(out_path, text);
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"k-step Newton-Raphson estimation toolkit", "kstep"};
  app.set_version_flag("--version", KSTEP_VERSION);
  app.require_subcommand(1);

  std::string tables_dir;
  auto* tables = app.add_subcommand("tables", "write the rate tables and compare them with the expected values");
  tables->add_option("-o,--out", tables_dir, "output directory")->required();

  PlanArgs pa;
  auto* plan_cmd = app.add_subcommand("plan", "iteration count and step-size schedule");
  plan_cmd->add_option("--regime", pa.regime, "profile|smooth-analytic|smooth-fd|penalized")->capture_default_str();
  plan_cmd->add_option("--psi", pa.psi, "initial rate, num/den")->required();
  plan_cmd->add_option("--r", pa.r, "nuisance rate (profile)");
  plan_cmd->add_option("--g", pa.g, "nuisance rate (smooth)");
  plan_cmd->add_option("--n", pa.n, "sample size for concrete step sizes");
  plan_cmd->add_option("--hessian-mode", pa.hessian_mode, "numeric|analytic|gradient-fd");
  plan_cmd->add_option("--k-max", pa.k_max, "override the number of steps");
  plan_cmd->add_option("--step-constant", pa.step_constant, "C in s_n = C n^-s")->capture_default_str();
  plan_cmd->add_flag("--json", pa.as_json, "print JSON");

  std::string fit_config, fit_out;
  auto* fit = app.add_subcommand("fit", "initial estimate followed by the k-step iteration");
  fit->add_option("--config", fit_config, "JSON config")->required();
  fit->add_option("-o,--out", fit_out, "trajectory JSON (default stdout)");

  std::string sim_config, sim_out = "simulate-out";
  int sim_reps = -1;
  std::int64_t sim_seed = -1;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo campaign");
  simulate->add_option("--config", sim_config, "JSON config")->required();
  simulate->add_option("--replications", sim_reps, "override replications");
  simulate->add_option("--seed", sim_seed, "override seed");
  simulate->add_option("-o,--out", sim_out, "output directory")->capture_default_str();

  std::string gen_model, gen_theta, gen_out;
  long gen_n = 0;
  std::uint64_t gen_seed = 1;
  auto* generate = app.add_subcommand("generate", "simulate a dataset as CSV");
  generate->add_option("--model", gen_model, "cox|cem-normal|cem-exponential|plm")->required();
  generate->add_option("--n", gen_n, "sample size")->required();
  generate->add_option("--theta0", gen_theta, "comma separated true parameter")->required();
  generate->add_option("--seed", gen_seed, "seed")->capture_default_str();
  generate->add_option("-o,--out", gen_out, "output file (default stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << KSTEP_VERSION << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      out << sub->help();
      return kOk;
    }
    err << "kstep: " << e.what() << '\n';
    return kUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "tables") return cmd_tables(tables_dir, out, err);
    if (name == "plan") return cmd_plan(pa, out);
    if (name == "fit") return cmd_fit(fit_config, fit_out, out, err);
    if (name == "simulate") return cmd_simulate(sim_config, sim_reps, sim_seed, sim_out, out, err);
    if (name == "generate") return cmd_generate(gen_model, gen_n, gen_theta, gen_seed, gen_out, out);
  } catch (const NumericalError& e) {
    err << "kstep " << name << ": numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const EvaluationError& e) {
    err << "kstep " << name << ": numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const Error& e) {
    err << "kstep " << name << ": " << e.what() << '\n';
    return kUsage;
  } catch (const json::exception& e) {
    err << "kstep " << name << ": malformed config: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "kstep " << name << ": " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace kstep::cli
