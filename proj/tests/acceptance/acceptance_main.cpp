// Acceptance runner: one PASS/FAIL line per criterion.
//   kstep_acceptance [--only N]... [--config-dir DIR] [--fixture-dir DIR]

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "kstep/criterion.hpp"
#include "kstep/models/cox_current_status.hpp"
#include "kstep/models/partial_spline.hpp"
#include "kstep/newton_engine.hpp"
#include "kstep/rate_calculus.hpp"
#include "kstep/serialization.hpp"
#include "kstep/simharness.hpp"
#include "support/cox_oracle.hpp"

using namespace kstep;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Context {
  std::string config_dir = KSTEP_CONFIG_DIR;
  std::string fixture_dir = KSTEP_FIXTURE_DIR;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

std::vector<Rational> seq(std::initializer_list<const char*> xs) {
  std::vector<Rational> out;
  for (const char* x : xs) out.push_back(Rational::parse(x));
  return out;
}

// ---- 1: tables ----

Outcome tables(const Context&) {
  struct Want {
    std::string table;
    std::string block;
    const char* psi;
    std::vector<Rational> exps;
    int k_star;
  };
  const std::vector<Want> want{
      {"table1", "cox", "1/2", seq({"7/12"}), 1},
      {"table1", "cox", "1/3", seq({"1/2", "7/12"}), 2},
      {"table1", "cox", "1/4", seq({"3/8", "25/48", "7/12"}), 2},
      {"table2", "mixture", "1/2", seq({"3/4"}), 1},
      {"table2", "mixture", "1/3", seq({"1/2", "3/4"}), 2},
      {"table2", "mixture", "1/4", seq({"3/8", "9/16", "3/4"}), 2},
      {"table3", "cem-construction-I", "1/2", seq({"1"}), 1},
      {"table3", "cem-construction-I", "1/3", seq({"2/3"}), 1},
      {"table3", "cem-construction-I", "1/4", seq({"1/2", "1"}), 2},
      {"table3", "cem-construction-II", "1/2", seq({"451/600"}), 1},
      {"table3", "cem-construction-II", "1/3", seq({"251/600", "353/600"}), 2},
      {"table3", "cem-construction-II", "1/4",
       seq({"151/600", "153/600", "157/600", "165/600", "181/600", "213/600", "277/600", "405/600"}), 8},
  };
  const auto got = rates::emit_tables();
  Outcome o;
  int checked = 0;
  for (const auto& w : want) {
    const rates::TableRow* row = nullptr;
    for (const auto& t : got) {
      if (t.name != w.table) continue;
      for (const auto& b : t.blocks) {
        if (b.model != w.block) continue;
        for (const auto& r : b.rows) {
          if (r.psi == Rational::parse(w.psi)) row = &r;
        }
      }
    }
    bool ok = row != nullptr && row->k_star == w.k_star && row->exponents.size() == w.exps.size();
    for (std::size_t i = 0; ok && i < w.exps.size(); ++i) ok = row->exponents[i] == w.exps[i];
    if (!ok) {
      o.pass = false;
      o.detail += " mismatch " + w.table + "/" + w.block + "/psi=" + w.psi + ";";
    }
    ++checked;
  }
  if (o.pass) o.detail = std::to_string(checked) + " rows exact";
  return o;
}

// ---- 2: kernel rates ----

Outcome kernel(const Context&) {
  const auto r = rates::kernel_rates({Rational(1, 5), 28, Rational(1, 600)});
  Outcome o;
  o.pass = r.g == Rational(151, 600) && r.delta == Rational(1, 20);
  o.detail = "g=" + r.g.str() + " delta=" + r.delta.str();
  return o;
}

// ---- 3: quadratic oracles ----

Outcome quadratics(const Context&) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  double newton = 0.0, info = 0.0, fd = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const int d = 1 + rep % 4;
    Matrix b(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) b(i, j) = g(rng);
    const Matrix m = b * b.transpose() + Matrix::Identity(d, d);
    Vector a(d), start(d);
    for (int i = 0; i < d; ++i) a[i] = g(rng), start[i] = 3 * g(rng);
    const QuadraticCriterion c(100, m, a);
    KStepConfig cfg;
    cfg.regime = rates::Regime::SmoothAnalytic;
    cfg.psi = Rational(1, 4);
    cfg.rate = Rational(1, 2);
    cfg.hessian_mode = InfoConstruction::AnalyticHessian;
    cfg.k_max = 1;
    const auto t = run(c, start, cfg);
    newton = std::max(newton, (t.iterates.back() - c.maximizer()).norm());
    info = std::max(info, (numeric_info(c, start, 0.1).matrix - m).cwiseAbs().maxCoeff());
    fd = std::max(fd, (gradient_fd_info(c, start, -1.0, 1.0).matrix - m).cwiseAbs().maxCoeff());
  }

  double spline = 0.0;
  const Vector truth = (Vector(3) << 1.0, -2.0, 0.5).finished();
  const auto data = std::get<models::PLMDataset>(models::generate(models::ModelKind::PartialLinear, 200, truth, 7));
  const double lambda = 0.05;
  const models::PartialSplineProblem prob(data, lambda);
  const Vector fit = models::partial_spline_fit(data, lambda);
  models::PenaltyConfig none;
  none.lambda = lambda;
  for (int rep = 0; rep < 5; ++rep) {
    Vector start(3);
    for (int i = 0; i < 3; ++i) start[i] = 1.0 + std::abs(g(rng));
    spline = std::max(spline, (prob.one_step_sparse(none, start) - fit).norm());
  }
  Outcome o;
  o.pass = newton <= 1e-10 && info <= 1e-10 && fd <= 1e-10 && spline <= 1e-10;
  o.detail = "newton " + fmt(newton) + ", numeric_info " + fmt(info) + ", gradient_fd_info " + fmt(fd) +
             ", one_step_sparse " + fmt(spline);
  return o;
}

// ---- 4: Cox NPMLE ----

Outcome cox(const Context& ctx) {
  double worst = 0.0;
  int cases = 0;
  for (const char* name : {"cox_tiny.csv", "cox_tiny_b.csv", "cox_tiny_c.csv"}) {
    const auto d = std::get<models::CSDataset>(models::from_csv(read_text_file(ctx.fixture_dir + "/" + name)));
    for (double th : {-1.3, -0.4, 0.0, 0.5, 2.0}) {
      const Vector theta = Vector::Constant(1, th);
      for (auto solver : {models::NpmleSolver::Pava, models::NpmleSolver::Icm}) {
        const double got = models::cox_cs_npmle(d, theta, solver).loglik;
        const double want = testing::oracle_for(d, theta).solve();
        worst = std::max(worst, std::abs(got - want));
        ++cases;
      }
    }
  }
  Outcome o;
  o.pass = worst <= 1e-6;
  o.detail = std::to_string(cases) + " fixture/theta/solver cases, worst gap " + fmt(worst);
  return o;
}

// ---- 5: smoother invariants ----

Outcome smoother(const Context&) {
  const int n = 50;
  Vector z(n);
  for (int i = 0; i < n; ++i) z[i] = (i + 1.0) / n;
  double sym = 0.0, eig_lo = 0.0, eig_hi = 0.0, repro = 0.0;
  std::vector<double> traces;
  for (double lam : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    const Matrix a = models::smoother_matrix(z, lam).a;
    sym = std::max(sym, (a - a.transpose()).cwiseAbs().maxCoeff());
    const Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
    eig_lo = std::min(eig_lo, es.eigenvalues().minCoeff());
    eig_hi = std::max(eig_hi, es.eigenvalues().maxCoeff());
    const Vector one = Vector::Ones(n);
    repro = std::max({repro, (a * one - one).cwiseAbs().maxCoeff(), (a * z - z).cwiseAbs().maxCoeff()});
    traces.push_back(a.trace());
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < traces.size(); ++i) decreasing = decreasing && traces[i] < traces[i - 1];
  Outcome o;
  o.pass = sym <= 1e-10 && eig_lo >= -1e-10 && eig_hi <= 1 + 1e-10 && repro <= 1e-8 && decreasing;
  o.detail = "asymmetry " + fmt(sym) + ", eigenvalues in [" + fmt(eig_lo) + ", " + fmt(eig_hi) + "], {1,z} error " +
             fmt(repro) + ", traces " + fmt(traces.front()) + ".." + fmt(traces.back()) +
             (decreasing ? " decreasing" : " NOT decreasing");
  return o;
}

// ---- 6-10: campaigns ----

sim::MonteCarloReport campaign(const Context& ctx, const std::string& file) {
  const auto cfg = sim::experiment_from_json(nlohmann::json::parse(read_text_file(ctx.config_dir + "/" + file)));
  return sim::run_experiment(cfg);
}

Outcome judge(const sim::MonteCarloReport& r, const std::set<std::string>& kinds, const std::string& label = "") {
  Outcome o;
  o.pass = r.failure_rate_ok;
  if (!r.failure_rate_ok) o.detail += label + "replication failure rate above 5%; ";
  for (const auto& c : r.checks) {
    if (!kinds.count(c.check.kind)) continue;
    o.pass = o.pass && c.pass;
    o.detail += label + (c.pass ? "" : "FAILED ") + c.detail + "; ";
  }
  if (o.detail.size() >= 2) o.detail.resize(o.detail.size() - 2);
  return o;
}

Outcome cem_campaign(const Context& ctx) { return judge(campaign(ctx, "cem_analytic.json"), {"slope_at_most"}); }

Outcome cox_campaign(const Context& ctx) {
  return judge(campaign(ctx, "table1_cox.json"), {"scaled_nonincreasing", "scaled_not_decreasing"});
}

Outcome plm_closeness(const Context& ctx) { return judge(campaign(ctx, "plm_penalized.json"), {"scaled_nonincreasing"}); }

Outcome plm_oracle(const Context& ctx) {
  return judge(campaign(ctx, "plm_penalized.json"), {"zero_recovery", "oracle_covariance"});
}

Outcome initializers(const Context& ctx) {
  const auto a = judge(campaign(ctx, "init_deterministic.json"), {"scaled_nonincreasing"}, "deterministic: ");
  const auto b = judge(campaign(ctx, "init_stochastic.json"), {"scaled_nonincreasing"}, "stochastic: ");
  return {a.pass && b.pass, a.detail + "; " + b.detail};
}

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;  // 0 when no runtime bound applies
  std::function<Outcome(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kstep acceptance criteria", "kstep_acceptance"};
  std::vector<int> only;
  Context ctx;
  app.add_option("--only", only, "run only these criteria (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--config-dir", ctx.config_dir, "campaign configs")->capture_default_str();
  app.add_option("--fixture-dir", ctx.fixture_dir, "frozen fixtures")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "table reproduction", 1.0, tables},
      {2, "kernel-rate formula", 0.0, kernel},
      {3, "quadratic oracles", 0.0, quadratics},
      {4, "Cox NPMLE oracle equivalence", 10.0, cox},
      {5, "smoother invariants", 5.0, smoother},
      {6, "k*-sufficiency, conditionally normal model", 300.0, cem_campaign},
      {7, "profile-regime iteration count, Cox model", 900.0, cox_campaign},
      {8, "one-step closeness, partial linear model", 0.0, plm_closeness},
      {9, "oracle property, partial linear model", 0.0, plm_oracle},
      {10, "initializer rates", 0.0, initializers},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_seconds > 0 && secs > c.budget_seconds) {
      o.pass = false;
      o.detail += "; runtime " + fmt(secs) + " s exceeds " + fmt(c.budget_seconds) + " s";
    }
    if (!o.pass) ++failures;
    std::cout << "criterion " << c.id << " " << (o.pass ? "PASS" : "FAIL") << " " << c.name << ": " << o.detail << " ["
              << fmt(secs) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
