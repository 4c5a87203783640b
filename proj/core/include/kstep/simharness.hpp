#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kstep/models/conditional_model.hpp"
#include "kstep/models/cox_current_status.hpp"
#include "kstep/models/datasets.hpp"
#include "kstep/newton_engine.hpp"

namespace kstep::sim {

enum class InitKind { Oracle, DeterministicGrid, StochasticGrid, Pilot };
std::string to_string(InitKind k);
InitKind parse_init(const std::string& text);

struct InitConfig {
  InitKind kind = InitKind::Oracle;
  Rational psi{1, 3};
  double half_width = 1.0;  // grid box is theta0 +- half_width
  double side_scale = 1.0;
  double min_card_scale = 1.0;
  bool random_offset = true;  // shift the deterministic lattice by a uniform fraction of its spacing
};

struct ModelParams {
  models::KernelSpec kernel;
  double lambda0 = 0.1;
  double tau0 = 2.0;
  double gamma = 1.0;
  models::NpmleSolver npmle = models::NpmleSolver::Pava;
};

/// One pass/fail comparison evaluated on the aggregated report.
struct Check {
  std::string kind;  // slope_at_most | scaled_nonincreasing | scaled_not_decreasing | zero_recovery | oracle_covariance
  int k = 0;
  bool against_truth = false;
  double bound = 0.0;
  double slack = 0.2;
  Rational power{1, 2};
  long n = 0;
  double floor = 0.0;  // scaled values below this count as equal to it
};

struct ExperimentConfig {
  models::ModelKind model = models::ModelKind::CemNormal;
  Vector theta0;
  std::vector<long> n_grid;
  int replications = 200;
  InitConfig init;
  KStepConfig engine;
  std::uint64_t seed = 1;
  ModelParams params;
  std::vector<Check> checks;
};

void validate(const ExperimentConfig& cfg);

struct Quantiles {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

struct Cell {
  long n = 0;
  int k = 0;
  Quantiles to_reference;
  Quantiles to_truth;
  int count = 0;
};

struct SlopeFit {
  double slope = 0.0;
  double stderr_ = 0.0;  // NaN with two points
};

struct CheckResult {
  Check check;
  bool pass = false;
  std::string detail;
  std::vector<double> observed;
};

struct PerN {
  long n = 0;
  int succeeded = 0;
  int failed = 0;
  std::vector<std::string> failure_messages;
  double reference_quality = 0.0;  // worst residual (smooth, penalized) or bracket width (profile)
  double zero_recovery = -1.0;     // fraction of replications with all null coordinates exactly zero at k_max
  Matrix oracle_covariance;        // empirical covariance of sqrt(n)(theta_A - theta0_A) at k_max
  bool ordered_in_k = true;
};

struct MonteCarloReport {
  int schema = 1;
  ExperimentConfig config;
  int k_max = 0;
  std::vector<Rational> predicted_exponents;
  std::vector<Cell> cells;
  std::vector<SlopeFit> slopes_reference;  // index k
  std::vector<SlopeFit> slopes_truth;
  std::vector<PerN> per_n;
  std::vector<CheckResult> checks;
  Matrix oracle_target;  // sigma^2 Sigma_AA^{-1} (partial linear model only)
  bool failure_rate_ok = true;
  bool pass = true;

  const Cell& cell(long n, int k) const;
};

/// theta0 + n^{-psi} u with u uniform on the unit sphere.
Vector oracle_initializer(const Vector& theta0, const Rational& psi, long n, std::mt19937_64& rng);

/// OLS slope of log err on log n. Any err below DBL_MIN gives slope -inf.
SlopeFit fit_rate_slope(const std::vector<std::pair<double, double>>& points);

Quantiles quantiles(std::vector<double> values);

/// Stream seed for replication rep at sample size n.
std::uint64_t stream_seed(std::uint64_t seed, long rep, long n);

/// Worker count from KSTEP_THREADS, else the hardware concurrency.
unsigned thread_count();

MonteCarloReport run_experiment(const ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentConfig& cfg);
nlohmann::json to_json(const MonteCarloReport& r);
/// n,k,median_ref,q1_ref,q3_ref,median_truth,q1_truth,q3_truth,count
std::string medians_csv(const MonteCarloReport& r);

ExperimentConfig experiment_from_json(const nlohmann::json& j);
KStepConfig engine_from_json(const nlohmann::json& j);
ModelParams params_from_json(const nlohmann::json& j);

}  // namespace kstep::sim
