#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kstep/rational.hpp"

namespace kstep::rates {

enum class Regime { Profile, SmoothAnalytic, SmoothFiniteDiff, Penalized };
enum class SmoothMode { Analytic, FiniteDiff };

std::string to_string(Regime r);
Regime parse_regime(const std::string& text);

/// Orders of the score and information step sizes: s_n ~ n^-s_exponent, t_n ~ n^-t_exponent.
struct StepSizePair {
  Rational s_exponent;
  Rational t_exponent;
};

enum class Stage { Growth = 1, Contraction = 2, Saturated = 3 };

struct StepStage {
  StepSizePair pair;
  Rational next_rate;
  Stage stage;
};

struct KernelRateInputs {
  Rational alpha;
  int q = 0;
  Rational epsilon;
};

struct KernelRates {
  Rational g;
  Rational delta;
};

/// Concrete step sizes for one planned iteration at a given n.
struct PlannedStep {
  int k = 0;
  Rational exponent;
  StepSizePair pair;
  double s_n = 0.0;
  double t_n = 0.0;
};

/// Iteration count, per-step rate exponents and step sizes for one run.
struct RatePlan {
  Regime regime = Regime::Profile;
  Rational psi;
  Rational nuisance_rate;  // r (profile) or g (smooth)
  int k_star = 0;
  std::vector<Rational> exponents;
  std::vector<StepSizePair> step_schedule;
  long n = 0;
  std::vector<PlannedStep> steps;
};

/// Smallest m >= 0 with base^m >= target (base > 1).
int int_log(const Rational& base, const Rational& target);
/// Smallest m >= 0 with base^m > target (base > 1).
int int_log_strict(const Rational& base, const Rational& target);

void check_profile_inputs(const Rational& psi, const Rational& r);
void check_smooth_inputs(const Rational& psi, const Rational& g, SmoothMode mode);

/// S(psi, r, 1..k_max).
std::vector<Rational> profile_rate_sequence(const Rational& psi, const Rational& r, int k_max);
int k_star_profile(const Rational& psi, const Rational& r);

std::vector<Rational> smooth_rate_sequence(const Rational& psi, const Rational& g, SmoothMode mode, int k_max);
int k_star_smooth(const Rational& psi, const Rational& g, SmoothMode mode);

StepStage step_size_schedule(const Rational& r_prev, const Rational& r);

KernelRates kernel_rates(const KernelRateInputs& inp);

struct TableRow {
  Rational psi;
  std::vector<Rational> exponents;
  int k_star = 0;
};

struct RateTable {
  std::string name;   // table1, table2, table3
  std::string title;
  std::string rate_symbol;  // "r" or "g"
  Rational rate;
  // Each block shares a model label; table 3 carries two constructions.
  struct Block {
    std::string model;
    std::vector<TableRow> rows;
  };
  std::vector<Block> blocks;
};

std::vector<RateTable> emit_tables();

/// CSV with header model,psi,k,exponent,exponent_num,exponent_den,k_star.
std::string table_csv(const RateTable& t);
nlohmann::json tables_json(const std::vector<RateTable>& tables);

}  // namespace kstep::rates
