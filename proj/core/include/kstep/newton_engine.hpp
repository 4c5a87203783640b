#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kstep/criterion.hpp"
#include "kstep/rate_calculus.hpp"

namespace kstep {

struct KStepConfig {
  rates::Regime regime = rates::Regime::Profile;
  Rational psi{1, 2};
  Rational rate{1, 2};  // r for the profile regime, g for the smooth ones
  std::optional<int> k_max;  // defaults to k*
  double epsilon_stop = 0.0;
  InfoConstruction hessian_mode = InfoConstruction::NumericSecondDiff;
  double fd_t1 = 0.0;
  double fd_t2 = 1.0;
  double step_constant = 1.0;  // s_n = C n^{-s}, t_n = C n^{-t}
};

void validate(const KStepConfig& cfg);

struct StepRecord {
  ScoreEstimate score;
  InfoEstimate info;
  double s_n = 0.0;  // NaN when the score is analytic
  double t_n = 0.0;  // NaN when the information is analytic
  rates::StepSizePair exponents;
  Rational tracked_rate;
  double criterion_before = 0.0;
  double criterion_after = 0.0;
};

enum class StopReason { KMaxReached, EpsilonRule, DomainError };
std::string to_string(StopReason r);

struct KStepTrajectory {
  std::vector<Vector> iterates;
  std::vector<StepRecord> steps;
  StopReason stopped_by = StopReason::KMaxReached;
  bool diverged = false;
  int failed_step = 0;
  std::string message;
};

/// Rate plan for a concrete sample size. With cfg.k_max unset the plan has k* steps.
rates::RatePlan plan(const KStepConfig& cfg, long n);

KStepTrajectory run_profile(const ProfiledCriterion& c, const Vector& theta0, const KStepConfig& cfg);
KStepTrajectory run_smooth(const ProfiledCriterion& c, const Vector& theta0, const KStepConfig& cfg);
/// Dispatches on cfg.regime.
KStepTrajectory run(const ProfiledCriterion& c, const Vector& theta0, const KStepConfig& cfg);

inline constexpr double kSingularCondition = 1e12;

nlohmann::json to_json(const rates::RatePlan& plan);
nlohmann::json to_json(const KStepTrajectory& t);

}  // namespace kstep
