#include "kstep/newton_engine.hpp"

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "kstep/errors.hpp"
#include "kstep/serialization.hpp"

namespace kstep {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

rates::SmoothMode smooth_mode(rates::Regime r) {
  return r == rates::Regime::SmoothFiniteDiff ? rates::SmoothMode::FiniteDiff : rates::SmoothMode::Analytic;
}

double scaled_power(double c, long n, const Rational& exponent) {
  return c * std::pow(static_cast<double>(n), -exponent.to_double());
}

bool check_divergence(const KStepTrajectory& t, double eps) {
  const auto m = t.steps.size();
  if (m < 2) return false;
  const double tol = 10.0 * eps;
  const auto& a = t.steps[m - 2];
  const auto& b = t.steps[m - 1];
  return (a.criterion_before - a.criterion_after > tol) && (b.criterion_before - b.criterion_after > tol);
}

// Applies one Newton update; returns false (and fills the trajectory) when the
// information estimate is too ill-conditioned to invert.
bool apply_step(const ProfiledCriterion& c, KStepTrajectory& traj, StepRecord rec, const KStepConfig& cfg, int k) {
  if (!(rec.info.condition <= kSingularCondition)) {
    traj.stopped_by = StopReason::DomainError;
    traj.failed_step = k;
    traj.message = "singular information estimate at step " + std::to_string(k) +
                   " (condition " + std::to_string(rec.info.condition) + ")";
    return false;
  }
  const Vector delta = rec.info.matrix.ldlt().solve(rec.score.vector);
  const Vector next = traj.iterates.back() + delta;
  if (!next.allFinite()) {
    traj.stopped_by = StopReason::DomainError;
    traj.failed_step = k;
    traj.message = "non-finite iterate at step " + std::to_string(k);
    return false;
  }
  rec.criterion_after = c.evaluate(next);
  traj.iterates.push_back(next);
  traj.steps.push_back(std::move(rec));
  if (check_divergence(traj, cfg.epsilon_stop)) traj.diverged = true;
  return true;
}

bool epsilon_stop(const KStepConfig& cfg, const StepRecord& rec) {
  return cfg.epsilon_stop > 0.0 && std::abs(rec.criterion_after - rec.criterion_before) <= cfg.epsilon_stop;
}

}  // namespace

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::KMaxReached: return "k_max_reached";
    case StopReason::EpsilonRule: return "epsilon_rule";
    case StopReason::DomainError: return "domain_error";
  }
  return "unknown";
}

void validate(const KStepConfig& cfg) {
  if (cfg.k_max && *cfg.k_max < 0) throw DomainError("k_max must be nonnegative");
  if (!(cfg.epsilon_stop >= 0.0)) throw DomainError("epsilon_stop must be nonnegative");
  if (!(cfg.step_constant > 0.0)) throw DomainError("step_constant must be positive");
  if (cfg.hessian_mode == InfoConstruction::GradientFD && !(cfg.fd_t1 < cfg.fd_t2)) {
    throw DomainError("fd pair must satisfy t1 < t2");
  }
  if (cfg.regime == rates::Regime::Profile) {
    rates::check_profile_inputs(cfg.psi, cfg.rate);
  } else {
    rates::check_smooth_inputs(cfg.psi, cfg.rate, smooth_mode(cfg.regime));
  }
}

rates::RatePlan plan(const KStepConfig& cfg, long n) {
  validate(cfg);
  if (n < 1) throw DomainError("sample size must be positive");
  rates::RatePlan p;
  p.regime = cfg.regime;
  p.psi = cfg.psi;
  p.nuisance_rate = cfg.rate;
  p.n = n;
  if (cfg.regime == rates::Regime::Profile) {
    p.k_star = rates::k_star_profile(cfg.psi, cfg.rate);
    const int k_max = cfg.k_max.value_or(p.k_star);
    p.exponents = rates::profile_rate_sequence(cfg.psi, cfg.rate, k_max);
    Rational tracked = cfg.psi;
    for (int k = 1; k <= k_max; ++k) {
      const auto st = rates::step_size_schedule(tracked, cfg.rate);
      p.step_schedule.push_back(st.pair);
      p.steps.push_back({k, st.next_rate, st.pair, scaled_power(cfg.step_constant, n, st.pair.s_exponent),
                         scaled_power(cfg.step_constant, n, st.pair.t_exponent)});
      tracked = st.next_rate;
    }
  } else {
    const auto mode = smooth_mode(cfg.regime);
    p.k_star = rates::k_star_smooth(cfg.psi, cfg.rate, mode);
    const int k_max = cfg.k_max.value_or(p.k_star);
    p.exponents = rates::smooth_rate_sequence(cfg.psi, cfg.rate, mode, k_max);
    const double t = cfg.hessian_mode == InfoConstruction::GradientFD ? 1.0 / std::sqrt(static_cast<double>(n)) : kNaN;
    for (int k = 1; k <= k_max; ++k) {
      p.steps.push_back({k, p.exponents[static_cast<std::size_t>(k - 1)], {Rational(0), Rational(0)}, kNaN, t});
    }
  }
  return p;
}

KStepTrajectory run_profile(const ProfiledCriterion& c, const Vector& theta0, const KStepConfig& cfg) {
  if (cfg.regime != rates::Regime::Profile) throw DomainError("run_profile needs the profile regime");
  if (theta0.size() != c.dimension()) throw DomainError("initial estimate has the wrong dimension");
  const auto p = plan(cfg, c.sample_size());
  KStepTrajectory traj;
  traj.iterates.push_back(theta0);
  double current = c.evaluate(theta0);
  for (const auto& st : p.steps) {
    const Vector& theta = traj.iterates.back();
    StepRecord rec;
    rec.s_n = st.s_n;
    rec.t_n = st.t_n;
    rec.exponents = st.pair;
    rec.tracked_rate = st.exponent;
    rec.criterion_before = current;
    rec.score = numeric_score(c, theta, st.s_n, current);
    switch (cfg.hessian_mode) {
      case InfoConstruction::NumericSecondDiff: rec.info = numeric_info(c, theta, st.t_n, current); break;
      case InfoConstruction::AnalyticHessian: rec.info = analytic_info(c, theta); break;
      case InfoConstruction::GradientFD: rec.info = gradient_fd_info(c, theta, cfg.fd_t1, cfg.fd_t2); break;
    }
    if (!apply_step(c, traj, std::move(rec), cfg, st.k)) return traj;
    current = traj.steps.back().criterion_after;
    if (epsilon_stop(cfg, traj.steps.back())) {
      traj.stopped_by = StopReason::EpsilonRule;
      return traj;
    }
  }
  traj.stopped_by = StopReason::KMaxReached;
  return traj;
}

KStepTrajectory run_smooth(const ProfiledCriterion& c, const Vector& theta0, const KStepConfig& cfg) {
  if (cfg.regime == rates::Regime::Profile) throw DomainError("run_smooth needs a smooth or penalized regime");
  if (!c.has_gradient()) throw CapabilityError("smooth regime needs an analytic gradient");
  if (cfg.hessian_mode == InfoConstruction::NumericSecondDiff) {
    throw DomainError("smooth regime uses the analytic or gradient-difference information");
  }
  if (theta0.size() != c.dimension()) throw DomainError("initial estimate has the wrong dimension");
  const auto p = plan(cfg, c.sample_size());
  const double n = static_cast<double>(c.sample_size());
  KStepTrajectory traj;
  traj.iterates.push_back(theta0);
  double current = c.evaluate(theta0);
  for (const auto& st : p.steps) {
    const Vector& theta = traj.iterates.back();
    StepRecord rec;
    rec.s_n = kNaN;
    rec.t_n = st.t_n;
    rec.exponents = st.pair;
    rec.tracked_rate = st.exponent;
    rec.criterion_before = current;
    rec.score = {c.gradient(theta) / n, 0.0};
    rec.info = cfg.hessian_mode == InfoConstruction::AnalyticHessian ? analytic_info(c, theta)
                                                                      : gradient_fd_info(c, theta, cfg.fd_t1, cfg.fd_t2);
    if (!apply_step(c, traj, std::move(rec), cfg, st.k)) return traj;
    current = traj.steps.back().criterion_after;
    if (epsilon_stop(cfg, traj.steps.back())) {
      traj.stopped_by = StopReason::EpsilonRule;
      return traj;
    }
  }
  traj.stopped_by = StopReason::KMaxReached;
  return traj;
}

KStepTrajectory run(const ProfiledCriterion& c, const Vector& theta0, const KStepConfig& cfg) {
  return cfg.regime == rates::Regime::Profile ? run_profile(c, theta0, cfg) : run_smooth(c, theta0, cfg);
}

nlohmann::json to_json(const rates::RatePlan& p) {
  nlohmann::json j;
  j["regime"] = rates::to_string(p.regime);
  j["psi"] = p.psi.str();
  j[p.regime == rates::Regime::Profile ? "r" : "g"] = p.nuisance_rate.str();
  j["n"] = p.n;
  j["k_star"] = p.k_star;
  j["exponents"] = nlohmann::json::array();
  for (const auto& e : p.exponents) j["exponents"].push_back(e.str());
  j["steps"] = nlohmann::json::array();
  for (const auto& st : p.steps) {
    nlohmann::json js;
    js["k"] = st.k;
    js["exponent"] = st.exponent.str();
    if (p.regime == rates::Regime::Profile) {
      js["s_exponent"] = st.pair.s_exponent.str();
      js["t_exponent"] = st.pair.t_exponent.str();
    }
    js["s_n"] = json_number(st.s_n);
    js["t_n"] = json_number(st.t_n);
    j["steps"].push_back(std::move(js));
  }
  return j;
}

nlohmann::json to_json(const KStepTrajectory& t) {
  nlohmann::json j;
  j["schema"] = 1;
  j["iterates"] = nlohmann::json::array();
  for (const auto& it : t.iterates) j["iterates"].push_back(json_vector(it));
  j["steps"] = nlohmann::json::array();
  for (const auto& s : t.steps) {
    nlohmann::json js;
    js["score"] = json_vector(s.score.vector);
    js["info"] = json_matrix(s.info.matrix);
    js["info_construction"] = to_string(s.info.construction);
    js["info_condition"] = json_number(s.info.condition);
    js["s_n"] = json_number(s.s_n);
    js["t_n"] = json_number(s.t_n);
    if (s.info.fd_pair) js["fd_pair"] = {s.info.fd_pair->first, s.info.fd_pair->second};
    js["tracked_rate"] = s.tracked_rate.str();
    js["criterion_before"] = json_number(s.criterion_before);
    js["criterion_after"] = json_number(s.criterion_after);
    j["steps"].push_back(std::move(js));
  }
  j["stopped_by"] = to_string(t.stopped_by);
  j["diverged"] = t.diverged;
  if (t.failed_step > 0) j["failed_step"] = t.failed_step;
  if (!t.message.empty()) j["message"] = t.message;
  return j;
}

}  // namespace kstep
