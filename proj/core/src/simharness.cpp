#include "kstep/simharness.hpp"

#include <algorithm>
#include <atomic>
#include <cfloat>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "kstep/errors.hpp"
#include "kstep/initializers.hpp"
#include "kstep/models/partial_spline.hpp"
#include "kstep/serialization.hpp"

namespace kstep::sim {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kFailureLimit = 0.05;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

struct RepResult {
  bool ok = false;
  std::string message;
  std::vector<Vector> iterates;
  Vector reference;
  double quality = 0.0;
};

// Coarse lattice, then cyclic golden-section refinement until every bracket is below 1e-4.
std::pair<Vector, double> profile_reference(const ProfiledCriterion& c, const Vector& center) {
  const auto d = center.size();
  if (d > 2) throw DomainError("profile reference search supports d <= 2");
  const double step = d == 1 ? 0.05 : 0.1;
  const double reach = d == 1 ? 2.0 : 1.0;
  const long per_axis = static_cast<long>(std::lround(2.0 * reach / step)) + 1;
  Vector best = center;
  double best_val = -std::numeric_limits<double>::infinity();
  std::vector<long> idx(static_cast<std::size_t>(d), 0);
  Vector node(d);
  while (true) {
    for (Eigen::Index i = 0; i < d; ++i) node[i] = center[i] - reach + step * static_cast<double>(idx[static_cast<std::size_t>(i)]);
    const double v = c.evaluate(node);
    if (v > best_val) {
      best_val = v;
      best = node;
    }
    Eigen::Index axis = d;
    bool done = false;
    while (axis > 0) {
      --axis;
      if (++idx[static_cast<std::size_t>(axis)] < per_axis) break;
      idx[static_cast<std::size_t>(axis)] = 0;
      if (axis == 0) done = true;
    }
    if (done) break;
  }
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double width = 2.0 * step;
  double max_width = width;
  for (int cycle = 0; cycle < 20; ++cycle) {
    max_width = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      double a = best[i] - width / 2.0;
      double b = best[i] + width / 2.0;
      Vector x = best;
      auto f = [&](double t) {
        x[i] = t;
        return c.evaluate(x);
      };
      double x1 = b - phi * (b - a);
      double x2 = a + phi * (b - a);
      double f1 = f(x1);
      double f2 = f(x2);
      while (b - a >= 1e-4) {
        if (f1 >= f2) {
          b = x2, x2 = x1, f2 = f1;
          x1 = b - phi * (b - a);
          f1 = f(x1);
        } else {
          a = x1, x1 = x2, f1 = f2;
          x2 = a + phi * (b - a);
          f2 = f(x2);
        }
      }
      const double cand = f1 >= f2 ? x1 : x2;
      const double cand_val = std::max(f1, f2);
      if (cand_val >= best_val) {
        best[i] = cand;
        best_val = cand_val;
      }
      max_width = std::max(max_width, b - a);
    }
    if (d == 1) break;
    width = std::max(width / 4.0, 4e-4);
  }
  return {best, max_width};
}

// Damped Newton from the truth until |gradient| / n < 1e-8.
std::pair<Vector, double> smooth_reference(const ProfiledCriterion& c, const Vector& start) {
  const double n = static_cast<double>(c.sample_size());
  Vector theta = start;
  double value = c.evaluate(theta);
  double resid = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 200; ++it) {
    const Vector g = c.gradient(theta);
    resid = g.norm() / n;
    if (resid < 1e-8) return {theta, resid};
    const Matrix h = c.hessian(theta);
    Vector step = (-h).ldlt().solve(g);
    if (!step.allFinite() || step.dot(g) <= 0.0) step = g / n;
    double t = 1.0;
    bool moved = false;
    for (int half = 0; half < 50; ++half, t *= 0.5) {
      const Vector trial = theta + t * step;
      double v = -std::numeric_limits<double>::infinity();
      try {
        v = c.evaluate(trial);
      } catch (const EvaluationError&) {
        continue;
      }
      if (v >= value) {
        theta = trial;
        value = v;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  resid = c.gradient(theta).norm() / c.sample_size();
  if (!(resid < 1e-8)) throw NumericalError("reference Newton did not reach |score| < 1e-8 (" + format_double(resid) + ")");
  return {theta, resid};
}

double kkt_residual(const models::PartialSplineProblem& p, const models::PenaltyConfig& pen, const Vector& theta) {
  const Vector w = p.weights(pen);
  const double kappa_scale = 0.5 * static_cast<double>(p.size()) * pen.tau * pen.tau;
  const Vector grad = p.cross() - p.gram() * theta;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const double kappa = kappa_scale * w[j];
    if (theta[j] != 0.0) {
      worst = std::max(worst, std::abs(grad[j] - kappa * (theta[j] > 0 ? 1.0 : -1.0)));
    } else {
      worst = std::max(worst, std::max(0.0, std::abs(grad[j]) - kappa));
    }
  }
  return worst / static_cast<double>(p.size());
}

SearchSpace init_box(const ExperimentConfig& cfg) {
  const Vector hw = Vector::Constant(cfg.theta0.size(), cfg.init.half_width);
  return {cfg.theta0 - hw, cfg.theta0 + hw};
}

Vector grid_init(const ExperimentConfig& cfg, const ProfiledCriterion& c, long n, std::mt19937_64& rng) {
  GridSpec spec{cfg.init.psi, cfg.init.side_scale, cfg.init.min_card_scale, rng()};
  SearchSpace box = init_box(cfg);
  if (cfg.init.kind == InitKind::StochasticGrid) return stochastic_search(c, box, spec, n, rng).theta;
  if (cfg.init.random_offset) {
    const double h = spec.side_scale * std::pow(static_cast<double>(n), -spec.psi.to_double());
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Eigen::Index i = 0; i < box.lower.size(); ++i) {
      const double shift = unif(rng) * h;
      box.lower[i] -= shift;
      box.upper[i] -= shift;
    }
  }
  return deterministic_search(c, box, spec, n).theta;
}

RepResult run_one(const ExperimentConfig& cfg, long n, long rep, int k_max) {
  RepResult out;
  const std::uint64_t s = stream_seed(cfg.seed, rep, n);
  std::mt19937_64 init_rng(splitmix64(s ^ 0xA5A5A5A5A5A5A5A5ULL));
  const auto data = models::generate(cfg.model, n, cfg.theta0, s);

  std::unique_ptr<ProfiledCriterion> crit;
  std::shared_ptr<models::PartialSplineProblem> plm;
  models::PenaltyConfig pen;
  Vector pilot;
  switch (cfg.model) {
    case models::ModelKind::CoxCurrentStatus: {
      crit = std::make_unique<models::CoxCurrentStatusCriterion>(std::get<models::CSDataset>(data), cfg.params.npmle);
      auto [ref, width] = profile_reference(*crit, cfg.theta0);
      out.reference = ref;
      out.quality = width;
      break;
    }
    case models::ModelKind::CemNormal:
    case models::ModelKind::CemExponential: {
      crit = std::make_unique<models::CemCriterion>(std::get<models::CEMDataset>(data), cfg.params.kernel);
      auto [ref, resid] = smooth_reference(*crit, cfg.theta0);
      out.reference = ref;
      out.quality = resid;
      break;
    }
    case models::ModelKind::PartialLinear: {
      const double lambda = cfg.params.lambda0 * std::pow(static_cast<double>(n), -0.4);
      plm = std::make_shared<models::PartialSplineProblem>(std::get<models::PLMDataset>(data), lambda);
      pilot = plm->unpenalized();
      pen = models::scaled_penalty(n, cfg.params.lambda0, cfg.params.tau0, pilot, cfg.params.gamma);
      crit = std::make_unique<models::PartialSplineCriterion>(plm, pen);
      out.reference = plm->full_fit(pen);
      out.quality = kkt_residual(*plm, pen, out.reference);
      break;
    }
  }

  Vector theta0;
  switch (cfg.init.kind) {
    case InitKind::Oracle: theta0 = oracle_initializer(cfg.theta0, cfg.init.psi, n, init_rng); break;
    case InitKind::DeterministicGrid:
    case InitKind::StochasticGrid: theta0 = grid_init(cfg, *crit, n, init_rng); break;
    case InitKind::Pilot:
      if (!plm) throw DomainError("pilot initializer is only defined for the partial linear model");
      theta0 = pilot;
      break;
  }

  out.iterates.push_back(theta0);
  if (plm) {
    for (int k = 1; k <= k_max; ++k) out.iterates.push_back(plm->one_step_sparse(pen, out.iterates.back()));
  } else if (k_max > 0) {
    KStepConfig engine = cfg.engine;
    engine.k_max = k_max;
    const auto traj = run(*crit, theta0, engine);
    if (traj.stopped_by == StopReason::DomainError) throw NumericalError(traj.message);
    out.iterates = traj.iterates;
    while (static_cast<int>(out.iterates.size()) < k_max + 1) out.iterates.push_back(out.iterates.back());
  }
  out.ok = true;
  return out;
}

double frobenius_relative(const Matrix& a, const Matrix& target) { return (a - target).norm() / target.norm(); }

std::vector<int> nonzero_support(const Vector& theta0) {
  std::vector<int> s;
  for (Eigen::Index j = 0; j < theta0.size(); ++j) {
    if (theta0[j] != 0.0) s.push_back(static_cast<int>(j));
  }
  return s;
}

double zero_fraction(const std::vector<RepResult>& reps, const Vector& theta0, int k) {
  int ok = 0;
  int hit = 0;
  for (const auto& r : reps) {
    if (!r.ok) continue;
    ++ok;
    bool all = true;
    for (Eigen::Index j = 0; j < theta0.size(); ++j) {
      if (theta0[j] == 0.0 && r.iterates[static_cast<std::size_t>(k)][j] != 0.0) all = false;
    }
    hit += all ? 1 : 0;
  }
  return ok == 0 ? 0.0 : static_cast<double>(hit) / ok;
}

Matrix oracle_cov(const std::vector<RepResult>& reps, const Vector& theta0, long n, int k) {
  const auto supp = nonzero_support(theta0);
  const auto a = static_cast<Eigen::Index>(supp.size());
  std::vector<Vector> xs;
  for (const auto& r : reps) {
    if (!r.ok) continue;
    Vector x(a);
    for (Eigen::Index p = 0; p < a; ++p) {
      const int j = supp[static_cast<std::size_t>(p)];
      x[p] = std::sqrt(static_cast<double>(n)) * (r.iterates[static_cast<std::size_t>(k)][j] - theta0[j]);
    }
    xs.push_back(x);
  }
  Matrix cov = Matrix::Zero(a, a);
  if (xs.size() < 2) return cov;
  Vector mean = Vector::Zero(a);
  for (const auto& x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  for (const auto& x : xs) cov += (x - mean) * (x - mean).transpose();
  return cov / static_cast<double>(xs.size() - 1);
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
  return s;
}

nlohmann::json quantiles_json(const Quantiles& q) {
  return {{"q1", json_number(q.q1)}, {"median", json_number(q.median)}, {"q3", json_number(q.q3)}};
}

nlohmann::json slope_json(const SlopeFit& s) {
  nlohmann::json j;
  j["slope"] = json_number(s.slope);
  j["stderr"] = json_number(s.stderr_);
  if (std::isinf(s.slope)) j["exact_convergence"] = true;
  return j;
}

const nlohmann::json& need(const nlohmann::json& j, const std::string& key, const std::string& ctx) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError("missing key '" + ctx + key + "'");
  return j.at(key);
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback, const std::string& ctx) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("key '" + ctx + key + "' has the wrong type");
  }
}

Rational rational_key(const nlohmann::json& j, const std::string& key, const std::string& ctx) {
  try {
    return rational_from_json(j, ctx + key);
  } catch (const DomainError& e) {
    throw ConfigError(std::string("key '") + ctx + key + "': " + e.what());
  }
}

}  // namespace

std::string to_string(InitKind k) {
  switch (k) {
    case InitKind::Oracle: return "oracle";
    case InitKind::DeterministicGrid: return "deterministic";
    case InitKind::StochasticGrid: return "stochastic";
    case InitKind::Pilot: return "pilot";
  }
  return "unknown";
}

InitKind parse_init(const std::string& text) {
  if (text == "oracle") return InitKind::Oracle;
  if (text == "deterministic") return InitKind::DeterministicGrid;
  if (text == "stochastic") return InitKind::StochasticGrid;
  if (text == "pilot") return InitKind::Pilot;
  throw ConfigError("unknown init method '" + text + "' (oracle|deterministic|stochastic|pilot)");
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.replications < 1) throw ConfigError("replications must be at least 1");
  if (cfg.n_grid.size() < 2) throw ConfigError("n_grid needs at least two sample sizes");
  for (std::size_t i = 0; i < cfg.n_grid.size(); ++i) {
    if (cfg.n_grid[i] < 3) throw ConfigError("n_grid entries must be >= 3");
    if (i > 0 && cfg.n_grid[i] <= cfg.n_grid[i - 1]) throw ConfigError("n_grid must be strictly increasing");
  }
  if (cfg.theta0.size() < 1) throw ConfigError("theta0 must be nonempty");
  if (!(cfg.init.psi > Rational(0)) || cfg.init.psi > Rational(1, 2)) throw ConfigError("init psi must lie in (0, 1/2]");
  const bool profile = cfg.engine.regime == rates::Regime::Profile;
  if (profile != (cfg.model == models::ModelKind::CoxCurrentStatus)) {
    throw ConfigError("the profile regime goes with the cox model and the smooth regimes with the others");
  }
  kstep::validate(cfg.engine);
}

const Cell& MonteCarloReport::cell(long n, int k) const {
  for (const auto& c : cells) {
    if (c.n == n && c.k == k) return c;
  }
  throw DomainError("no cell for n=" + std::to_string(n) + ", k=" + std::to_string(k));
}

Vector oracle_initializer(const Vector& theta0, const Rational& psi, long n, std::mt19937_64& rng) {
  if (!(psi > Rational(0)) || psi > Rational(1, 2)) throw DomainError("oracle psi must lie in (0, 1/2]");
  if (n < 1) throw DomainError("sample size must be positive");
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector u(theta0.size());
  double norm = 0.0;
  while (!(norm > 1e-12)) {
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = gauss(rng);
    norm = u.norm();
  }
  return theta0 + std::pow(static_cast<double>(n), -psi.to_double()) * u / norm;
}

SlopeFit fit_rate_slope(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw DomainError("rate slope needs at least two points");
  for (const auto& [n, e] : points) {
    if (!(n > 0.0)) throw DomainError("rate slope needs positive sample sizes");
    if (!(e >= DBL_MIN)) return {-std::numeric_limits<double>::infinity(), kNaN};
  }
  const double m = static_cast<double>(points.size());
  double sx = 0.0, sy = 0.0;
  for (const auto& [n, e] : points) {
    sx += std::log(n);
    sy += std::log(e);
  }
  const double mx = sx / m;
  const double my = sy / m;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [n, e] : points) {
    sxx += (std::log(n) - mx) * (std::log(n) - mx);
    sxy += (std::log(n) - mx) * (std::log(e) - my);
  }
  if (!(sxx > 0.0)) throw DomainError("rate slope needs distinct sample sizes");
  const double slope = sxy / sxx;
  if (points.size() == 2) return {slope, kNaN};
  double rss = 0.0;
  for (const auto& [n, e] : points) {
    const double r = std::log(e) - my - slope * (std::log(n) - mx);
    rss += r * r;
  }
  return {slope, std::sqrt(rss / (m - 2.0) / sxx)};
}

Quantiles quantiles(std::vector<double> v) {
  if (v.empty()) return {kNaN, kNaN, kNaN};
  std::sort(v.begin(), v.end());
  auto at = [&](double p) {
    const double h = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {at(0.25), at(0.5), at(0.75)};
}

std::uint64_t stream_seed(std::uint64_t seed, long rep, long n) {
  return seed ^ splitmix64(splitmix64(static_cast<std::uint64_t>(rep)) ^ static_cast<std::uint64_t>(n));
}

unsigned thread_count() {
  if (const char* env = std::getenv("KSTEP_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

MonteCarloReport run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  MonteCarloReport report;
  report.config = cfg;
  const auto p = plan(cfg.engine, cfg.n_grid.front());
  report.k_max = static_cast<int>(p.steps.size());
  report.predicted_exponents = p.exponents;
  const int k_max = report.k_max;

  const std::size_t reps = static_cast<std::size_t>(cfg.replications);
  const std::size_t tasks = cfg.n_grid.size() * reps;
  std::vector<RepResult> results(tasks);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks; t = next++) {
      const long n = cfg.n_grid[t / reps];
      const long rep = static_cast<long>(t % reps);
      try {
        results[t] = run_one(cfg, n, rep, k_max);
      } catch (const std::exception& e) {
        results[t].ok = false;
        results[t].message = e.what();
      }
    }
  };
  const unsigned nthreads = std::min<unsigned>(thread_count(), static_cast<unsigned>(tasks));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < nthreads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  const auto support = nonzero_support(cfg.theta0);
  const bool has_nulls = support.size() < static_cast<std::size_t>(cfg.theta0.size());
  if (cfg.model == models::ModelKind::PartialLinear) {
    const Matrix sigma = models::ar_covariance(static_cast<int>(cfg.theta0.size()), 0.5);
    const auto a = static_cast<Eigen::Index>(support.size());
    Matrix saa(a, a);
    for (Eigen::Index i = 0; i < a; ++i) {
      for (Eigen::Index j = 0; j < a; ++j) saa(i, j) = sigma(support[static_cast<std::size_t>(i)], support[static_cast<std::size_t>(j)]);
    }
    report.oracle_target = saa.inverse();
  }

  std::vector<std::vector<RepResult>> by_n(cfg.n_grid.size());
  for (std::size_t ni = 0; ni < cfg.n_grid.size(); ++ni) {
    by_n[ni].assign(results.begin() + static_cast<std::ptrdiff_t>(ni * reps),
                    results.begin() + static_cast<std::ptrdiff_t>((ni + 1) * reps));
    const long n = cfg.n_grid[ni];
    PerN pn;
    pn.n = n;
    for (const auto& r : by_n[ni]) {
      if (r.ok) {
        ++pn.succeeded;
        pn.reference_quality = std::max(pn.reference_quality, r.quality);
      } else {
        ++pn.failed;
        if (pn.failure_messages.size() < 8) pn.failure_messages.push_back(r.message);
      }
    }
    if (static_cast<double>(pn.failed) > kFailureLimit * static_cast<double>(reps)) report.failure_rate_ok = false;
    for (int k = 0; k <= k_max; ++k) {
      std::vector<double> er, et;
      for (const auto& r : by_n[ni]) {
        if (!r.ok) continue;
        const Vector& it = r.iterates[static_cast<std::size_t>(k)];
        er.push_back((it - r.reference).norm());
        et.push_back((it - cfg.theta0).norm());
      }
      report.cells.push_back({n, k, quantiles(er), quantiles(et), static_cast<int>(er.size())});
    }
    for (int k = 1; k <= k_max; ++k) {
      if (report.cell(n, k).to_reference.median > report.cell(n, k - 1).to_reference.median + 1e-12) pn.ordered_in_k = false;
    }
    if (has_nulls) pn.zero_recovery = zero_fraction(by_n[ni], cfg.theta0, k_max);
    if (cfg.model == models::ModelKind::PartialLinear) pn.oracle_covariance = oracle_cov(by_n[ni], cfg.theta0, n, k_max);
    report.per_n.push_back(std::move(pn));
  }

  for (int k = 0; k <= k_max; ++k) {
    std::vector<std::pair<double, double>> pr, pt;
    for (long n : cfg.n_grid) {
      const auto& c = report.cell(n, k);
      pr.emplace_back(static_cast<double>(n), c.to_reference.median);
      pt.emplace_back(static_cast<double>(n), c.to_truth.median);
    }
    auto safe = [](const std::vector<std::pair<double, double>>& pts) {
      for (const auto& q : pts) {
        if (std::isnan(q.second)) return SlopeFit{kNaN, kNaN};
      }
      return fit_rate_slope(pts);
    };
    report.slopes_reference.push_back(safe(pr));
    report.slopes_truth.push_back(safe(pt));
  }

  for (const auto& chk : cfg.checks) {
    CheckResult cr;
    cr.check = chk;
    if (chk.k < 0 || chk.k > k_max) {
      cr.pass = false;
      cr.detail = "step index outside 0.." + std::to_string(k_max);
      report.checks.push_back(std::move(cr));
      continue;
    }
    const std::string target = chk.against_truth ? "truth" : "reference";
    if (chk.kind == "slope_at_most") {
      const auto& s = (chk.against_truth ? report.slopes_truth : report.slopes_reference)[static_cast<std::size_t>(chk.k)];
      cr.observed = {s.slope};
      cr.pass = s.slope <= chk.bound;
      cr.detail = "slope of median error to " + target + " at k=" + std::to_string(chk.k) + " is " +
                  format_double(s.slope) + ", bound " + format_double(chk.bound);
    } else if (chk.kind == "scaled_nonincreasing" || chk.kind == "scaled_not_decreasing") {
      const bool down = chk.kind == "scaled_nonincreasing";
      cr.pass = true;
      for (long n : cfg.n_grid) {
        const auto& c = report.cell(n, chk.k);
        const double med = chk.against_truth ? c.to_truth.median : c.to_reference.median;
        cr.observed.push_back(std::max(med * std::pow(static_cast<double>(n), chk.power.to_double()), chk.floor));
      }
      for (std::size_t i = 1; i < cr.observed.size(); ++i) {
        const double prev = cr.observed[i - 1];
        const double cur = cr.observed[i];
        if (down ? !(cur <= (1.0 + chk.slack) * prev) : !(cur >= (1.0 - chk.slack) * prev)) cr.pass = false;
      }
      cr.detail = "median error to " + target + " times n^" + chk.power.str() + " at k=" + std::to_string(chk.k) +
                  ": [" + join(cr.observed) + "], slack " + format_double(chk.slack) +
                  (down ? " (non-increasing)" : " (not decreasing)");
    } else if (chk.kind == "zero_recovery" || chk.kind == "oracle_covariance") {
      std::size_t ni = 0;
      while (ni < cfg.n_grid.size() && cfg.n_grid[ni] != chk.n) ++ni;
      if (ni == cfg.n_grid.size()) {
        cr.pass = false;
        cr.detail = "n=" + std::to_string(chk.n) + " is not in n_grid";
      } else if (chk.kind == "zero_recovery") {
        const double f = zero_fraction(by_n[ni], cfg.theta0, chk.k);
        cr.observed = {f};
        cr.pass = f >= chk.bound;
        cr.detail = "fraction with all null coordinates exactly zero at n=" + std::to_string(chk.n) + ": " +
                    format_double(f) + ", bound " + format_double(chk.bound);
      } else if (report.oracle_target.size() == 0) {
        cr.pass = false;
        cr.detail = "oracle covariance target is only defined for the partial linear model";
      } else {
        const Matrix cov = oracle_cov(by_n[ni], cfg.theta0, chk.n, chk.k);
        const double rel = frobenius_relative(cov, report.oracle_target);
        cr.observed = {rel};
        cr.pass = rel <= chk.bound;
        cr.detail = "Frobenius-relative deviation of the sqrt(n)-scaled covariance at n=" + std::to_string(chk.n) + ": " +
                    format_double(rel) + ", bound " + format_double(chk.bound);
      }
    } else {
      cr.pass = false;
      cr.detail = "unknown check kind '" + chk.kind + "'";
    }
    report.checks.push_back(std::move(cr));
  }

  report.pass = report.failure_rate_ok;
  for (const auto& c : report.checks) report.pass = report.pass && c.pass;
  return report;
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["schema"] = 1;
  j["model"] = models::to_string(cfg.model);
  j["theta0"] = json_vector(cfg.theta0);
  j["n_grid"] = cfg.n_grid;
  j["replications"] = cfg.replications;
  j["seed"] = cfg.seed;
  j["init"] = {{"method", to_string(cfg.init.kind)},
               {"psi", cfg.init.psi.str()},
               {"half_width", cfg.init.half_width},
               {"side_scale", cfg.init.side_scale},
               {"min_card_scale", cfg.init.min_card_scale},
               {"random_offset", cfg.init.random_offset}};
  nlohmann::json e;
  e["regime"] = rates::to_string(cfg.engine.regime);
  e["psi"] = cfg.engine.psi.str();
  e["rate"] = cfg.engine.rate.str();
  if (cfg.engine.k_max) e["k_max"] = *cfg.engine.k_max;
  e["epsilon_stop"] = cfg.engine.epsilon_stop;
  e["hessian_mode"] = to_string(cfg.engine.hessian_mode);
  e["fd_pair"] = {cfg.engine.fd_t1, cfg.engine.fd_t2};
  e["step_constant"] = cfg.engine.step_constant;
  j["engine"] = e;
  j["model_params"] = {{"kernel", {{"bandwidth_constant", cfg.params.kernel.bandwidth_constant},
                                   {"alpha", cfg.params.kernel.alpha.str()}}},
                       {"lambda0", cfg.params.lambda0},
                       {"tau0", cfg.params.tau0},
                       {"gamma", cfg.params.gamma},
                       {"npmle", cfg.params.npmle == models::NpmleSolver::Pava ? "pava" : "icm"}};
  j["checks"] = nlohmann::json::array();
  for (const auto& c : cfg.checks) {
    j["checks"].push_back({{"kind", c.kind}, {"k", c.k}, {"against", c.against_truth ? "truth" : "reference"},
                           {"bound", c.bound}, {"slack", c.slack}, {"power", c.power.str()}, {"n", c.n},
                           {"floor", c.floor}});
  }
  return j;
}

nlohmann::json to_json(const MonteCarloReport& r) {
  nlohmann::json j;
  j["schema"] = r.schema;
  j["config"] = to_json(r.config);
  j["k_max"] = r.k_max;
  j["predicted_exponents"] = nlohmann::json::array();
  for (const auto& e : r.predicted_exponents) j["predicted_exponents"].push_back(e.str());
  j["cells"] = nlohmann::json::array();
  for (const auto& c : r.cells) {
    j["cells"].push_back({{"n", c.n}, {"k", c.k}, {"count", c.count}, {"error_to_reference", quantiles_json(c.to_reference)},
                          {"error_to_truth", quantiles_json(c.to_truth)}});
  }
  j["fitted_slopes"] = nlohmann::json::array();
  for (std::size_t k = 0; k < r.slopes_reference.size(); ++k) {
    nlohmann::json s{{"k", k}, {"to_reference", slope_json(r.slopes_reference[k])}, {"to_truth", slope_json(r.slopes_truth[k])}};
    if (k >= 1 && k <= r.predicted_exponents.size()) {
      const double pred = -r.predicted_exponents[k - 1].to_double();
      const double fit = r.slopes_reference[k].slope;
      s["predicted_slope"] = pred;
      s["predicted_tolerance"] = 0.2;
      s["within_predicted_tolerance"] = std::isfinite(fit) ? std::abs(fit - pred) <= 0.2 : fit < pred;
    }
    j["fitted_slopes"].push_back(std::move(s));
  }
  j["per_n"] = nlohmann::json::array();
  for (const auto& p : r.per_n) {
    nlohmann::json jp{{"n", p.n}, {"succeeded", p.succeeded}, {"failed", p.failed},
                      {"failure_messages", p.failure_messages}, {"reference_quality", json_number(p.reference_quality)},
                      {"median_nonincreasing_in_k", p.ordered_in_k}};
    if (p.zero_recovery >= 0.0) jp["zero_recovery"] = p.zero_recovery;
    if (p.oracle_covariance.size() > 0) jp["oracle_covariance"] = json_matrix(p.oracle_covariance);
    j["per_n"].push_back(std::move(jp));
  }
  if (r.oracle_target.size() > 0) j["oracle_target"] = json_matrix(r.oracle_target);
  j["checks"] = nlohmann::json::array();
  for (const auto& c : r.checks) {
    nlohmann::json jc{{"kind", c.check.kind}, {"k", c.check.k}, {"pass", c.pass}, {"detail", c.detail},
                      {"tolerance", c.check.kind.rfind("scaled", 0) == 0 ? c.check.slack : c.check.bound}};
    jc["observed"] = nlohmann::json::array();
    for (double v : c.observed) jc["observed"].push_back(json_number(v));
    j["checks"].push_back(std::move(jc));
  }
  j["failure_rate_ok"] = r.failure_rate_ok;
  j["failure_rate_limit"] = kFailureLimit;
  j["pass"] = r.pass;
  return j;
}

std::string medians_csv(const MonteCarloReport& r) {
  std::ostringstream os;
  os << "n,k,median_ref,q1_ref,q3_ref,median_truth,q1_truth,q3_truth,count\n";
  for (const auto& c : r.cells) {
    os << c.n << ',' << c.k << ',' << format_double(c.to_reference.median) << ',' << format_double(c.to_reference.q1) << ','
       << format_double(c.to_reference.q3) << ',' << format_double(c.to_truth.median) << ','
       << format_double(c.to_truth.q1) << ',' << format_double(c.to_truth.q3) << ',' << c.count << '\n';
  }
  return os.str();
}

KStepConfig engine_from_json(const nlohmann::json& e) {
  const std::string ctx = "engine.";
  KStepConfig cfg;
  try {
    cfg.regime = rates::parse_regime(need(e, "regime", ctx).get<std::string>());
  } catch (const DomainError& err) {
    throw ConfigError(err.what());
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("key 'engine.regime' must be a string");
  }
  cfg.psi = rational_key(need(e, "psi", ctx), "psi", ctx);
  const char* rate_key = e.contains("rate") ? "rate" : (e.contains("r") ? "r" : "g");
  if (cfg.regime == rates::Regime::SmoothAnalytic || cfg.regime == rates::Regime::Penalized) {
    cfg.rate = e.contains(rate_key) ? rational_key(e.at(rate_key), rate_key, ctx) : Rational(1, 2);
  } else {
    cfg.rate = rational_key(need(e, rate_key, ctx), rate_key, ctx);
  }
  if (e.contains("k_max") && !e.at("k_max").is_null()) cfg.k_max = get_or<int>(e, "k_max", 0, ctx);
  cfg.epsilon_stop = get_or<double>(e, "epsilon_stop", 0.0, ctx);
  const auto mode = get_or<std::string>(e, "hessian_mode", cfg.regime == rates::Regime::Profile ? "numeric" : "analytic", ctx);
  try {
    cfg.hessian_mode = parse_info_construction(mode);
  } catch (const DomainError& err) {
    throw ConfigError(err.what());
  }
  if (e.contains("fd_pair")) {
    const auto& fp = e.at("fd_pair");
    if (!fp.is_array() || fp.size() != 2) throw ConfigError("key 'engine.fd_pair' must be [t1, t2]");
    cfg.fd_t1 = fp[0].get<double>();
    cfg.fd_t2 = fp[1].get<double>();
  }
  cfg.step_constant = get_or<double>(e, "step_constant", 1.0, ctx);
  return cfg;
}

ModelParams params_from_json(const nlohmann::json& m) {
  const std::string ctx = "model_params.";
  ModelParams p;
  if (m.is_null()) return p;
  if (m.contains("kernel")) {
    const auto& k = m.at("kernel");
    p.kernel.bandwidth_constant = get_or<double>(k, "bandwidth_constant", 1.0, ctx + "kernel.");
    if (k.contains("alpha")) p.kernel.alpha = rational_key(k.at("alpha"), "alpha", ctx + "kernel.");
  }
  p.lambda0 = get_or<double>(m, "lambda0", p.lambda0, ctx);
  p.tau0 = get_or<double>(m, "tau0", p.tau0, ctx);
  p.gamma = get_or<double>(m, "gamma", p.gamma, ctx);
  const auto solver = get_or<std::string>(m, "npmle", "pava", ctx);
  if (solver == "pava") {
    p.npmle = models::NpmleSolver::Pava;
  } else if (solver == "icm") {
    p.npmle = models::NpmleSolver::Icm;
  } else {
    throw ConfigError("key 'model_params.npmle' must be pava or icm");
  }
  return p;
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (j.contains("schema") && j.at("schema") != 1) throw ConfigError("unsupported config schema (expected 1)");
  ExperimentConfig cfg;
  try {
    cfg.model = models::parse_model(need(j, "model", "").get<std::string>());
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  try {
    cfg.theta0 = vector_from_json(need(j, "theta0", ""), "theta0");
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  const auto& grid = need(j, "n_grid", "");
  if (!grid.is_array()) throw ConfigError("key 'n_grid' must be an array of integers");
  for (const auto& v : grid) cfg.n_grid.push_back(v.get<long>());
  cfg.replications = get_or<int>(j, "replications", 200, "");
  cfg.seed = get_or<std::uint64_t>(j, "seed", 1, "");
  const auto& init = need(j, "init", "");
  cfg.init.kind = parse_init(need(init, "method", "init.").get<std::string>());
  if (init.contains("psi")) cfg.init.psi = rational_key(init.at("psi"), "psi", "init.");
  cfg.init.half_width = get_or<double>(init, "half_width", 1.0, "init.");
  cfg.init.side_scale = get_or<double>(init, "side_scale", 1.0, "init.");
  cfg.init.min_card_scale = get_or<double>(init, "min_card_scale", 1.0, "init.");
  cfg.init.random_offset = get_or<bool>(init, "random_offset", true, "init.");
  cfg.engine = engine_from_json(need(j, "engine", ""));
  cfg.params = params_from_json(j.contains("model_params") ? j.at("model_params") : nlohmann::json());
  if (j.contains("checks")) {
    for (const auto& c : j.at("checks")) {
      Check chk;
      chk.kind = need(c, "kind", "checks[].").get<std::string>();
      chk.k = get_or<int>(c, "k", 0, "checks[].");
      chk.against_truth = get_or<std::string>(c, "against", "reference", "checks[].") == "truth";
      chk.bound = get_or<double>(c, "bound", 0.0, "checks[].");
      chk.slack = get_or<double>(c, "slack", 0.2, "checks[].");
      if (c.contains("power")) chk.power = rational_key(c.at("power"), "power", "checks[].");
      chk.n = get_or<long>(c, "n", 0, "checks[].");
      chk.floor = get_or<double>(c, "floor", 0.0, "checks[].");
      cfg.checks.push_back(chk);
    }
  }
  validate(cfg);
  return cfg;
}

}  // namespace kstep::sim
