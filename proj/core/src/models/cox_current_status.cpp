#include "kstep/models/cox_current_status.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kstep/errors.hpp"

namespace kstep::models {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Slope of log(1 - exp(-x u)) in x, and minus its curvature.
double event_slope(double x, double u) { return u / std::expm1(x * u); }
double event_curv(double x, double u) {
  const double a = x * u;
  return u * u / (std::expm1(a) * -std::expm1(-a));
}

struct Block {
  long lo;  // subject range [lo, hi) in sorted order
  long hi;
  long knot_lo;  // knot range [knot_lo, knot_hi)
  long knot_hi;
  double value;
};

}  // namespace

double MonotoneHazard::operator()(double y) const {
  const auto* b = knots.data();
  const auto* e = b + knots.size();
  const auto* it = std::upper_bound(b, e, y);
  if (it == b) return 0.0;
  return values[it - b - 1];
}

double cs_subject_loglik(int delta, double lambda, double u) {
  const double x = lambda * u;
  if (delta == 1) return std::log(-std::expm1(-x));
  return -x;
}

CurrentStatusData::CurrentStatusData(const CSDataset& data) {
  validate(data);
  const long n = data.size();
  std::vector<long> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0L);
  std::stable_sort(order.begin(), order.end(), [&](long a, long b) { return data.y[a] < data.y[b]; });
  y_.resize(n);
  delta_.resize(static_cast<std::size_t>(n));
  z_.resize(n, data.z.cols());
  for (long i = 0; i < n; ++i) {
    const long src = order[static_cast<std::size_t>(i)];
    y_[i] = data.y[src];
    delta_[static_cast<std::size_t>(i)] = data.delta[static_cast<std::size_t>(src)];
    z_.row(i) = data.z.row(src);
  }
  for (long i = 0; i < n; ++i) {
    if (i == 0 || y_[i] != y_[i - 1]) group_start_.push_back(i);
  }
  group_start_.push_back(n);
  const int first = delta_.front();
  all_equal_delta_ = std::all_of(delta_.begin(), delta_.end(), [first](int v) { return v == first; });
}

NpmleResult CurrentStatusData::npmle(const Vector& theta, NpmleSolver solver) const {
  if (theta.size() != z_.cols()) throw DomainError("theta has the wrong dimension for the covariates");
  const Vector u = (z_ * theta).array().exp().matrix();
  if (!u.allFinite() || (u.array() <= 0.0).any()) throw EvaluationError("covariate effect overflowed at this theta");
  return solver == NpmleSolver::Pava ? pava(u) : icm(u);
}

MonotoneHazard CurrentStatusData::hazard_from(const std::vector<double>& knot_values) const {
  const auto m = static_cast<Eigen::Index>(knot_values.size());
  MonotoneHazard h{Vector(m), Vector(m)};
  for (Eigen::Index j = 0; j < m; ++j) {
    h.knots[j] = y_[group_start_[static_cast<std::size_t>(j)]];
    h.values[j] = knot_values[static_cast<std::size_t>(j)];
  }
  return h;
}

NpmleResult CurrentStatusData::pava(const Vector& u) const {
  // Maximizer of the pooled block log-likelihood over a single level.
  auto solve = [&](long lo, long hi) {
    long n1 = 0;
    double d0 = 0.0;
    double umin = kInf;
    double umax = 0.0;
    for (long i = lo; i < hi; ++i) {
      if (delta_[static_cast<std::size_t>(i)] == 1) {
        ++n1;
        umin = std::min(umin, u[i]);
        umax = std::max(umax, u[i]);
      } else {
        d0 += u[i];
      }
    }
    if (n1 == 0) return 0.0;
    if (d0 == 0.0) return kInf;
    double a = std::log1p(static_cast<double>(n1) * umax / d0) / umax;
    double b = std::log1p(static_cast<double>(n1) * umin / d0) / umin;
    if (!(b - a > 1e-15 * b)) return a;
    auto score = [&](double x, double* curv) {
      double s = -d0;
      double c = 0.0;
      for (long i = lo; i < hi; ++i) {
        if (delta_[static_cast<std::size_t>(i)] != 1) continue;
        s += event_slope(x, u[i]);
        c += event_curv(x, u[i]);
      }
      *curv = c;
      return s;
    };
    double x = a;
    for (int it = 0; it < 200; ++it) {
      double curv = 0.0;
      const double s = score(x, &curv);
      if (s > 0.0) a = x; else b = x;
      if (s == 0.0) return x;
      double next = x + s / curv;
      if (!(next > a && next < b)) next = 0.5 * (a + b);
      if (std::abs(next - x) <= 1e-15 * x || b - a <= 1e-15 * b) return next;
      x = next;
    }
    return x;
  };

  std::vector<Block> stack;
  const long m = static_cast<long>(group_start_.size()) - 1;
  for (long j = 0; j < m; ++j) {
    const long lo = group_start_[static_cast<std::size_t>(j)];
    const long hi = group_start_[static_cast<std::size_t>(j + 1)];
    stack.push_back({lo, hi, j, j + 1, solve(lo, hi)});
    while (stack.size() >= 2 && stack[stack.size() - 2].value >= stack.back().value) {
      Block top = stack.back();
      stack.pop_back();
      Block& prev = stack.back();
      // Equal levels pool without changing the solution; skip the re-solve.
      if (prev.value == top.value) {
        prev.hi = top.hi;
        prev.knot_hi = top.knot_hi;
        continue;
      }
      prev.hi = top.hi;
      prev.knot_hi = top.knot_hi;
      prev.value = solve(prev.lo, prev.hi);
    }
  }

  NpmleResult out;
  std::vector<double> knot_values(static_cast<std::size_t>(m));
  double ll = 0.0;
  bool infinite = false;
  for (const auto& b : stack) {
    if (std::isinf(b.value)) infinite = true;
    for (long j = b.knot_lo; j < b.knot_hi; ++j) knot_values[static_cast<std::size_t>(j)] = b.value;
    for (long i = b.lo; i < b.hi; ++i) ll += cs_subject_loglik(delta_[static_cast<std::size_t>(i)], b.value, u[i]);
  }
  out.hazard = hazard_from(knot_values);
  out.loglik = ll;
  out.boundary = infinite || all_equal_delta_;
  out.iterations = 1;
  return out;
}

NpmleResult CurrentStatusData::icm(const Vector& u) const {
  const long m = static_cast<long>(group_start_.size()) - 1;
  const auto mm = static_cast<std::size_t>(m);
  if (all_equal_delta_) return pava(u);

  auto loglik = [&](const std::vector<double>& lam) {
    double ll = 0.0;
    for (long j = 0; j < m; ++j) {
      for (long i = group_start_[static_cast<std::size_t>(j)]; i < group_start_[static_cast<std::size_t>(j + 1)]; ++i) {
        ll += cs_subject_loglik(delta_[static_cast<std::size_t>(i)], lam[static_cast<std::size_t>(j)], u[i]);
      }
    }
    return std::isnan(ll) ? -kInf : ll;
  };

  std::vector<double> lam(mm);
  for (long j = 0; j < m; ++j) lam[static_cast<std::size_t>(j)] = static_cast<double>(j + 1) / static_cast<double>(m);
  double ll = loglik(lam);
  std::vector<double> grad(mm), weight(mm), target(mm), proj(mm), trial(mm);
  NpmleResult out;
  out.converged = false;
  int it = 0;
  for (; it < 20000; ++it) {
    double wsum = 0.0;
    for (long j = 0; j < m; ++j) {
      double g = 0.0;
      double w = 0.0;
      const double x = lam[static_cast<std::size_t>(j)];
      for (long i = group_start_[static_cast<std::size_t>(j)]; i < group_start_[static_cast<std::size_t>(j + 1)]; ++i) {
        if (delta_[static_cast<std::size_t>(i)] == 1) {
          g += event_slope(x, u[i]);
          w += event_curv(x, u[i]);
        } else {
          g -= u[i];
        }
      }
      grad[static_cast<std::size_t>(j)] = g;
      weight[static_cast<std::size_t>(j)] = w;
      wsum += w;
    }
    const double floor = 1e-8 * (wsum / static_cast<double>(m) + 1.0);
    for (std::size_t j = 0; j < mm; ++j) {
      weight[j] = std::max(weight[j], floor);
      target[j] = lam[j] + grad[j] / weight[j];
    }
    // Weighted isotonic regression of target, then clamp at zero.
    std::vector<double> lv, lw;
    std::vector<long> lc;
    for (std::size_t j = 0; j < mm; ++j) {
      lv.push_back(target[j]);
      lw.push_back(weight[j]);
      lc.push_back(1);
      while (lv.size() >= 2 && lv[lv.size() - 2] > lv.back()) {
        const double w = lw[lw.size() - 2] + lw.back();
        const double v = (lv[lv.size() - 2] * lw[lw.size() - 2] + lv.back() * lw.back()) / w;
        const long c = lc[lc.size() - 2] + lc.back();
        lv.pop_back(), lw.pop_back(), lc.pop_back();
        lv.back() = v, lw.back() = w, lc.back() = c;
      }
    }
    std::size_t pos = 0;
    for (std::size_t b = 0; b < lv.size(); ++b) {
      for (long c = 0; c < lc[b]; ++c) proj[pos++] = std::max(lv[b], 0.0);
    }
    double step = 1.0;
    double best = -kInf;
    for (int h = 0; h < 60; ++h, step *= 0.5) {
      for (std::size_t j = 0; j < mm; ++j) trial[j] = lam[j] + step * (proj[j] - lam[j]);
      best = loglik(trial);
      if (best >= ll) break;
    }
    if (!(best >= ll)) {
      out.converged = true;
      break;
    }
    const double gain = best - ll;
    lam = trial;
    ll = best;
    if (gain < 1e-10) {
      out.converged = true;
      break;
    }
  }
  out.hazard = hazard_from(lam);
  out.loglik = ll;
  out.boundary = false;
  out.iterations = it + 1;
  return out;
}

NpmleResult cox_cs_npmle(const CSDataset& data, const Vector& theta, NpmleSolver solver) {
  return CurrentStatusData(data).npmle(theta, solver);
}

CoxCurrentStatusCriterion::CoxCurrentStatusCriterion(const CSDataset& data, NpmleSolver solver)
    : prepared_(std::make_shared<CurrentStatusData>(data)), solver_(solver) {}

double CoxCurrentStatusCriterion::evaluate(const Vector& theta) const { return prepared_->npmle(theta, solver_).loglik; }

}  // namespace kstep::models
