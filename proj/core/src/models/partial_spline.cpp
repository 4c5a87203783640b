#include "kstep/models/partial_spline.hpp"

#include <cmath>
#include <vector>

#include "kstep/errors.hpp"
#include "kstep/newton_engine.hpp"

namespace kstep::models {
namespace {

double soft(double x, double k) {
  if (x > k) return x - k;
  if (x < -k) return x + k;
  return 0.0;
}

double sign(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

}  // namespace

SplineSmoother::SplineSmoother(const Vector& z, double lambda) : n_(static_cast<long>(z.size())), lambda_(lambda) {
  if (n_ < 3) throw DomainError("smoother needs at least 3 points");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("lambda must be positive and finite");
  for (long i = 1; i < n_; ++i) {
    if (!(z[i] > z[i - 1])) throw DomainError("smoother knots must be strictly increasing (merge duplicates)");
  }
  alpha_ = static_cast<double>(n_) * lambda * lambda;
  const long m = n_ - 2;
  std::vector<double> h(static_cast<std::size_t>(n_ - 1));
  for (long i = 0; i + 1 < n_; ++i) h[static_cast<std::size_t>(i)] = z[i + 1] - z[i];
  std::vector<Eigen::Triplet<double>> qt, rt;
  for (long c = 0; c < m; ++c) {
    const double h0 = h[static_cast<std::size_t>(c)];
    const double h1 = h[static_cast<std::size_t>(c + 1)];
    qt.emplace_back(c, c, 1.0 / h0);
    qt.emplace_back(c + 1, c, -1.0 / h0 - 1.0 / h1);
    qt.emplace_back(c + 2, c, 1.0 / h1);
    rt.emplace_back(c, c, (h0 + h1) / 3.0);
    if (c + 1 < m) {
      rt.emplace_back(c, c + 1, h1 / 6.0);
      rt.emplace_back(c + 1, c, h1 / 6.0);
    }
  }
  q_.resize(n_, m);
  q_.setFromTriplets(qt.begin(), qt.end());
  Eigen::SparseMatrix<double> r(m, m);
  r.setFromTriplets(rt.begin(), rt.end());
  Eigen::SparseMatrix<double> sys = r + alpha_ * Eigen::SparseMatrix<double>(q_.transpose() * q_);
  solver_.compute(sys);
  if (solver_.info() != Eigen::Success) throw NumericalError("smoother system factorization failed");
}

Vector SplineSmoother::residual(const Vector& u) const {
  const Vector gamma = solver_.solve(q_.transpose() * u);
  return alpha_ * (q_ * gamma);
}

Matrix SplineSmoother::residual(const Matrix& u) const {
  const Matrix gamma = solver_.solve(Matrix(q_.transpose() * u));
  return alpha_ * (q_ * gamma);
}

Vector SplineSmoother::apply(const Vector& u) const { return u - residual(u); }

Matrix SplineSmoother::dense() const {
  const Matrix id = Matrix::Identity(n_, n_);
  Matrix a = id - residual(id);
  return 0.5 * (a + a.transpose());
}

SmootherMatrix smoother_matrix(const Vector& z, double lambda) { return {SplineSmoother(z, lambda).dense(), lambda}; }

PenaltyConfig scaled_penalty(long n, double lambda0, double tau0, const Vector& theta_tilde, double gamma) {
  const double scale = std::pow(static_cast<double>(n), -0.4);
  return {lambda0 * scale, tau0 * scale, gamma, theta_tilde};
}

PartialSplineProblem::PartialSplineProblem(const PLMDataset& data, double lambda) : n_(data.size()) {
  validate(data);
  const SplineSmoother s(data.z, lambda);
  const Matrix rw = s.residual(data.w);
  const Vector ry = s.residual(data.y);
  g_ = data.w.transpose() * rw;
  g_ = 0.5 * (g_ + g_.transpose());
  b_ = rw.transpose() * data.y;
  base_ = data.y.dot(ry);
}

Vector PartialSplineProblem::unpenalized() const {
  const double cond = symmetric_condition(g_);
  if (!(cond <= kSingularCondition)) {
    throw NumericalError("partial spline design W'(I-A)W is singular (condition " + std::to_string(cond) + ")");
  }
  return g_.ldlt().solve(b_);
}

Vector PartialSplineProblem::weights(const PenaltyConfig& cfg) const {
  const auto d = b_.size();
  if (cfg.tau == 0.0) return Vector::Zero(d);
  if (!(cfg.tau > 0.0)) throw DomainError("tau must be nonnegative");
  if (!(cfg.gamma > 0.0)) throw DomainError("gamma must be positive");
  if (cfg.theta_tilde.size() != d) throw DomainError("theta_tilde has the wrong dimension");
  Vector w(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    if (cfg.theta_tilde[j] == 0.0) throw DomainError("theta_tilde component " + std::to_string(j) + " is zero");
    w[j] = std::pow(std::abs(cfg.theta_tilde[j]), -cfg.gamma);
  }
  return w;
}

double PartialSplineProblem::objective(const PenaltyConfig& cfg, const Vector& theta) const {
  const Vector w = weights(cfg);
  const double quad = base_ - 2.0 * b_.dot(theta) + theta.dot(g_ * theta);
  return quad + static_cast<double>(n_) * cfg.tau * cfg.tau * w.dot(theta.cwiseAbs());
}

Vector PartialSplineProblem::one_step_literal(const PenaltyConfig& cfg, const Vector& theta0) const {
  const Vector w = weights(cfg);
  const double n = static_cast<double>(n_);
  Vector delta(w.size());
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    if (cfg.tau > 0.0 && theta0[j] == 0.0) throw DomainError("one-step update needs nonzero initial components");
    delta[j] = sign(theta0[j]) * w[j];
  }
  const Matrix info = g_ / n;
  const double cond = symmetric_condition(info);
  if (!(cond <= kSingularCondition)) throw NumericalError("singular design in one-step update");
  const Vector score = (b_ - g_ * theta0) / n - 0.5 * cfg.tau * cfg.tau * delta;
  return theta0 + info.ldlt().solve(score);
}

Vector PartialSplineProblem::restricted_solve(const std::vector<int>& support, const Vector& rhs) const {
  const auto k = static_cast<Eigen::Index>(support.size());
  Vector out = Vector::Zero(b_.size());
  if (k == 0) return out;
  Matrix ga(k, k);
  Vector ra(k);
  for (Eigen::Index p = 0; p < k; ++p) {
    ra[p] = rhs[support[static_cast<std::size_t>(p)]];
    for (Eigen::Index q = 0; q < k; ++q) ga(p, q) = g_(support[static_cast<std::size_t>(p)], support[static_cast<std::size_t>(q)]);
  }
  const Vector sol = ga.ldlt().solve(ra);
  for (Eigen::Index p = 0; p < k; ++p) out[support[static_cast<std::size_t>(p)]] = sol[p];
  return out;
}

Vector PartialSplineProblem::one_step_sparse(const PenaltyConfig& cfg, const Vector& theta0) const {
  one_step_literal(cfg, theta0);  // input and singularity checks
  // Threshold on the score part of the update.
  const Vector step = theta0 + g_.ldlt().solve(b_ - g_ * theta0);
  const Vector w = weights(cfg);
  const double n = static_cast<double>(n_);
  const double cut = cfg.tau * cfg.tau * std::sqrt(n);
  std::vector<int> support;
  for (Eigen::Index j = 0; j < step.size(); ++j) {
    if (!(std::abs(step[j]) < cut * w[j])) support.push_back(static_cast<int>(j));
  }
  Vector rhs = b_;
  for (Eigen::Index j = 0; j < rhs.size(); ++j) rhs[j] -= 0.5 * n * cfg.tau * cfg.tau * sign(theta0[j]) * w[j];
  return restricted_solve(support, rhs);
}

Vector PartialSplineProblem::full_fit(const PenaltyConfig& cfg, int* sweeps) const {
  const Vector w = weights(cfg);
  const double n = static_cast<double>(n_);
  const Vector kappa = 0.5 * n * cfg.tau * cfg.tau * w;
  Vector theta = unpenalized();
  if (cfg.tau == 0.0) {
    if (sweeps) *sweeps = 0;
    return theta;
  }
  const auto d = theta.size();
  int sweep = 0;
  for (;; ++sweep) {
    if (sweep >= 100000) throw NumericalError("coordinate descent did not converge in 1e5 sweeps");
    double change = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double partial = b_[j] - g_.row(j).dot(theta) + g_(j, j) * theta[j];
      const double next = soft(partial, kappa[j]) / g_(j, j);
      change = std::max(change, std::abs(next - theta[j]));
      theta[j] = next;
    }
    if (change < 1e-10) break;
  }
  if (sweeps) *sweeps = sweep + 1;
  // Polish on the active set; keep the result only when it satisfies the optimality conditions.
  std::vector<int> support;
  Vector rhs = b_;
  for (Eigen::Index j = 0; j < d; ++j) {
    if (theta[j] != 0.0) {
      support.push_back(static_cast<int>(j));
      rhs[j] -= kappa[j] * sign(theta[j]);
    }
  }
  const Vector polished = restricted_solve(support, rhs);
  const Vector grad = b_ - g_ * polished;
  for (Eigen::Index j = 0; j < d; ++j) {
    if (theta[j] != 0.0) {
      if (sign(polished[j]) != sign(theta[j])) return theta;
    } else if (std::abs(grad[j]) > kappa[j] * (1.0 + 1e-12) + 1e-12 * std::abs(b_[j])) {
      return theta;
    }
  }
  return polished;
}

Vector partial_spline_fit(const PLMDataset& data, double lambda) { return PartialSplineProblem(data, lambda).unpenalized(); }

double double_penalty_objective(const PLMDataset& data, const PenaltyConfig& cfg, const Vector& theta) {
  return PartialSplineProblem(data, cfg.lambda).objective(cfg, theta);
}

Vector one_step_sparse(const PLMDataset& data, const PenaltyConfig& cfg, const Vector& theta0) {
  return PartialSplineProblem(data, cfg.lambda).one_step_sparse(cfg, theta0);
}

Vector full_sparse_fit(const PLMDataset& data, const PenaltyConfig& cfg) {
  return PartialSplineProblem(data, cfg.lambda).full_fit(cfg);
}

PartialSplineCriterion::PartialSplineCriterion(const PLMDataset& data, PenaltyConfig cfg)
    : PartialSplineCriterion(std::make_shared<PartialSplineProblem>(data, cfg.lambda), std::move(cfg)) {}

PartialSplineCriterion::PartialSplineCriterion(std::shared_ptr<const PartialSplineProblem> problem, PenaltyConfig cfg)
    : problem_(std::move(problem)), cfg_(std::move(cfg)) {
  weights_ = problem_->weights(cfg_);
}

double PartialSplineCriterion::evaluate(const Vector& theta) const { return -0.5 * problem_->objective(cfg_, theta); }

Vector PartialSplineCriterion::gradient(const Vector& theta) const {
  const double n = static_cast<double>(problem_->size());
  Vector s(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) s[j] = sign(theta[j]) * weights_[j];
  return problem_->cross() - problem_->gram() * theta - 0.5 * n * cfg_.tau * cfg_.tau * s;
}

Matrix PartialSplineCriterion::hessian(const Vector&) const { return -problem_->gram(); }

}  // namespace kstep::models
