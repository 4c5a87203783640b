#include "kstep/criterion.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "kstep/errors.hpp"

namespace kstep {
namespace {

double eval_at(const ProfiledCriterion& c, const Vector& theta, std::optional<int> coordinate) {
  double v = 0.0;
  try {
    v = c.evaluate(theta);
  } catch (const EvaluationError&) {
    throw;
  } catch (const std::exception& e) {
    throw EvaluationError(std::string("criterion evaluation failed: ") + e.what(), coordinate);
  }
  if (std::isnan(v)) throw EvaluationError("criterion returned NaN", coordinate);
  return v;
}

void require_positive(double step, const char* name) {
  if (!(step > 0.0) || !std::isfinite(step)) throw DomainError(std::string(name) + " must be positive and finite");
}

}  // namespace

Box Box::unbounded(int d) {
  const double inf = std::numeric_limits<double>::infinity();
  return {Vector::Constant(d, -inf), Vector::Constant(d, inf)};
}

bool Box::contains(const Vector& theta) const {
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (theta[i] < lower[i] || theta[i] > upper[i]) return false;
  }
  return true;
}

Vector ProfiledCriterion::gradient(const Vector&) const {
  throw CapabilityError("criterion does not provide an analytic gradient");
}

Matrix ProfiledCriterion::hessian(const Vector&) const {
  throw CapabilityError("criterion does not provide an analytic hessian");
}

QuadraticCriterion::QuadraticCriterion(long n, Matrix m, Vector a, double c)
    : n_(n), m_(0.5 * (m + m.transpose())), a_(std::move(a)), c_(c) {
  if (m_.rows() != a_.size() || m_.cols() != a_.size()) throw DomainError("quadratic criterion: dimension mismatch");
}

double QuadraticCriterion::evaluate(const Vector& theta) const {
  return static_cast<double>(n_) * (a_.dot(theta) - 0.5 * theta.dot(m_ * theta)) + c_;
}

Vector QuadraticCriterion::gradient(const Vector& theta) const { return static_cast<double>(n_) * (a_ - m_ * theta); }

Matrix QuadraticCriterion::hessian(const Vector&) const { return -static_cast<double>(n_) * m_; }

Vector QuadraticCriterion::maximizer() const { return m_.ldlt().solve(a_); }

std::string to_string(InfoConstruction c) {
  switch (c) {
    case InfoConstruction::NumericSecondDiff: return "numeric";
    case InfoConstruction::AnalyticHessian: return "analytic";
    case InfoConstruction::GradientFD: return "gradient-fd";
  }
  return "unknown";
}

InfoConstruction parse_info_construction(const std::string& text) {
  if (text == "numeric") return InfoConstruction::NumericSecondDiff;
  if (text == "analytic") return InfoConstruction::AnalyticHessian;
  if (text == "gradient-fd") return InfoConstruction::GradientFD;
  throw DomainError("unknown hessian mode '" + text + "' (numeric|analytic|gradient-fd)");
}

double symmetric_condition(const Matrix& m) {
  if (m.size() == 0) return 1.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  const Vector ev = es.eigenvalues().cwiseAbs();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (!std::isfinite(hi)) return std::numeric_limits<double>::infinity();
  if (lo == 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

ScoreEstimate numeric_score(const ProfiledCriterion& c, const Vector& theta, double s_n,
                            std::optional<double> value_at_theta) {
  require_positive(s_n, "s_n");
  const int d = c.dimension();
  const double n = static_cast<double>(c.sample_size());
  const Box box = c.parameter_box();
  const double base = value_at_theta ? *value_at_theta : eval_at(c, theta, std::nullopt);
  ScoreEstimate out{Vector(d), s_n};
  for (int i = 0; i < d; ++i) {
    Vector probe = theta;
    double h = s_n;
    probe[i] += h;
    if (!box.contains(probe)) {
      h = -s_n;
      probe[i] = theta[i] + h;
    }
    out.vector[i] = (eval_at(c, probe, i) - base) / (n * h);
  }
  return out;
}

InfoEstimate numeric_info(const ProfiledCriterion& c, const Vector& theta, double t_n,
                          std::optional<double> value_at_theta) {
  require_positive(t_n, "t_n");
  const int d = c.dimension();
  const double n = static_cast<double>(c.sample_size());
  const Box box = c.parameter_box();
  const double base = value_at_theta ? *value_at_theta : eval_at(c, theta, std::nullopt);

  // Per-coordinate direction: flip when theta_i + 2t leaves the box.
  std::vector<double> h(d, t_n);
  for (int i = 0; i < d; ++i) {
    Vector probe = theta;
    probe[i] += 2.0 * t_n;
    if (!box.contains(probe)) h[i] = -t_n;
  }
  std::vector<double> single(d);
  for (int i = 0; i < d; ++i) {
    Vector probe = theta;
    probe[i] += h[i];
    single[i] = eval_at(c, probe, i);
  }
  InfoEstimate out;
  out.matrix.resize(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      Vector probe = theta;
      probe[i] += h[i];
      probe[j] += h[j];
      const double both = eval_at(c, probe, j);
      const double v = -(both + base - single[i] - single[j]) / (n * h[i] * h[j]);
      out.matrix(i, j) = v;
      out.matrix(j, i) = v;
    }
  }
  out.step_used = t_n;
  out.construction = InfoConstruction::NumericSecondDiff;
  out.condition = symmetric_condition(out.matrix);
  return out;
}

InfoEstimate gradient_fd_info(const ProfiledCriterion& c, const Vector& theta, double t1, double t2) {
  if (!c.has_gradient()) throw CapabilityError("gradient-difference information needs an analytic gradient");
  if (!(t1 < t2)) throw DomainError("gradient-difference information needs t1 < t2");
  const int d = c.dimension();
  const double n = static_cast<double>(c.sample_size());
  const double root = 1.0 / std::sqrt(n);
  Matrix raw(d, d);
  for (int j = 0; j < d; ++j) {
    Vector lo = theta;
    Vector hi = theta;
    lo[j] += root * t1;
    hi[j] += root * t2;
    raw.col(j) = -root * (c.gradient(hi) - c.gradient(lo)) / (t2 - t1);
  }
  InfoEstimate out;
  out.matrix = 0.5 * (raw + raw.transpose());
  out.step_used = root;
  out.fd_pair = std::make_pair(t1, t2);
  out.construction = InfoConstruction::GradientFD;
  out.condition = symmetric_condition(out.matrix);
  return out;
}

InfoEstimate analytic_info(const ProfiledCriterion& c, const Vector& theta) {
  if (!c.has_hessian()) throw CapabilityError("analytic information needs an analytic hessian");
  const double n = static_cast<double>(c.sample_size());
  const Matrix h = c.hessian(theta);
  InfoEstimate out;
  out.matrix = -0.5 * (h + h.transpose()) / n;
  out.construction = InfoConstruction::AnalyticHessian;
  out.condition = symmetric_condition(out.matrix);
  return out;
}

}  // namespace kstep
