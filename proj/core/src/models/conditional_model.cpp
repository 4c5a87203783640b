#include "kstep/models/conditional_model.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "kstep/errors.hpp"

namespace kstep::models {
namespace {

Matrix kernel_weights(const Vector& z, double b) {
  const auto n = z.size();
  Matrix a(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double u = (z[i] - z[j]) / b;
      a(i, j) = std::exp(-0.5 * u * u);
    }
    a.row(i) /= a.row(i).sum();
  }
  return a;
}

// Row i of a stacked n x (d*d) array as a d x d matrix.
Matrix unpack_row(const Matrix& stacked, Eigen::Index i, Eigen::Index d) {
  Matrix m(d, d);
  for (Eigen::Index p = 0; p < d; ++p) {
    for (Eigen::Index q = 0; q < d; ++q) m(p, q) = stacked(i, p + q * d);
  }
  return m;
}

}  // namespace

double KernelSpec::bandwidth(long n) const {
  if (!(bandwidth_constant > 0.0)) throw DomainError("bandwidth constant must be positive");
  return bandwidth_constant * std::pow(static_cast<double>(n), -alpha.to_double());
}

double gaussian_kernel(double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); }

double cem_nuisance(const CEMDataset& data, const KernelSpec& spec, const Vector& theta, double z) {
  validate(data);
  if (!std::isfinite(z)) throw DomainError("nuisance point must be finite");
  if (theta.size() != data.w.cols()) throw DomainError("theta has the wrong dimension");
  const long n = data.size();
  const double b = spec.bandwidth(n);
  // Shift exponents by the nearest point so the weights cannot all underflow.
  double umin = std::numeric_limits<double>::infinity();
  for (long j = 0; j < n; ++j) umin = std::min(umin, std::abs(z - data.z[j]) / b);
  double num = 0.0;
  double den = 0.0;
  for (long j = 0; j < n; ++j) {
    const double u = std::abs(z - data.z[j]) / b;
    const double k = std::exp(-0.5 * (u * u - umin * umin));
    const double r = data.y[j] - data.w.row(j).dot(theta);
    const double psi = data.variant == CemVariant::ConditionalNormal ? r * r
                                                                      : data.y[j] * std::exp(-data.w.row(j).dot(theta));
    num += k * psi;
    den += k;
  }
  if (!(den > 0.0)) throw DomainError("no kernel mass at z=" + std::to_string(z));
  const double mean = num / den;
  if (data.variant == CemVariant::ConditionalNormal) return mean;
  return std::log(mean);
}

CemCriterion::CemCriterion(const CEMDataset& data, const KernelSpec& spec)
    : variant_(data.variant), y_(data.y), w_(data.w) {
  validate(data);
  const long n = data.size();
  const auto d = w_.cols();
  Matrix a = kernel_weights(data.z, spec.bandwidth(n));
  if (variant_ == CemVariant::ConditionalNormal) {
    c0_ = a * y_.cwiseProduct(y_);
    c1_ = a * (w_.array().colwise() * y_.array()).matrix();
    Matrix ww(n, d * d);
    for (long j = 0; j < n; ++j) {
      for (Eigen::Index p = 0; p < d; ++p) {
        for (Eigen::Index q = 0; q < d; ++q) ww(j, p + q * d) = w_(j, p) * w_(j, q);
      }
    }
    c2_ = a * ww;
  } else {
    a_ = std::move(a);
  }
}

CemCriterion::Derivs CemCriterion::compute(const Vector& theta, int order) const {
  if (theta.size() != w_.cols()) throw DomainError("theta has the wrong dimension");
  return variant_ == CemVariant::ConditionalNormal ? normal(theta, order) : exponential(theta, order);
}

CemCriterion::Derivs CemCriterion::normal(const Vector& theta, int order) const {
  const long n = sample_size();
  const auto d = w_.cols();
  Derivs out;
  out.grad = Vector::Zero(d);
  out.hess = Matrix::Zero(d, d);
  long clamped = 0;
  Vector g(d);
  Matrix h(d, d);
  for (long i = 0; i < n; ++i) {
    const Matrix c2i = unpack_row(c2_, i, d);
    const Vector c1 = c1_.row(i).transpose();
    double m = c0_[i] - 2.0 * theta.dot(c1) + theta.dot(c2i * theta);
    bool clamp = false;
    if (!(m > kVarianceFloor)) {
      m = kVarianceFloor;
      clamp = true;
      ++clamped;
    }
    const double e = y_[i] - w_.row(i).dot(theta);
    out.value += -0.5 * e * e / m - 0.5 * std::log(m);
    if (order < 1) continue;
    const Vector wi = w_.row(i).transpose();
    if (clamp) {
      g.setZero();
      h.setZero();
    } else {
      g = -2.0 * c1 + 2.0 * c2i * theta;
      h = 2.0 * c2i;
    }
    out.grad += e * wi / m + 0.5 * e * e * g / (m * m) - 0.5 * g / m;
    if (order < 2) continue;
    Matrix t = -wi * wi.transpose() / m - e * wi * g.transpose() / (m * m);
    t += 0.5 * ((-2.0 * e * g * wi.transpose() + e * e * h) / (m * m) - 2.0 * e * e * g * g.transpose() / (m * m * m));
    t -= 0.5 * (h / m - g * g.transpose() / (m * m));
    out.hess += t;
  }
  if (static_cast<double>(clamped) > kMaxClampedFraction * static_cast<double>(n)) {
    throw EvaluationError("nuisance variance estimate clamped at " + std::to_string(clamped) + " of " +
                          std::to_string(n) + " points");
  }
  out.hess = 0.5 * (out.hess + out.hess.transpose());
  return out;
}

CemCriterion::Derivs CemCriterion::exponential(const Vector& theta, int order) const {
  const long n = sample_size();
  const auto d = w_.cols();
  const Vector lin = w_ * theta;
  const Vector psi = (y_.array() * (-lin.array()).exp()).matrix();
  const Vector m = a_ * psi;
  if (!m.allFinite() || (m.array() <= 0.0).any()) throw EvaluationError("nonpositive kernel mean in exponential model");
  Derivs out;
  out.value = (-lin.array() - m.array().log() - psi.array() / m.array()).sum();
  if (order < 1) return out;
  const Matrix pw = w_.array().colwise() * psi.array();
  const Matrix gm = -(a_ * pw);  // row i: gradient of m_i
  out.grad = Vector::Zero(d);
  for (long i = 0; i < n; ++i) {
    const Vector wi = w_.row(i).transpose();
    const Vector gi = gm.row(i).transpose();
    out.grad += -wi - gi / m[i] + psi[i] * wi / m[i] + psi[i] * gi / (m[i] * m[i]);
  }
  if (order < 2) return out;
  Matrix pww(n, d * d);
  for (long j = 0; j < n; ++j) {
    for (Eigen::Index p = 0; p < d; ++p) {
      for (Eigen::Index q = 0; q < d; ++q) pww(j, p + q * d) = psi[j] * w_(j, p) * w_(j, q);
    }
  }
  const Matrix hm = a_ * pww;
  out.hess = Matrix::Zero(d, d);
  for (long i = 0; i < n; ++i) {
    const Matrix hi = unpack_row(hm, i, d);
    const Vector wi = w_.row(i).transpose();
    const Vector gi = gm.row(i).transpose();
    const double mi = m[i];
    const double pi = psi[i];
    out.hess += -hi / mi + gi * gi.transpose() / (mi * mi) - pi * wi * wi.transpose() / mi -
                pi * (wi * gi.transpose() + gi * wi.transpose()) / (mi * mi) - 2.0 * pi * gi * gi.transpose() / (mi * mi * mi) +
                pi * hi / (mi * mi);
  }
  out.hess = 0.5 * (out.hess + out.hess.transpose());
  return out;
}

double CemCriterion::evaluate(const Vector& theta) const { return compute(theta, 0).value; }
Vector CemCriterion::gradient(const Vector& theta) const { return compute(theta, 1).grad; }
Matrix CemCriterion::hessian(const Vector& theta) const { return compute(theta, 2).hess; }

Vector CemCriterion::nuisance_at_data(const Vector& theta) const {
  if (theta.size() != w_.cols()) throw DomainError("theta has the wrong dimension");
  const long n = sample_size();
  Vector out(n);
  if (variant_ == CemVariant::ConditionalNormal) {
    const auto d = w_.cols();
    for (long i = 0; i < n; ++i) {
      const Matrix c2i = unpack_row(c2_, i, d);
      out[i] = c0_[i] - 2.0 * theta.dot(c1_.row(i).transpose()) + theta.dot(c2i * theta);
    }
    return out;
  }
  const Vector psi = (y_.array() * (-(w_ * theta).array()).exp()).matrix();
  return (a_ * psi).array().log().matrix();
}

}  // namespace kstep::models
