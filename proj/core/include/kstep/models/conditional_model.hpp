#pragma once

#include <memory>

#include "kstep/criterion.hpp"
#include "kstep/models/datasets.hpp"
#include "kstep/rate_calculus.hpp"

namespace kstep::models {

/// Gaussian kernel with bandwidth b_n = c n^{-alpha}.
struct KernelSpec {
  double bandwidth_constant = 1.0;
  Rational alpha{1, 5};

  double bandwidth(long n) const;
};

double gaussian_kernel(double u);

/// Kernel estimate of the nuisance at z: rho of the locally weighted mean of psi_theta.
double cem_nuisance(const CEMDataset& data, const KernelSpec& spec, const Vector& theta, double z);

/// Plug-in log-likelihood with the kernel nuisance estimate at every Z_i.
/// Analytic first and second derivatives differentiate through the nuisance estimate.
class CemCriterion final : public ProfiledCriterion {
 public:
  CemCriterion(const CEMDataset& data, const KernelSpec& spec);

  double evaluate(const Vector& theta) const override;
  long sample_size() const override { return static_cast<long>(y_.size()); }
  int dimension() const override { return static_cast<int>(w_.cols()); }
  bool has_gradient() const override { return true; }
  bool has_hessian() const override { return true; }
  Vector gradient(const Vector& theta) const override;
  Matrix hessian(const Vector& theta) const override;

  /// Nuisance estimate at each Z_i (variance for the normal variant, log-scale for the exponential).
  Vector nuisance_at_data(const Vector& theta) const;

  static constexpr double kVarianceFloor = 1e-8;
  static constexpr double kMaxClampedFraction = 0.01;

 private:
  struct Derivs {
    double value = 0.0;
    Vector grad;
    Matrix hess;
  };
  Derivs compute(const Vector& theta, int order) const;
  Derivs normal(const Vector& theta, int order) const;
  Derivs exponential(const Vector& theta, int order) const;

  CemVariant variant_;
  Vector y_;
  Matrix w_;
  // Normal: kernel moments of y^2, y w and w w' around each Z_i.
  Vector c0_;
  Matrix c1_;
  Matrix c2_;  // row i holds the d x d moment, column-major
  // Exponential: row-normalized kernel weights.
  Matrix a_;
};

/// Kernel rate inputs used for the nuisance: alpha = 1/5, q = 28, eps = 1/600.
inline rates::KernelRateInputs cem_kernel_inputs() { return {Rational(1, 5), 28, Rational(1, 600)}; }

}  // namespace kstep::models
