#pragma once

#include <memory>

#include <Eigen/Sparse>

#include "kstep/criterion.hpp"
#include "kstep/models/datasets.hpp"

namespace kstep::models {

/// Natural cubic smoothing spline on strictly increasing knots z, minimizing
/// sum (u_i - g(z_i))^2 + n lambda^2 * integral g''^2.
class SplineSmoother {
 public:
  SplineSmoother(const Vector& z, double lambda);

  long size() const { return n_; }
  double lambda() const { return lambda_; }
  /// Roughness weight n lambda^2.
  double roughness() const { return alpha_; }

  Vector apply(const Vector& u) const;
  /// (I - A) u.
  Vector residual(const Vector& u) const;
  Matrix residual(const Matrix& u) const;
  Matrix dense() const;

 private:
  long n_;
  double lambda_;
  double alpha_;
  Eigen::SparseMatrix<double> q_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> solver_;
};

struct SmootherMatrix {
  Matrix a;
  double lambda = 0.0;
};

SmootherMatrix smoother_matrix(const Vector& z, double lambda);

struct PenaltyConfig {
  double lambda = 0.0;  // smoothing
  double tau = 0.0;     // selection
  double gamma = 1.0;   // adaptive exponent
  Vector theta_tilde;   // initial estimate in the weights
};

/// lambda = lambda0 n^{-2/5}, tau = tau0 n^{-2/5}.
PenaltyConfig scaled_penalty(long n, double lambda0, double tau0, const Vector& theta_tilde, double gamma = 1.0);

/// Precomputed quadratic form of a partial linear fit:
/// (y - W theta)'(I - A)(y - W theta) = base - 2 b'theta + theta'G theta.
class PartialSplineProblem {
 public:
  PartialSplineProblem(const PLMDataset& data, double lambda);

  long size() const { return n_; }
  int dimension() const { return static_cast<int>(b_.size()); }
  const Matrix& gram() const { return g_; }
  const Vector& cross() const { return b_; }
  double base() const { return base_; }

  /// G^{-1} b.
  Vector unpenalized() const;
  /// Penalty weights 1/|theta_tilde_j|^gamma.
  Vector weights(const PenaltyConfig& cfg) const;
  double objective(const PenaltyConfig& cfg, const Vector& theta) const;
  /// The single penalized Newton update, without thresholding.
  Vector one_step_literal(const PenaltyConfig& cfg, const Vector& theta0) const;
  /// Hard threshold at tau^2 sqrt(n) w_j on theta0 + G^{-1}(b - G theta0), then the
  /// penalized Newton step on the retained coordinates.
  Vector one_step_sparse(const PenaltyConfig& cfg, const Vector& theta0) const;
  /// Exact minimizer of the quadratic plus weighted L1 objective.
  Vector full_fit(const PenaltyConfig& cfg, int* sweeps = nullptr) const;

 private:
  Vector restricted_solve(const std::vector<int>& support, const Vector& rhs) const;

  long n_;
  Matrix g_;
  Vector b_;
  double base_;
};

Vector partial_spline_fit(const PLMDataset& data, double lambda);
double double_penalty_objective(const PLMDataset& data, const PenaltyConfig& cfg, const Vector& theta);
Vector one_step_sparse(const PLMDataset& data, const PenaltyConfig& cfg, const Vector& theta0);
Vector full_sparse_fit(const PLMDataset& data, const PenaltyConfig& cfg);

/// -objective / 2, so that the maximizer is the penalized estimate.
class PartialSplineCriterion final : public ProfiledCriterion {
 public:
  PartialSplineCriterion(const PLMDataset& data, PenaltyConfig cfg);
  PartialSplineCriterion(std::shared_ptr<const PartialSplineProblem> problem, PenaltyConfig cfg);

  double evaluate(const Vector& theta) const override;
  long sample_size() const override { return problem_->size(); }
  int dimension() const override { return problem_->dimension(); }
  bool has_gradient() const override { return true; }
  bool has_hessian() const override { return true; }
  Vector gradient(const Vector& theta) const override;
  Matrix hessian(const Vector& theta) const override;

  const PartialSplineProblem& problem() const { return *problem_; }
  const PenaltyConfig& penalty() const { return cfg_; }

 private:
  std::shared_ptr<const PartialSplineProblem> problem_;
  PenaltyConfig cfg_;
  Vector weights_;
};

}  // namespace kstep::models
