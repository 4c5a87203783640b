#pragma once

#include <memory>
#include <vector>

#include "kstep/criterion.hpp"
#include "kstep/models/datasets.hpp"
#include "kstep/rational.hpp"

namespace kstep::models {

/// Right-continuous nondecreasing step function with jumps at the knots; zero before the first knot.
struct MonotoneHazard {
  Vector knots;
  Vector values;  // may contain +inf at the right end

  double operator()(double y) const;
};

enum class NpmleSolver {
  Pava,  // exact pooled-block maximization
  Icm,   // iterative convex minorant with step-halving
};

struct NpmleResult {
  MonotoneHazard hazard;
  double loglik = 0.0;
  bool boundary = false;  // some Lambda infinite, or all deltas equal
  int iterations = 0;
  bool converged = true;
};

/// delta * log(1 - exp(-lambda u)) - (1 - delta) * lambda u.
double cs_subject_loglik(int delta, double lambda, double u);

/// Sorted view of a current status dataset, shared across evaluations.
class CurrentStatusData {
 public:
  explicit CurrentStatusData(const CSDataset& data);

  long size() const { return static_cast<long>(y_.size()); }
  int dimension() const { return static_cast<int>(z_.cols()); }
  NpmleResult npmle(const Vector& theta, NpmleSolver solver = NpmleSolver::Pava) const;

 private:
  NpmleResult pava(const Vector& u) const;
  NpmleResult icm(const Vector& u) const;
  MonotoneHazard hazard_from(const std::vector<double>& knot_values) const;

  Vector y_;
  std::vector<int> delta_;
  Matrix z_;
  std::vector<long> group_start_;  // knot j covers [group_start_[j], group_start_[j+1])
  bool all_equal_delta_ = false;
};

NpmleResult cox_cs_npmle(const CSDataset& data, const Vector& theta, NpmleSolver solver = NpmleSolver::Pava);

/// Profile log-likelihood over the monotone cumulative hazard. No analytic derivatives.
class CoxCurrentStatusCriterion final : public ProfiledCriterion {
 public:
  explicit CoxCurrentStatusCriterion(const CSDataset& data, NpmleSolver solver = NpmleSolver::Pava);

  double evaluate(const Vector& theta) const override;
  long sample_size() const override { return prepared_->size(); }
  int dimension() const override { return prepared_->dimension(); }

  NpmleResult npmle(const Vector& theta) const { return prepared_->npmle(theta, solver_); }

 private:
  std::shared_ptr<const CurrentStatusData> prepared_;
  NpmleSolver solver_;
};

/// Convergence rate of the hazard NPMLE.
inline const Rational kCoxNuisanceRate{1, 3};

}  // namespace kstep::models
