#pragma once

#include <optional>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace kstep {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Axis-aligned parameter box. Infinite bounds are allowed.
struct Box {
  Vector lower;
  Vector upper;

  static Box unbounded(int d);
  bool contains(const Vector& theta) const;
};

/// A criterion S_n(theta) to be maximized, typically a (generalized) profile
/// log-likelihood. Implementations must be safe to evaluate concurrently.
class ProfiledCriterion {
 public:
  virtual ~ProfiledCriterion() = default;

  virtual double evaluate(const Vector& theta) const = 0;
  virtual long sample_size() const = 0;
  virtual int dimension() const = 0;

  virtual bool has_gradient() const { return false; }
  virtual bool has_hessian() const { return false; }
  virtual Vector gradient(const Vector& theta) const;
  virtual Matrix hessian(const Vector& theta) const;

  virtual Box parameter_box() const { return Box::unbounded(dimension()); }
};

/// S(theta) = n * (a'theta - theta'M theta / 2) + c. M is symmetrized on construction.
class QuadraticCriterion final : public ProfiledCriterion {
 public:
  QuadraticCriterion(long n, Matrix m, Vector a, double c = 0.0);

  double evaluate(const Vector& theta) const override;
  long sample_size() const override { return n_; }
  int dimension() const override { return static_cast<int>(a_.size()); }
  bool has_gradient() const override { return true; }
  bool has_hessian() const override { return true; }
  Vector gradient(const Vector& theta) const override;
  Matrix hessian(const Vector& theta) const override;

  /// Unique maximizer M^{-1} a (M must be positive definite).
  Vector maximizer() const;

 private:
  long n_;
  Matrix m_;
  Vector a_;
  double c_;
};

struct ScoreEstimate {
  Vector vector;
  double step_used = 0.0;
};

enum class InfoConstruction { NumericSecondDiff, AnalyticHessian, GradientFD };

std::string to_string(InfoConstruction c);
InfoConstruction parse_info_construction(const std::string& text);

struct InfoEstimate {
  Matrix matrix;
  double step_used = 0.0;
  std::optional<std::pair<double, double>> fd_pair;
  InfoConstruction construction = InfoConstruction::NumericSecondDiff;
  double condition = 0.0;  // max|eig| / min|eig|, infinite when singular
};

/// 2-norm condition number of a symmetric matrix.
double symmetric_condition(const Matrix& m);

/// Forward-difference score (S(theta + s v_i) - S(theta)) / (n s). A probe that
/// leaves the parameter box is reflected to theta - s v_i.
ScoreEstimate numeric_score(const ProfiledCriterion& c, const Vector& theta, double s_n,
                            std::optional<double> value_at_theta = std::nullopt);

/// Second-difference information estimate, positive definite near a maximum.
InfoEstimate numeric_info(const ProfiledCriterion& c, const Vector& theta, double t_n,
                          std::optional<double> value_at_theta = std::nullopt);

/// Information from differences of the analytic gradient at theta + n^{-1/2} t v_j.
InfoEstimate gradient_fd_info(const ProfiledCriterion& c, const Vector& theta, double t1, double t2);

/// -hessian / n.
InfoEstimate analytic_info(const ProfiledCriterion& c, const Vector& theta);

}  // namespace kstep
