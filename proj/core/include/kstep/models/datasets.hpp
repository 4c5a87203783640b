#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "kstep/criterion.hpp"

namespace kstep::models {

enum class ModelKind { CoxCurrentStatus, CemNormal, CemExponential, PartialLinear };

std::string to_string(ModelKind m);
ModelKind parse_model(const std::string& text);  // cox | cem-normal | cem-exponential | plm

/// Current status observations: examination time y, indicator delta = 1{T <= y}, covariates z (n x d).
struct CSDataset {
  Vector y;
  std::vector<int> delta;
  Matrix z;

  long size() const { return static_cast<long>(y.size()); }
};

enum class CemVariant { ConditionalNormal, ConditionalExponential };

/// Responses y, covariates w (n x d) and the scalar index z.
struct CEMDataset {
  Vector y;
  Matrix w;
  Vector z;
  CemVariant variant = CemVariant::ConditionalNormal;

  long size() const { return static_cast<long>(y.size()); }
};

/// Partial linear design with strictly increasing z.
struct PLMDataset {
  Vector y;
  Matrix w;
  Vector z;

  long size() const { return static_cast<long>(y.size()); }
};

using ModelDataset = std::variant<CSDataset, CEMDataset, PLMDataset>;

void validate(const CSDataset& d);
void validate(const CEMDataset& d);
void validate(const PLMDataset& d);

CSDataset generate_current_status(long n, const Vector& theta0, std::mt19937_64& rng);
CEMDataset generate_cem(long n, const Vector& theta0, CemVariant variant, std::mt19937_64& rng);
PLMDataset generate_plm(long n, const Vector& theta0, std::mt19937_64& rng);

ModelDataset generate(ModelKind model, long n, const Vector& theta0, std::uint64_t seed);

/// True nuisance curves of the simulation designs.
double cem_true_eta(CemVariant v, double z);
double plm_true_eta(double z);
/// AR(rho) covariance rho^{|i-j|}.
Matrix ar_covariance(int d, double rho);

/// CSV whose first line is "# kstep-dataset model=<name> columns=<list>".
std::string to_csv(const ModelDataset& data);
ModelDataset from_csv(const std::string& text);

ModelKind kind_of(const ModelDataset& data);
long size_of(const ModelDataset& data);

}  // namespace kstep::models
