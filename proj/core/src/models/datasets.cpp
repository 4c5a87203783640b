#include "kstep/models/datasets.hpp"

#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "kstep/errors.hpp"
#include "kstep/serialization.hpp"

namespace kstep::models {
namespace {

void check_lengths(long n, Eigen::Index rows, const char* what) {
  if (rows != n) throw DomainError(std::string("dataset: ") + what + " length does not match y");
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, long line_no) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  while (e > b && (e[-1] == ' ' || e[-1] == '\r')) --e;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || ptr != e) {
    throw DomainError("dataset csv: bad number '" + s + "' on line " + std::to_string(line_no));
  }
  return v;
}

std::string header_value(const std::string& header, const std::string& key) {
  const auto pos = header.find(key + "=");
  if (pos == std::string::npos) throw DomainError("dataset csv: header lacks '" + key + "='");
  const auto start = pos + key.size() + 1;
  const auto end = header.find(' ', start);
  return header.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

}  // namespace

std::string to_string(ModelKind m) {
  switch (m) {
    case ModelKind::CoxCurrentStatus: return "cox";
    case ModelKind::CemNormal: return "cem-normal";
    case ModelKind::CemExponential: return "cem-exponential";
    case ModelKind::PartialLinear: return "plm";
  }
  return "unknown";
}

ModelKind parse_model(const std::string& text) {
  if (text == "cox") return ModelKind::CoxCurrentStatus;
  if (text == "cem-normal") return ModelKind::CemNormal;
  if (text == "cem-exponential") return ModelKind::CemExponential;
  if (text == "plm") return ModelKind::PartialLinear;
  throw DomainError("unknown model '" + text + "' (cox|cem-normal|cem-exponential|plm)");
}

void validate(const CSDataset& d) {
  const long n = d.size();
  if (n < 1) throw DomainError("current status dataset is empty");
  check_lengths(n, static_cast<Eigen::Index>(d.delta.size()), "delta");
  check_lengths(n, d.z.rows(), "z");
  for (long i = 0; i < n; ++i) {
    if (!(d.y[i] > 0.0) || !std::isfinite(d.y[i])) throw DomainError("examination times must be finite and positive");
    if (d.delta[static_cast<std::size_t>(i)] != 0 && d.delta[static_cast<std::size_t>(i)] != 1) {
      throw DomainError("delta must be 0 or 1");
    }
  }
  if (!d.z.allFinite()) throw DomainError("covariates must be finite");
}

void validate(const CEMDataset& d) {
  const long n = d.size();
  if (n < 1) throw DomainError("conditional model dataset is empty");
  check_lengths(n, d.w.rows(), "w");
  check_lengths(n, d.z.size(), "z");
  if (!d.y.allFinite() || !d.w.allFinite() || !d.z.allFinite()) throw DomainError("dataset entries must be finite");
  if (d.variant == CemVariant::ConditionalExponential && (d.y.array() <= 0.0).any()) {
    throw DomainError("exponential responses must be positive");
  }
}

void validate(const PLMDataset& d) {
  const long n = d.size();
  if (n < 3) throw DomainError("partial linear dataset needs n >= 3");
  check_lengths(n, d.w.rows(), "w");
  check_lengths(n, d.z.size(), "z");
  for (long i = 1; i < n; ++i) {
    if (!(d.z[i] > d.z[i - 1])) throw DomainError("z must be strictly increasing (merge duplicates upstream)");
  }
  if (!d.y.allFinite() || !d.w.allFinite()) throw DomainError("dataset entries must be finite");
}

double cem_true_eta(CemVariant v, double z) {
  return v == CemVariant::ConditionalNormal ? 1.0 + 0.5 * z * z : 0.5 * std::sin(std::numbers::pi * z);
}

double plm_true_eta(double z) { return std::sin(2.0 * std::numbers::pi * z); }

Matrix ar_covariance(int d, double rho) {
  Matrix s(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) s(i, j) = std::pow(rho, std::abs(i - j));
  }
  return s;
}

CSDataset generate_current_status(long n, const Vector& theta0, std::mt19937_64& rng) {
  const auto d = theta0.size();
  CSDataset out{Vector(n), std::vector<int>(static_cast<std::size_t>(n)), Matrix(n, d)};
  std::uniform_real_distribution<double> cov(-1.0, 1.0);
  std::uniform_real_distribution<double> exam(0.0, 3.0);
  std::exponential_distribution<double> ev(1.0);
  for (long i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) out.z(i, k) = cov(rng);
    double y = 0.0;
    while (!(y > 0.0)) y = exam(rng);
    const double t = ev(rng) / std::exp(out.z.row(i).dot(theta0));
    out.y[i] = y;
    out.delta[static_cast<std::size_t>(i)] = t <= y ? 1 : 0;
  }
  return out;
}

CEMDataset generate_cem(long n, const Vector& theta0, CemVariant variant, std::mt19937_64& rng) {
  const auto d = theta0.size();
  CEMDataset out{Vector(n), Matrix(n, d), Vector(n), variant};
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::exponential_distribution<double> ev(1.0);
  for (long i = 0; i < n; ++i) {
    out.z[i] = unif(rng);
    for (Eigen::Index k = 0; k < d; ++k) out.w(i, k) = gauss(rng);
    const double lin = out.w.row(i).dot(theta0);
    const double eta = cem_true_eta(variant, out.z[i]);
    if (variant == CemVariant::ConditionalNormal) {
      out.y[i] = lin + std::sqrt(eta) * gauss(rng);
    } else {
      out.y[i] = std::exp(lin + eta) * ev(rng);
    }
  }
  return out;
}

PLMDataset generate_plm(long n, const Vector& theta0, std::mt19937_64& rng) {
  const auto d = static_cast<int>(theta0.size());
  const Matrix chol = ar_covariance(d, 0.5).llt().matrixL();
  PLMDataset out{Vector(n), Matrix(n, d), Vector(n)};
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector e(d);
  for (long i = 0; i < n; ++i) {
    out.z[i] = static_cast<double>(i + 1) / static_cast<double>(n);
    for (int k = 0; k < d; ++k) e[k] = gauss(rng);
    out.w.row(i) = (chol * e).transpose();
    out.y[i] = out.w.row(i).dot(theta0) + plm_true_eta(out.z[i]) + gauss(rng);
  }
  return out;
}

ModelDataset generate(ModelKind model, long n, const Vector& theta0, std::uint64_t seed) {
  if (n < 3) throw DomainError("generate needs n >= 3");
  if (theta0.size() < 1) throw DomainError("generate needs a nonempty theta0");
  std::mt19937_64 rng(seed);
  switch (model) {
    case ModelKind::CoxCurrentStatus: return generate_current_status(n, theta0, rng);
    case ModelKind::CemNormal: return generate_cem(n, theta0, CemVariant::ConditionalNormal, rng);
    case ModelKind::CemExponential: return generate_cem(n, theta0, CemVariant::ConditionalExponential, rng);
    case ModelKind::PartialLinear: return generate_plm(n, theta0, rng);
  }
  throw DomainError("unknown model");
}

ModelKind kind_of(const ModelDataset& data) {
  if (std::holds_alternative<CSDataset>(data)) return ModelKind::CoxCurrentStatus;
  if (const auto* c = std::get_if<CEMDataset>(&data)) {
    return c->variant == CemVariant::ConditionalNormal ? ModelKind::CemNormal : ModelKind::CemExponential;
  }
  return ModelKind::PartialLinear;
}

long size_of(const ModelDataset& data) {
  return std::visit([](const auto& d) { return d.size(); }, data);
}

std::string to_csv(const ModelDataset& data) {
  std::ostringstream os;
  const auto kind = kind_of(data);
  auto cols = [](const char* prefix, Eigen::Index d) {
    std::string s;
    for (Eigen::Index k = 0; k < d; ++k) s += std::string(",") + prefix + std::to_string(k + 1);
    return s;
  };
  if (const auto* cs = std::get_if<CSDataset>(&data)) {
    os << "# kstep-dataset model=" << to_string(kind) << " columns=y,delta" << cols("z", cs->z.cols()) << '\n';
    for (long i = 0; i < cs->size(); ++i) {
      os << format_double(cs->y[i]) << ',' << cs->delta[static_cast<std::size_t>(i)];
      for (Eigen::Index k = 0; k < cs->z.cols(); ++k) os << ',' << format_double(cs->z(i, k));
      os << '\n';
    }
    return os.str();
  }
  const Vector* y = nullptr;
  const Matrix* w = nullptr;
  const Vector* z = nullptr;
  if (const auto* c = std::get_if<CEMDataset>(&data)) {
    y = &c->y, w = &c->w, z = &c->z;
  } else {
    const auto& p = std::get<PLMDataset>(data);
    y = &p.y, w = &p.w, z = &p.z;
  }
  os << "# kstep-dataset model=" << to_string(kind) << " columns=y" << cols("w", w->cols()) << ",z\n";
  for (Eigen::Index i = 0; i < y->size(); ++i) {
    os << format_double((*y)[i]);
    for (Eigen::Index k = 0; k < w->cols(); ++k) os << ',' << format_double((*w)(i, k));
    os << ',' << format_double((*z)[i]) << '\n';
  }
  return os.str();
}

ModelDataset from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string header;
  if (!std::getline(is, header) || header.rfind("# kstep-dataset", 0) != 0) {
    throw DomainError("dataset csv: first line must be '# kstep-dataset model=... columns=...'");
  }
  const auto kind = parse_model(header_value(header, "model"));
  const auto columns = split(header_value(header, "columns"), ',');
  const auto ncol = columns.size();
  std::vector<std::vector<double>> rows;
  std::string line;
  long line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line, ',');
    if (cells.size() != ncol) {
      throw DomainError("dataset csv: line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                        " fields, expected " + std::to_string(ncol));
    }
    std::vector<double> r;
    for (const auto& c : cells) r.push_back(parse_double(c, line_no));
    rows.push_back(std::move(r));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (kind == ModelKind::CoxCurrentStatus) {
    if (ncol < 3) throw DomainError("dataset csv: current status data needs y, delta and at least one z");
    CSDataset d{Vector(n), std::vector<int>(static_cast<std::size_t>(n)), Matrix(n, static_cast<Eigen::Index>(ncol - 2))};
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& r = rows[static_cast<std::size_t>(i)];
      d.y[i] = r[0];
      d.delta[static_cast<std::size_t>(i)] = static_cast<int>(r[1]);
      for (std::size_t k = 2; k < ncol; ++k) d.z(i, static_cast<Eigen::Index>(k - 2)) = r[k];
    }
    validate(d);
    return d;
  }
  if (ncol < 3) throw DomainError("dataset csv: needs y, at least one w, and z");
  const auto dw = static_cast<Eigen::Index>(ncol - 2);
  Vector y(n), z(n);
  Matrix w(n, dw);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    y[i] = r[0];
    for (Eigen::Index k = 0; k < dw; ++k) w(i, k) = r[static_cast<std::size_t>(k + 1)];
    z[i] = r[ncol - 1];
  }
  if (kind == ModelKind::PartialLinear) {
    PLMDataset d{y, w, z};
    validate(d);
    return d;
  }
  CEMDataset d{y, w, z, kind == ModelKind::CemNormal ? CemVariant::ConditionalNormal : CemVariant::ConditionalExponential};
  validate(d);
  return d;
}

}  // namespace kstep::models
