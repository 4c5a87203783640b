#include "kstep/serialization.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kstep/errors.hpp"

namespace kstep {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw Error("failed to format double");
  return std::string(buf, ptr);
}

nlohmann::json json_number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

nlohmann::json json_vector(const Vector& v) {
  auto j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(json_number(v[i]));
  return j;
}

nlohmann::json json_matrix(const Matrix& m) {
  auto j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) j.push_back(json_vector(m.row(i).transpose()));
  return j;
}

Vector vector_from_json(const nlohmann::json& j, const std::string& key) {
  if (!j.is_array()) throw DomainError("'" + key + "' must be an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw DomainError("'" + key + "' must be an array of numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Rational rational_from_json(const nlohmann::json& j, const std::string& key) {
  if (j.is_string()) return Rational::parse(j.get<std::string>());
  if (j.is_number_integer()) return Rational(j.get<std::int64_t>());
  throw DomainError("'" + key + "' must be a rational string like \"1/3\"");
}

void write_text_file(const std::string& path, const std::string& text) {
  namespace fs = std::filesystem;
  std::error_code ec;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write '" + path + "'");
  os << text;
  os.close();
  if (!os) throw Error("cannot write '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace kstep
