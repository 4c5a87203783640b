#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kstep/criterion.hpp"
#include "kstep/rational.hpp"

namespace kstep {

/// Shortest round-trip decimal form, independent of the C locale.
std::string format_double(double v);

/// Finite values as numbers, everything else as null.
nlohmann::json json_number(double v);
nlohmann::json json_vector(const Vector& v);
nlohmann::json json_matrix(const Matrix& m);

Vector vector_from_json(const nlohmann::json& j, const std::string& key);
Rational rational_from_json(const nlohmann::json& j, const std::string& key);

/// Writes text to path, creating parent directories. Throws Error when unwritable.
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace kstep
