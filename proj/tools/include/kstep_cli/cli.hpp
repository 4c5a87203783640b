#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "kstep/rate_calculus.hpp"

namespace kstep::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kNumerical = 3, kMismatch = 4 };

/// Runs the command line; never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Frozen expected tables: "model,psi,k,exponent" lines per table, in emission order.
const std::vector<std::vector<std::string>>& expected_table_rows();

/// Lines of the frozen fixture that differ from the emitted tables (empty when equal).
std::vector<std::string> diff_against_expected(const std::vector<rates::RateTable>& tables);

}  // namespace kstep::cli
