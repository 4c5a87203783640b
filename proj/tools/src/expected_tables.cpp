#include <algorithm>
#include <sstream>

#include "kstep_cli/cli.hpp"

namespace kstep::cli {

const std::vector<std::vector<std::string>>& expected_table_rows() {
  static const std::vector<std::vector<std::string>> rows = {
      {
          "cox,1/2,1,7/12,1",
          "cox,1/3,1,1/2,2",
          "cox,1/3,2,7/12,2",
          "cox,1/4,1,3/8,2",
          "cox,1/4,2,25/48,2",
          "cox,1/4,3,7/12,2",
      },
      {
          "mixture,1/2,1,3/4,1",
          "mixture,1/3,1,1/2,2",
          "mixture,1/3,2,3/4,2",
          "mixture,1/4,1,3/8,2",
          "mixture,1/4,2,9/16,2",
          "mixture,1/4,3,3/4,2",
      },
      {
          "cem-construction-I,1/2,1,1/1,1",
          "cem-construction-I,1/3,1,2/3,1",
          "cem-construction-I,1/4,1,1/2,2",
          "cem-construction-I,1/4,2,1/1,2",
          "cem-construction-II,1/2,1,451/600,1",
          "cem-construction-II,1/3,1,251/600,2",
          "cem-construction-II,1/3,2,353/600,2",
          "cem-construction-II,1/4,1,151/600,8",
          "cem-construction-II,1/4,2,51/200,8",
          "cem-construction-II,1/4,3,157/600,8",
          "cem-construction-II,1/4,4,11/40,8",
          "cem-construction-II,1/4,5,181/600,8",
          "cem-construction-II,1/4,6,71/200,8",
          "cem-construction-II,1/4,7,277/600,8",
          "cem-construction-II,1/4,8,27/40,8",
      },
  };
  return rows;
}

std::vector<std::string> diff_against_expected(const std::vector<rates::RateTable>& tables) {
  const auto& want = expected_table_rows();
  std::vector<std::string> diff;
  if (tables.size() != want.size()) {
    diff.push_back("expected " + std::to_string(want.size()) + " tables, got " + std::to_string(tables.size()));
    return diff;
  }
  for (std::size_t t = 0; t < tables.size(); ++t) {
    std::vector<std::string> got;
    for (const auto& b : tables[t].blocks) {
      for (const auto& row : b.rows) {
        for (std::size_t k = 0; k < row.exponents.size(); ++k) {
          std::ostringstream os;
          os << b.model << ',' << row.psi.str() << ',' << k + 1 << ',' << row.exponents[k].str() << ',' << row.k_star;
          got.push_back(os.str());
        }
      }
    }
    const auto& w = want[t];
    for (const auto& line : w) {
      if (std::find(got.begin(), got.end(), line) == got.end()) diff.push_back(tables[t].name + ": missing " + line);
    }
    for (const auto& line : got) {
      if (std::find(w.begin(), w.end(), line) == w.end()) diff.push_back(tables[t].name + ": unexpected " + line);
    }
  }
  return diff;
}

}  // namespace kstep::cli
