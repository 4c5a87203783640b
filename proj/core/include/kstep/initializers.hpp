#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "kstep/criterion.hpp"
#include "kstep/rational.hpp"

namespace kstep {

struct SearchSpace {
  Vector lower;
  Vector upper;
};

struct GridSpec {
  Rational psi{1, 4};
  double side_scale = 1.0;      // deterministic: spacing s n^{-psi}
  double min_card_scale = 1.0;  // stochastic: ceil(C n^psi) draws
  std::uint64_t seed = 0;
};

struct SearchResult {
  Vector theta;
  double value = 0.0;
  long evaluated = 0;
  long failed = 0;
  std::vector<std::string> failures;  // first few failure messages
};

/// Per-axis node count floor(width / h) + 1 of the deterministic lattice.
std::vector<long> lattice_shape(const SearchSpace& space, const GridSpec& spec, long n);
long stochastic_count(const GridSpec& spec, long n);

/// Lattice with spacing s n^{-psi} anchored at space.lower; returns the best node,
/// ties going to the lexicographically smallest.
SearchResult deterministic_search(const ProfiledCriterion& c, const SearchSpace& space, const GridSpec& spec, long n);

/// ceil(C n^psi) uniform draws on the box, independent of the dimension.
SearchResult stochastic_search(const ProfiledCriterion& c, const SearchSpace& space, const GridSpec& spec, long n,
                               std::mt19937_64& rng);

/// Same, seeded from spec.seed.
SearchResult stochastic_search(const ProfiledCriterion& c, const SearchSpace& space, const GridSpec& spec, long n);

}  // namespace kstep
