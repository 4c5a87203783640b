#include "kstep/initializers.hpp"

#include <algorithm>
#include <cmath>

#include "kstep/errors.hpp"

namespace kstep {
namespace {

constexpr long kMaxNodes = 50'000'000;
constexpr std::size_t kKeptFailures = 8;

void check(const SearchSpace& space, const GridSpec& spec, long n) {
  if (space.lower.size() == 0 || space.lower.size() != space.upper.size()) {
    throw DomainError("search space bounds must be nonempty and of equal length");
  }
  for (Eigen::Index i = 0; i < space.lower.size(); ++i) {
    if (!std::isfinite(space.lower[i]) || !std::isfinite(space.upper[i]) || space.lower[i] > space.upper[i]) {
      throw DomainError("search space must be a finite box with lower <= upper");
    }
  }
  if (!(spec.psi > Rational(0)) || spec.psi > Rational(1, 2)) throw DomainError("grid psi must lie in (0, 1/2]");
  if (!(spec.side_scale > 0.0) || !(spec.min_card_scale > 0.0)) throw DomainError("grid scales must be positive");
  if (n < 1) throw DomainError("sample size must be positive");
}

double n_pow(long n, const Rational& e) { return std::pow(static_cast<double>(n), e.to_double()); }

struct Best {
  SearchResult r;
  bool found = false;

  void offer(const ProfiledCriterion& c, const Vector& node) {
    ++r.evaluated;
    double v = 0.0;
    try {
      v = c.evaluate(node);
    } catch (const std::exception& e) {
      ++r.failed;
      if (r.failures.size() < kKeptFailures) r.failures.emplace_back(e.what());
      return;
    }
    if (std::isnan(v)) {
      ++r.failed;
      if (r.failures.size() < kKeptFailures) r.failures.emplace_back("criterion returned NaN");
      return;
    }
    if (!found || v > r.value) {
      r.value = v;
      r.theta = node;
      found = true;
    }
  }

  SearchResult finish() {
    if (!found) throw NumericalError("grid search: criterion failed at every node");
    return std::move(r);
  }
};

}  // namespace

std::vector<long> lattice_shape(const SearchSpace& space, const GridSpec& spec, long n) {
  check(space, spec, n);
  const double h = spec.side_scale / n_pow(n, spec.psi);
  std::vector<long> shape;
  double total = 1.0;
  for (Eigen::Index i = 0; i < space.lower.size(); ++i) {
    const double width = space.upper[i] - space.lower[i];
    // Tolerate rounding so that an exact multiple of h keeps its last node.
    const double count = std::floor(width / h * (1.0 + 1e-12)) + 1.0;
    total *= count;
    if (total > static_cast<double>(kMaxNodes)) throw DomainError("deterministic grid too large");
    shape.push_back(static_cast<long>(count));
  }
  return shape;
}

long stochastic_count(const GridSpec& spec, long n) {
  return static_cast<long>(std::ceil(spec.min_card_scale * n_pow(n, spec.psi) * (1.0 - 1e-12)));
}

SearchResult deterministic_search(const ProfiledCriterion& c, const SearchSpace& space, const GridSpec& spec, long n) {
  const auto shape = lattice_shape(space, spec, n);
  const double h = spec.side_scale / n_pow(n, spec.psi);
  const auto d = static_cast<std::size_t>(space.lower.size());
  std::vector<long> idx(d, 0);
  Best best;
  Vector node = space.lower;
  // Odometer with the first axis most significant visits nodes in lexicographic order.
  while (true) {
    for (std::size_t i = 0; i < d; ++i) {
      const auto e = static_cast<Eigen::Index>(i);
      node[e] = space.lower[e] + static_cast<double>(idx[i]) * h;
    }
    best.offer(c, node);
    std::size_t axis = d;
    while (axis > 0) {
      --axis;
      if (++idx[axis] < shape[axis]) break;
      idx[axis] = 0;
      if (axis == 0) return best.finish();
    }
  }
}

SearchResult stochastic_search(const ProfiledCriterion& c, const SearchSpace& space, const GridSpec& spec, long n,
                               std::mt19937_64& rng) {
  check(space, spec, n);
  const long count = stochastic_count(spec, n);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Best best;
  Vector node(space.lower.size());
  std::vector<Vector> nodes;
  nodes.reserve(static_cast<std::size_t>(count));
  for (long m = 0; m < count; ++m) {
    for (Eigen::Index i = 0; i < node.size(); ++i) {
      node[i] = space.lower[i] + unif(rng) * (space.upper[i] - space.lower[i]);
    }
    nodes.push_back(node);
  }
  // Lexicographic order makes ties deterministic regardless of draw order.
  std::sort(nodes.begin(), nodes.end(), [](const Vector& a, const Vector& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  });
  for (const auto& x : nodes) best.offer(c, x);
  return best.finish();
}

SearchResult stochastic_search(const ProfiledCriterion& c, const SearchSpace& space, const GridSpec& spec, long n) {
  std::mt19937_64 rng(spec.seed);
  return stochastic_search(c, space, spec, n, rng);
}

}  // namespace kstep
