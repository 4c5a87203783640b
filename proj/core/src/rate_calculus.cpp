#include "kstep/rate_calculus.hpp"

#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "kstep/errors.hpp"

namespace kstep::rates {
namespace {

const Rational kHalf(1, 2);
const Rational kQuarter(1, 4);
const Rational kZero(0);

int smallest_power(const Rational& base, const Rational& target, bool strict) {
  if (base <= Rational(1)) throw DomainError("int_log base must exceed 1");
  Rational p(1);
  for (int m = 0;; ++m) {
    if (strict ? (p > target) : (p >= target)) return m;
    p *= base;
  }
}

Rational s1(const Rational& psi, int k) { return psi * pow(Rational(3, 2), static_cast<unsigned>(k)); }

Rational s2(const Rational& start, const Rational& r, int k) {
  return Rational(2) * r + (start - Rational(2) * r) / pow(Rational(2), static_cast<unsigned>(k));
}

struct ProfileShape {
  int k1;
  Rational s1_tilde;
  int k2;  // Contraction steps until the rate reaches 1/2; unused when s1_tilde >= 1/2.
};

ProfileShape profile_shape(const Rational& psi, const Rational& r) {
  ProfileShape sh{};
  sh.k1 = int_log(Rational(3, 2), r / psi);
  sh.s1_tilde = s1(psi, sh.k1);
  if (sh.s1_tilde < r) throw std::logic_error("profile rate: S1 at K1 fell below r");
  sh.k2 = 0;
  if (sh.s1_tilde < kHalf) {
    const Rational two_r = Rational(2) * r;
    sh.k2 = int_log(Rational(2), (two_r - sh.s1_tilde) / (two_r - kHalf));
  }
  return sh;
}

Rational smooth_r1(const Rational& psi, const Rational& g, int k) {
  return (kHalf - g) + pow(Rational(2), static_cast<unsigned>(k)) * (psi + g - kHalf);
}

int first_above_half(const std::vector<Rational>& seq) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] > kHalf) return static_cast<int>(i) + 1;
  }
  return 0;
}

std::string mode_label(SmoothMode m) { return m == SmoothMode::Analytic ? "analytic" : "finite-difference"; }

}  // namespace

std::string to_string(Regime r) {
  switch (r) {
    case Regime::Profile: return "profile";
    case Regime::SmoothAnalytic: return "smooth-analytic";
    case Regime::SmoothFiniteDiff: return "smooth-fd";
    case Regime::Penalized: return "penalized";
  }
  return "unknown";
}

Regime parse_regime(const std::string& text) {
  if (text == "profile") return Regime::Profile;
  if (text == "smooth-analytic") return Regime::SmoothAnalytic;
  if (text == "smooth-fd") return Regime::SmoothFiniteDiff;
  if (text == "penalized") return Regime::Penalized;
  throw DomainError("unknown regime '" + text + "' (profile|smooth-analytic|smooth-fd|penalized)");
}

int int_log(const Rational& base, const Rational& target) { return smallest_power(base, target, false); }
int int_log_strict(const Rational& base, const Rational& target) { return smallest_power(base, target, true); }

void check_profile_inputs(const Rational& psi, const Rational& r) {
  if (!(psi > kZero) || psi > kHalf) throw DomainError("psi must satisfy 0 < psi <= 1/2, got " + psi.str());
  if (!(r > kQuarter) || r > kHalf) throw DomainError("r must satisfy 1/4 < r <= 1/2, got " + r.str());
}

void check_smooth_inputs(const Rational& psi, const Rational& g, SmoothMode mode) {
  if (!(psi > kZero) || psi > kHalf) throw DomainError("psi must satisfy 0 < psi <= 1/2, got " + psi.str());
  if (mode == SmoothMode::Analytic) return;
  if (!(g > kQuarter) || g > kHalf) throw DomainError("g must satisfy 1/4 < g <= 1/2, got " + g.str());
  if (psi <= kHalf - g) {
    throw DomainError("initial rate too slow for smooth regime: psi=" + psi.str() + " <= 1/2 - g=" + (kHalf - g).str());
  }
}

std::vector<Rational> profile_rate_sequence(const Rational& psi, const Rational& r, int k_max) {
  check_profile_inputs(psi, r);
  if (k_max < 0) throw DomainError("k_max must be nonnegative");
  const ProfileShape sh = profile_shape(psi, r);
  const Rational cap = r + kQuarter;
  std::vector<Rational> out;
  out.reserve(static_cast<std::size_t>(k_max));
  for (int k = 1; k <= k_max; ++k) {
    Rational v;
    if (k <= sh.k1) {
      v = s1(psi, k);
    } else if (sh.s1_tilde >= kHalf) {
      v = cap;
    } else if (k <= sh.k1 + sh.k2) {
      v = s2(sh.s1_tilde, r, k - sh.k1);
    } else {
      v = cap;
    }
    out.push_back(min(v, cap));
  }
  return out;
}

int k_star_profile(const Rational& psi, const Rational& r) {
  check_profile_inputs(psi, r);
  const ProfileShape sh = profile_shape(psi, r);
  const Rational two_r = Rational(2) * r;
  const int k_star = sh.k1 + int_log_strict(Rational(2), (two_r - sh.s1_tilde) / (two_r - kHalf));
  const int scanned = first_above_half(profile_rate_sequence(psi, r, k_star));
  if (scanned != k_star) {
    throw std::logic_error("k* closed form (" + std::to_string(k_star) + ") disagrees with sequence scan (" +
                           std::to_string(scanned) + ") at psi=" + psi.str() + ", r=" + r.str());
  }
  return k_star;
}

std::vector<Rational> smooth_rate_sequence(const Rational& psi, const Rational& g, SmoothMode mode, int k_max) {
  check_smooth_inputs(psi, g, mode);
  if (k_max < 0) throw DomainError("k_max must be nonnegative");
  std::vector<Rational> out;
  out.reserve(static_cast<std::size_t>(k_max));
  if (mode == SmoothMode::Analytic) {
    for (int k = 1; k <= k_max; ++k) out.push_back(psi * pow(Rational(2), static_cast<unsigned>(k)));
    return out;
  }
  const int l1 = int_log(Rational(2), g / (g + psi - kHalf));
  const Rational r1_at_l1 = smooth_r1(psi, g, l1);
  for (int k = 1; k <= k_max; ++k) {
    if (k <= l1) {
      out.push_back(smooth_r1(psi, g, k));
    } else {
      out.push_back(Rational(k - l1) * g + r1_at_l1);
    }
  }
  return out;
}

int k_star_smooth(const Rational& psi, const Rational& g, SmoothMode mode) {
  check_smooth_inputs(psi, g, mode);
  int k_star = 0;
  if (mode == SmoothMode::Analytic) {
    k_star = int_log_strict(Rational(2), Rational(1) / (Rational(2) * psi));
  } else {
    k_star = int_log_strict(Rational(2), g / (g + psi - kHalf));
  }
  const int scanned = first_above_half(smooth_rate_sequence(psi, g, mode, k_star));
  if (scanned != k_star) {
    throw std::logic_error("k* closed form (" + std::to_string(k_star) + ") disagrees with sequence scan (" +
                           std::to_string(scanned) + ") in " + mode_label(mode) + " mode at psi=" + psi.str());
  }
  return k_star;
}

StepStage step_size_schedule(const Rational& r_prev, const Rational& r) {
  if (!(r_prev > kZero)) throw DomainError("r_prev must be positive, got " + r_prev.str());
  if (!(r > kQuarter) || r > kHalf) throw DomainError("r must satisfy 1/4 < r <= 1/2, got " + r.str());
  const Rational t = r_prev / Rational(2);
  if (r_prev < r) {
    const Rational s = Rational(3, 2) * r_prev;
    return {{s, t}, s, Stage::Growth};
  }
  if (r_prev < kHalf) {
    const Rational s = r + t;
    return {{s, t}, s, Stage::Contraction};
  }
  const Rational s = r + kQuarter;
  return {{s, t}, s, Stage::Saturated};
}

KernelRates kernel_rates(const KernelRateInputs& inp) {
  const int q = inp.q;
  if (q < 10 || q % 2 != 0) throw DomainError("q must be an even integer >= 10, got " + std::to_string(q));
  if (!(inp.epsilon > kZero)) throw DomainError("epsilon must be positive, got " + inp.epsilon.str());
  const Rational upper(q - 2, 4 * q + 16);
  if (!(inp.alpha > Rational(1, 8)) || !(inp.alpha < upper)) {
    throw DomainError("alpha must satisfy 1/8 < alpha < (q-2)/(4q+16) = " + upper.str() + ", got " + inp.alpha.str());
  }
  const Rational base(q, 2 * q + 4);
  const Rational second = base - inp.alpha * Rational(q + 4, q + 2) - inp.epsilon;
  const Rational g = min(Rational(2) * inp.alpha, second);
  const Rational delta = base - inp.alpha * Rational(2 * q + 6, q + 2) - Rational(2) * inp.epsilon;
  if (!(g > kQuarter) || g > kHalf) throw DomainError("derived g=" + g.str() + " outside (1/4, 1/2]");
  if (Rational(2) * g - kHalf > delta || delta > g) {
    throw DomainError("derived delta=" + delta.str() + " outside [2g-1/2, g] for g=" + g.str());
  }
  return {g, delta};
}

std::vector<RateTable> emit_tables() {
  const std::vector<Rational> psis{Rational(1, 2), Rational(1, 3), Rational(1, 4)};
  std::vector<RateTable> out;

  auto profile_table = [&](std::string name, std::string title, std::string model, Rational r) {
    RateTable t{std::move(name), std::move(title), "r", r, {}};
    RateTable::Block b{std::move(model), {}};
    for (const auto& psi : psis) {
      const int ks = k_star_profile(psi, r);
      auto seq = profile_rate_sequence(psi, r, ks + 8);
      const Rational cap = r + kQuarter;
      std::size_t len = 0;
      while (len < seq.size() && seq[len] < cap) ++len;
      seq.resize(len + 1);
      b.rows.push_back({psi, std::move(seq), ks});
    }
    t.blocks.push_back(std::move(b));
    return t;
  };

  out.push_back(profile_table("table1", "Cox model under current status data", "cox", Rational(1, 3)));
  out.push_back(profile_table("table2", "Semiparametric mixture model in case-control studies", "mixture", Rational(1, 2)));

  const Rational g = kernel_rates({Rational(1, 5), 28, Rational(1, 600)}).g;
  RateTable t3{"table3", "Conditional normal (exponential) model", "g", g, {}};
  for (auto mode : {SmoothMode::Analytic, SmoothMode::FiniteDiff}) {
    RateTable::Block b{mode == SmoothMode::Analytic ? "cem-construction-I" : "cem-construction-II", {}};
    for (const auto& psi : psis) {
      const int ks = k_star_smooth(psi, g, mode);
      b.rows.push_back({psi, smooth_rate_sequence(psi, g, mode, ks), ks});
    }
    t3.blocks.push_back(std::move(b));
  }
  out.push_back(std::move(t3));
  return out;
}

std::string table_csv(const RateTable& t) {
  std::ostringstream os;
  os << "model,psi,k,exponent,exponent_num,exponent_den,k_star\n";
  for (const auto& b : t.blocks) {
    for (const auto& row : b.rows) {
      for (std::size_t k = 0; k < row.exponents.size(); ++k) {
        const auto& e = row.exponents[k];
        os << b.model << ',' << row.psi.str() << ',' << (k + 1) << ',' << e.str() << ',' << e.num() << ','
           << e.den() << ',' << row.k_star << '\n';
      }
    }
  }
  return os.str();
}

nlohmann::json tables_json(const std::vector<RateTable>& tables) {
  nlohmann::json j;
  j["schema"] = 1;
  j["tables"] = nlohmann::json::array();
  for (const auto& t : tables) {
    nlohmann::json jt;
    jt["name"] = t.name;
    jt["title"] = t.title;
    jt[t.rate_symbol] = t.rate.str();
    jt["rows"] = nlohmann::json::array();
    for (const auto& b : t.blocks) {
      for (const auto& row : b.rows) {
        nlohmann::json jr;
        jr["model"] = b.model;
        jr["psi"] = row.psi.str();
        jr["k_star"] = row.k_star;
        jr["exponents"] = nlohmann::json::array();
        for (const auto& e : row.exponents) jr["exponents"].push_back(e.str());
        jt["rows"].push_back(std::move(jr));
      }
    }
    j["tables"].push_back(std::move(jt));
  }
  return j;
}

}  // namespace kstep::rates
