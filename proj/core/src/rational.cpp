#include "kstep/rational.hpp"

#include <charconv>
#include <limits>
#include <numeric>
#include <ostream>

#include "kstep/errors.hpp"

namespace kstep {
namespace {

__extension__ using wide = __int128;

wide abs_wide(wide v) { return v < 0 ? -v : v; }

wide gcd_wide(wide a, wide b) {
  a = abs_wide(a);
  b = abs_wide(b);
  while (b != 0) {
    wide t = a % b;
    a = b;
    b = t;
  }
  return a;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::int64_t parse_int(std::string_view text, std::string_view whole) {
  std::int64_t value = 0;
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw DomainError("malformed rational '" + std::string(whole) + "' (expected \"num/den\")");
  }
  return value;
}

Rational from_wide(wide num, wide den) {
  if (den == 0) throw NumericalError("rational division by zero");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  wide g = gcd_wide(num, den);
  if (g > 1) {
    num /= g;
    den /= g;
  }
  constexpr auto lo = std::numeric_limits<std::int64_t>::min();
  constexpr auto hi = std::numeric_limits<std::int64_t>::max();
  if (num < lo || num > hi || den > hi) throw NumericalError("rational overflow");
  return Rational(static_cast<std::int64_t>(num), static_cast<std::int64_t>(den));
}

}  // namespace

Rational::Rational(std::int64_t num, std::int64_t den) {
  if (den == 0) throw DomainError("rational with zero denominator");
  wide n = num;
  wide d = den;
  if (d < 0) {
    n = -n;
    d = -d;
  }
  const wide g = gcd_wide(n, d);
  if (g > 1) {
    n /= g;
    d /= g;
  }
  if (n < std::numeric_limits<std::int64_t>::min() || n > std::numeric_limits<std::int64_t>::max() ||
      d > std::numeric_limits<std::int64_t>::max()) {
    throw NumericalError("rational overflow");
  }
  num_ = static_cast<std::int64_t>(n);
  den_ = static_cast<std::int64_t>(d);
}

std::string Rational::str() const { return std::to_string(num_) + "/" + std::to_string(den_); }

Rational Rational::parse(std::string_view text) {
  const std::string_view whole = text;
  text = trim(text);
  auto slash = text.find('/');
  if (slash == std::string_view::npos) return Rational(parse_int(text, whole));
  auto n = parse_int(trim(text.substr(0, slash)), whole);
  auto d = parse_int(trim(text.substr(slash + 1)), whole);
  if (d == 0) throw DomainError("malformed rational '" + std::string(whole) + "' (zero denominator)");
  return Rational(n, d);
}

Rational Rational::operator-() const { return from_wide(-static_cast<wide>(num_), den_); }

Rational& Rational::operator+=(const Rational& rhs) {
  *this = from_wide(static_cast<wide>(num_) * rhs.den_ + static_cast<wide>(rhs.num_) * den_,
                    static_cast<wide>(den_) * rhs.den_);
  return *this;
}

Rational& Rational::operator-=(const Rational& rhs) { return *this += -rhs; }

Rational& Rational::operator*=(const Rational& rhs) {
  // Cross-reduce first so intermediate products stay small.
  wide g1 = gcd_wide(num_, rhs.den_);
  wide g2 = gcd_wide(rhs.num_, den_);
  if (g1 == 0) g1 = 1;
  if (g2 == 0) g2 = 1;
  *this = from_wide((num_ / g1) * (rhs.num_ / g2), (den_ / g2) * (rhs.den_ / g1));
  return *this;
}

Rational& Rational::operator/=(const Rational& rhs) {
  if (rhs.num_ == 0) throw NumericalError("rational division by zero");
  *this = from_wide(static_cast<wide>(num_) * rhs.den_, static_cast<wide>(den_) * rhs.num_);
  return *this;
}

std::strong_ordering operator<=>(const Rational& a, const Rational& b) noexcept {
  const wide lhs = static_cast<wide>(a.num_) * b.den_;
  const wide rhs = static_cast<wide>(b.num_) * a.den_;
  if (lhs < rhs) return std::strong_ordering::less;
  if (lhs > rhs) return std::strong_ordering::greater;
  return std::strong_ordering::equal;
}

Rational pow(Rational base, unsigned exponent) {
  Rational result(1);
  while (exponent > 0) {
    if (exponent & 1U) result *= base;
    exponent >>= 1U;
    if (exponent > 0) base *= base;
  }
  return result;
}

std::ostream& operator<<(std::ostream& os, const Rational& r) { return os << r.str(); }

}  // namespace kstep
