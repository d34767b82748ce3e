#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <boost/multiprecision/cpp_int.hpp>

namespace lct::math {

using Rational = boost::multiprecision::cpp_rational;

/// A final answer: the raw extracted text and its canonical form.
/// `value` is set when the canonical form is a pure numeric expression.
struct Answer {
  std::string raw;
  std::string canonical;
  std::optional<Rational> value;
};

/// Canonical string. Layout is stripped, \frac/\sqrt/^{} are rewritten, and
/// anything that evaluates to an exact rational is printed as "p" or "p/q".
std::string normalize(std::string_view raw);

Answer make_answer(std::string_view raw);

/// Contents of the last balanced \boxed{...}; otherwise the last "answer is X"
/// line; otherwise nullopt.
std::optional<Answer> extract_answer(std::string_view text);

/// Exact rational equality, or numeric agreement within 1e-9 relative, or
/// identical canonical strings.
bool equivalent(const Answer& a, const Answer& b);
bool equivalent(std::string_view a, std::string_view b);

/// Evaluates + - * / ^ (integer powers), parentheses and decimals exactly.
/// Returns nullopt for anything else (including division by zero).
std::optional<Rational> parse_rational(std::string_view expr);

std::string to_string(const Rational& value);

}  // namespace lct::math
