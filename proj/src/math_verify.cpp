#include "lct/math_verify.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>
#include <vector>

namespace lct::math {

namespace {

constexpr int kMaxExponent = 256;
constexpr std::size_t kMaxDigits = 4096;

// Number, identifier or a bare command such as \pi.
bool is_atomic(std::string_view s) {
  if (s.size() > 1 && s[0] == '\\') {
    return std::all_of(s.begin() + 1, s.end(), [](unsigned char c) { return std::isalpha(c); });
  }
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) || c == '.'; });
}

std::string wrap(std::string_view s) {
  if (is_atomic(s)) return std::string(s);
  return "(" + std::string(s) + ")";
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

// Index just past the group that opens at s[open] == '{', or npos when unbalanced.
std::size_t match_brace(std::string_view s, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < s.size(); ++i) {
    if (s[i] == '{') ++depth;
    if (s[i] == '}' && --depth == 0) return i + 1;
  }
  return std::string_view::npos;
}

// One macro argument starting at `pos`: a braced group or a single character.
// Returns {content, end} or nullopt.
std::optional<std::pair<std::string, std::size_t>> read_arg(const std::string& s, std::size_t pos) {
  if (pos >= s.size()) return std::nullopt;
  if (s[pos] == '{') {
    const auto end = match_brace(s, pos);
    if (end == std::string::npos) return std::nullopt;
    return std::make_pair(s.substr(pos + 1, end - pos - 2), end);
  }
  if (s[pos] == '\\' || s[pos] == '}') return std::nullopt;
  return std::make_pair(s.substr(pos, 1), pos + 1);
}

// \cmd{content} -> content for text-style wrappers.
bool unwrap_command(std::string& s, std::string_view cmd) {
  const auto pos = s.find(cmd);
  if (pos == std::string::npos) return false;
  const auto open = pos + cmd.size();
  if (open >= s.size() || s[open] != '{') {
    s.erase(pos, cmd.size());
    return true;
  }
  const auto end = match_brace(s, open);
  if (end == std::string::npos) {
    s.erase(pos, cmd.size());
    return true;
  }
  s = s.substr(0, pos) + s.substr(open + 1, end - open - 2) + s.substr(end);
  return true;
}

bool rewrite_frac(std::string& s) {
  for (std::string_view cmd : {"\\frac", "\\dfrac", "\\tfrac"}) {
    const auto pos = s.find(cmd);
    if (pos == std::string::npos) continue;
    const auto num = read_arg(s, pos + cmd.size());
    if (!num) continue;
    const auto den = read_arg(s, num->second);
    if (!den) continue;
    s = s.substr(0, pos) + wrap(num->first) + "/" + wrap(den->first) + s.substr(den->second);
    return true;
  }
  return false;
}

bool rewrite_sqrt(std::string& s) {
  const auto pos = s.find("\\sqrt");
  if (pos == std::string::npos) return false;
  const auto arg = read_arg(s, pos + 5);
  if (!arg) return false;
  s = s.substr(0, pos) + "sqrt(" + arg->first + ")" + s.substr(arg->second);
  return true;
}

bool rewrite_power(std::string& s) {
  for (std::size_t pos = s.find("^{"); pos != std::string::npos; pos = s.find("^{", pos + 1)) {
    const auto end = match_brace(s, pos + 1);
    if (end == std::string::npos) continue;
    const std::string inner = s.substr(pos + 2, end - pos - 3);
    s = s.substr(0, pos + 1) + wrap(inner) + s.substr(end);
    return true;
  }
  return false;
}

// Drops redundant outer braces "{x}" left over after other rewrites.
bool strip_outer_braces(std::string& s) {
  if (s.size() >= 2 && s.front() == '{' && match_brace(s, 0) == s.size()) {
    s = s.substr(1, s.size() - 2);
    return true;
  }
  return false;
}

std::string strip_layout(std::string s) {
  for (std::string_view cmd : {"\\left", "\\right", "\\displaystyle", "\\!", "\\,", "\\;", "\\:", "\\ ", "\\qquad",
                               "\\quad", "$"}) {
    replace_all(s, cmd, "");
  }
  replace_all(s, "\\%", "%");
  replace_all(s, "\\cdot", "*");
  replace_all(s, "\\times", "*");
  replace_all(s, "^\\circ", "");
  replace_all(s, "^{\\circ}", "");
  replace_all(s, "\\{", "{");
  replace_all(s, "\\}", "}");
  std::string out;
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  }
  return out;
}

bool is_thousands_grouped(const std::string& s) {
  static const std::regex re(R"(^[-+]?\d{1,3}(,\d{3})+(\.\d+)?$)");
  return std::regex_match(s, re);
}

std::string rewrite_once(std::string s) {
  s = strip_layout(std::move(s));
  for (std::string_view cmd : {"\\text", "\\textbf", "\\mathrm", "\\mathbf", "\\mbox", "\\operatorname"}) {
    while (unwrap_command(s, cmd)) {
    }
  }
  while (rewrite_frac(s) || rewrite_sqrt(s) || rewrite_power(s)) {
  }
  while (strip_outer_braces(s)) {
  }
  while (!s.empty() && (s.back() == '.' || s.back() == ',')) s.pop_back();
  if (s.size() > 1 && s.front() == '+') s.erase(0, 1);
  if (is_thousands_grouped(s)) replace_all(s, ",", "");
  return s;
}

// Recursive-descent evaluator over the canonical character set.
class Parser {
 public:
  explicit Parser(std::string_view s) : s_(s) {}

  std::optional<Rational> run() {
    auto v = expr();
    if (!v || pos_ != s_.size()) return std::nullopt;
    return v;
  }

 private:
  std::optional<Rational> expr() {
    auto lhs = term();
    while (lhs && pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) {
      const char op = s_[pos_++];
      auto rhs = term();
      if (!rhs) return std::nullopt;
      lhs = op == '+' ? Rational(*lhs + *rhs) : Rational(*lhs - *rhs);
    }
    return lhs;
  }

  std::optional<Rational> term() {
    auto lhs = unary();
    while (lhs && pos_ < s_.size() && (s_[pos_] == '*' || s_[pos_] == '/')) {
      const char op = s_[pos_++];
      auto rhs = unary();
      if (!rhs) return std::nullopt;
      if (op == '/') {
        if (*rhs == 0) return std::nullopt;
        lhs = *lhs / *rhs;
      } else {
        lhs = *lhs * *rhs;
      }
      if (too_big(*lhs)) return std::nullopt;
    }
    return lhs;
  }

  std::optional<Rational> unary() {
    if (pos_ < s_.size() && (s_[pos_] == '-' || s_[pos_] == '+')) {
      const bool neg = s_[pos_++] == '-';
      auto v = unary();
      if (!v) return std::nullopt;
      return neg ? Rational(-*v) : *v;
    }
    return power();
  }

  std::optional<Rational> power() {
    auto base = primary();
    if (!base || pos_ >= s_.size() || s_[pos_] != '^') return base;
    ++pos_;
    auto exp = unary();
    if (!exp || boost::multiprecision::denominator(*exp) != 1) return std::nullopt;
    const auto e = boost::multiprecision::numerator(*exp);
    if (e > kMaxExponent || e < -kMaxExponent) return std::nullopt;
    const int n = static_cast<int>(e);
    if (n < 0 && *base == 0) return std::nullopt;
    Rational result = 1;
    for (int i = 0; i < std::abs(n); ++i) {
      result *= *base;
      if (too_big(result)) return std::nullopt;
    }
    return n < 0 ? Rational(1 / result) : result;
  }

  std::optional<Rational> primary() {
    if (pos_ < s_.size() && s_[pos_] == '(') {
      ++pos_;
      auto v = expr();
      if (!v || pos_ >= s_.size() || s_[pos_] != ')') return std::nullopt;
      ++pos_;
      return v;
    }
    return number();
  }

  std::optional<Rational> number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    std::string digits(s_.substr(start, pos_ - start));
    std::size_t frac_digits = 0;
    if (pos_ < s_.size() && s_[pos_] == '.') {
      ++pos_;
      const std::size_t frac_start = pos_;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      frac_digits = pos_ - frac_start;
      digits += s_.substr(frac_start, frac_digits);
    }
    if (digits.empty() || digits.size() > kMaxDigits) return std::nullopt;
    // cpp_int reads a leading zero as an octal prefix.
    digits.erase(0, std::min(digits.find_first_not_of('0'), digits.size() - 1));
    Rational v{boost::multiprecision::cpp_int(digits)};
    if (frac_digits > 0) v /= boost::multiprecision::pow(boost::multiprecision::cpp_int(10), static_cast<unsigned>(frac_digits));
    return v;
  }

  static bool too_big(const Rational& v) {
    return boost::multiprecision::msb(boost::multiprecision::abs(boost::multiprecision::numerator(v)) + 1) > 8 * kMaxDigits ||
           boost::multiprecision::msb(boost::multiprecision::denominator(v)) > 8 * kMaxDigits;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

double to_double(const Rational& v) { return v.convert_to<double>(); }

}  // namespace

std::optional<Rational> parse_rational(std::string_view expr) {
  if (expr.empty()) return std::nullopt;
  return Parser(expr).run();
}

std::string to_string(const Rational& value) {
  const auto num = boost::multiprecision::numerator(value);
  const auto den = boost::multiprecision::denominator(value);
  if (den == 1) return num.str();
  return num.str() + "/" + den.str();
}

std::string normalize(std::string_view raw) {
  std::string s(raw);
  // Rewrites can expose new layout (e.g. braces around a \frac), so run to a fixpoint.
  for (int i = 0; i < 16; ++i) {
    std::string next = rewrite_once(s);
    if (next == s) break;
    s = std::move(next);
  }
  if (!s.empty() && s.back() == '%') {
    if (auto v = parse_rational(std::string_view(s).substr(0, s.size() - 1))) return to_string(*v / 100);
  }
  if (auto v = parse_rational(s)) return to_string(*v);
  return s;
}

Answer make_answer(std::string_view raw) {
  Answer a;
  a.raw = std::string(raw);
  a.canonical = normalize(raw);
  a.value = parse_rational(a.canonical);
  return a;
}

std::optional<Answer> extract_answer(std::string_view text) {
  constexpr std::string_view kBoxed = "\\boxed";
  for (std::size_t pos = text.rfind(kBoxed); pos != std::string_view::npos;
       pos = pos == 0 ? std::string_view::npos : text.rfind(kBoxed, pos - 1)) {
    std::size_t open = pos + kBoxed.size();
    while (open < text.size() && text[open] == ' ') ++open;
    if (open >= text.size() || text[open] != '{') continue;
    const auto end = match_brace(text, open);
    if (end == std::string_view::npos) continue;
    return make_answer(text.substr(open + 1, end - open - 2));
  }

  static const std::regex answer_is(R"((?:answer|Answer|ANSWER)\s+is\s*:?\s*(.+))");
  std::optional<std::string> last;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    auto nl = text.find('\n', begin);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string line(text.substr(begin, nl - begin));
    std::smatch m;
    if (std::regex_search(line, m, answer_is)) last = m[1].str();
    begin = nl + 1;
  }
  if (!last) return std::nullopt;
  std::string x = *last;
  while (!x.empty() && (std::isspace(static_cast<unsigned char>(x.back())) || x.back() == '.')) x.pop_back();
  if (x.empty()) return std::nullopt;
  return make_answer(x);
}

bool equivalent(const Answer& a, const Answer& b) {
  if (a.canonical == b.canonical) return true;
  if (a.value && b.value) {
    if (*a.value == *b.value) return true;
    const double x = to_double(*a.value), y = to_double(*b.value);
    if (std::isfinite(x) && std::isfinite(y)) {
      return std::abs(x - y) <= 1e-9 * std::max(std::abs(x), std::abs(y));
    }
  }
  return false;
}

bool equivalent(std::string_view a, std::string_view b) { return equivalent(make_answer(a), make_answer(b)); }

}  // namespace lct::math
