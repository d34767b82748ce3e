#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "lct/math_verify.hpp"

using namespace lct::math;

namespace {

struct Pair {
  std::string a;
  std::string b;
  bool expected;
};

// Hand-labelled verdicts, grouped in the fixture by what they exercise.
std::vector<Pair> curated_pairs() {
  std::ifstream in(std::string(LCT_FIXTURES_DIR) + "/math/curated_pairs.jsonl");
  std::vector<Pair> out;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j["a"], j["b"], j["equivalent"]});
  }
  return out;
}

}  // namespace

TEST(MathVerify, CuratedPairs) {
  const auto curated = curated_pairs();
  ASSERT_GE(curated.size(), 40u);
  int correct = 0;
  for (const auto& p : curated) {
    const bool got = equivalent(p.a, p.b);
    EXPECT_EQ(got, p.expected) << p.a << " vs " << p.b << " (" << normalize(p.a) << " | " << normalize(p.b) << ")";
    correct += got == p.expected;
  }
  EXPECT_EQ(correct, static_cast<int>(curated.size()));
}

TEST(MathVerify, NormalizeExamples) {
  EXPECT_EQ(normalize("\\frac{1}{2}"), "1/2");
  EXPECT_EQ(normalize("0.5"), "1/2");
  EXPECT_EQ(normalize("\\left( 3 , \\; 4 \\right)"), "(3,4)");
  EXPECT_EQ(normalize("50%"), "1/2");
  EXPECT_EQ(normalize("\\sqrt{x+1}"), "sqrt(x+1)");
  EXPECT_EQ(normalize("\\frac{a+b}{c}"), "(a+b)/c");
  EXPECT_EQ(normalize("e^{i\\pi}"), "e^(i\\pi)");
  const auto half = make_answer("\\frac{1}{2}");
  ASSERT_TRUE(half.value.has_value());
  EXPECT_EQ(*half.value, Rational(1, 2));
}

TEST(MathVerify, ExtractLastBoxed) {
  auto a = extract_answer("so the total is \\boxed{42}.");
  ASSERT_TRUE(a);
  EXPECT_EQ(a->raw, "42");
  a = extract_answer("\\boxed{\\frac{1}{2}} ... later \\boxed{3}");
  ASSERT_TRUE(a);
  EXPECT_EQ(a->raw, "3");
  a = extract_answer("nested \\boxed{\\frac{1}{\\sqrt{2}}} end");
  ASSERT_TRUE(a);
  EXPECT_EQ(a->raw, "\\frac{1}{\\sqrt{2}}");
  EXPECT_FALSE(extract_answer("\\boxed{1+{2"));
  EXPECT_FALSE(extract_answer("no final answer here"));
}

TEST(MathVerify, ExtractAnswerIsFallback) {
  auto a = extract_answer("Working...\nThe answer is 7.\nDouble-checking, the answer is $\\frac{3}{4}$.\nDone");
  ASSERT_TRUE(a);
  EXPECT_EQ(a->canonical, "3/4");
  // An earlier unbalanced box does not block the fallback.
  a = extract_answer("\\boxed{oops\nso the answer is: 12");
  ASSERT_TRUE(a);
  EXPECT_EQ(a->canonical, "12");
}

TEST(MathVerify, ExactnessOfRationalPath) {
  EXPECT_FALSE(equivalent("1/3", "0.33"));
  EXPECT_TRUE(equivalent("1/3", "0.3333333333"));
  EXPECT_FALSE(equivalent("1/3", "0.333333"));
  EXPECT_TRUE(equivalent("123456789012345678901234567890", "123456789012345678901234567890.0"));
  EXPECT_FALSE(equivalent("1/0", "2/0"));  // not numeric, different strings
}

TEST(MathVerify, ParserRejectsHostileInput) {
  EXPECT_FALSE(parse_rational("10^10^10").has_value());
  EXPECT_FALSE(parse_rational("((1)").has_value());
  EXPECT_FALSE(parse_rational("").has_value());
  EXPECT_FALSE(parse_rational("0^-1").has_value());
  EXPECT_EQ(*parse_rational("2^-2"), Rational(1, 4));
  EXPECT_EQ(*parse_rational("(1+2)*3-4/2"), Rational(7));
}

namespace {

std::string random_answer(std::mt19937_64& rng) {
  static const std::vector<std::string> atoms = {
      "1", "2", "0.5", "-3", "\\frac{1}{2}", "\\frac{3}{4}", "x", "y", "\\sqrt{2}", "\\pi", "50\\%", "1,000",
      "(", ")", "+", "-", "*", "/", "^{2}", " ", "\\left(", "\\right)", "$", "{", "}", ",", ".", "\\text{m}", "%"};
  std::uniform_int_distribution<std::size_t> pick(0, atoms.size() - 1);
  std::uniform_int_distribution<int> len(1, 8);
  std::string s;
  for (int i = len(rng); i > 0; --i) s += atoms[pick(rng)];
  return s;
}

}  // namespace

TEST(MathVerifyProperty, ReflexiveAndSymmetric) {
  std::mt19937_64 rng(20240611);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_answer(rng), b = random_answer(rng);
    EXPECT_TRUE(equivalent(a, a)) << a;
    EXPECT_EQ(equivalent(a, b), equivalent(b, a)) << a << " | " << b;
  }
}

TEST(MathVerifyProperty, NormalizeIdempotent) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_answer(rng);
    const auto once = normalize(a);
    EXPECT_EQ(normalize(once), once) << a;
  }
}
