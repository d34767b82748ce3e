#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "lct/error.hpp"
#include "lct/niah_bench.hpp"
#include "lct/rng.hpp"
#include "lct/tokenize.hpp"

using namespace lct;
using namespace lct::niah;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json load_fixture() {
  std::ifstream in(fs::path(LCT_FIXTURES_DIR) / "niah" / "grid25.json");
  return json::parse(in);
}

NiahSpec fixture_spec(const json& fx) {
  NiahSpec spec;
  spec.lengths = fx["lengths"].get<std::vector<int>>();
  spec.depths = fx["depths"].get<std::vector<double>>();
  for (const auto& n : fx["needles"]) spec.needles.push_back({n["text"], n["question"], n["expected"]});
  spec.max_tokens = 256;
  spec.retry.base_delay = std::chrono::milliseconds(0);
  return spec;
}

std::vector<MockBackend::Rule> fixture_rules(const json& fx) {
  std::vector<MockBackend::Rule> rules;
  for (const auto& r : fx["rules"]) rules.push_back({r["match"], r["response"]});
  return rules;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fails every request whose prompt contains `marker`.
class SelectiveFailClient : public ChatClient {
 public:
  SelectiveFailClient(ChatClient& inner, std::string marker) : marker_(std::move(marker)), inner_(inner) {}
  ChatResponse complete(const ChatRequest& request) override {
    ++calls_;
    if (!marker_.empty() && request.messages.back().content.find(marker_) != std::string::npos) {
      throw TransportError("injected failure");
    }
    return inner_.complete(request);
  }
  std::size_t calls() const override { return calls_; }
  std::string marker_;

 private:
  ChatClient& inner_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace

TEST(BuildCase, HitsTargetWithinTolerance) {
  const auto corpus = synthetic_corpus(2000);
  const auto c = build_case(corpus, 1024, 0.5, default_needle());
  EXPECT_GE(c.token_count, 1004u);
  EXPECT_LE(c.token_count, 1044u);
  EXPECT_EQ(c.token_count, word_punct_count(c.prompt));
  EXPECT_TRUE(within_tolerance(1004, 1024));
  EXPECT_TRUE(within_tolerance(1044, 1024));
  EXPECT_FALSE(within_tolerance(1003, 1024));
  EXPECT_FALSE(within_tolerance(1045, 1024));
  EXPECT_TRUE(within_tolerance(11, 10));
  EXPECT_FALSE(within_tolerance(12, 10));
}

TEST(BuildCase, NeedlePlacement) {
  const auto corpus = synthetic_corpus(500);
  const auto needle = default_needle();
  const auto top = build_case(corpus, 512, 0.0, needle);
  const auto bottom = build_case(corpus, 512, 1.0, needle);
  EXPECT_EQ(top.needle_sentence, 0u);
  const auto body_start = top.prompt.find("\n\n") + 2;
  EXPECT_EQ(top.prompt.compare(body_start, needle.text.size(), needle.text), 0);
  const auto q = bottom.prompt.find("\n\nQuestion: ");
  ASSERT_NE(q, std::string::npos);
  EXPECT_EQ(bottom.prompt.compare(q - needle.text.size(), needle.text.size(), needle.text), 0);
  EXPECT_TRUE(bottom.prompt.ends_with("\n\nQuestion: " + needle.question + "\nAnswer:"));

  std::size_t prev = 0;
  for (double d = 0.0; d <= 1.0; d += 0.05) {
    const auto c = build_case(corpus, 512, d, needle);
    EXPECT_GE(c.needle_sentence, prev);
    prev = c.needle_sentence;
  }
}

TEST(BuildCase, Property) {
  const auto corpus = synthetic_corpus(4000);
  Rng rng(7);
  for (int t = 0; t < 200; ++t) {
    const int len = static_cast<int>(rng.uniform_int(64, 16384));
    const double depth = rng.uniform();
    const auto c = build_case(corpus, len, depth, default_needle());
    EXPECT_TRUE(within_tolerance(c.token_count, len)) << len << " " << c.token_count;
    std::size_t hits = 0;
    for (auto p = c.prompt.find(default_needle().text); p != std::string::npos;
         p = c.prompt.find(default_needle().text, p + 1)) {
      ++hits;
    }
    EXPECT_EQ(hits, 1u);
  }
}

TEST(BuildCase, Errors) {
  const auto corpus = synthetic_corpus(20);
  EXPECT_THROW(
      {
        try {
          build_case(corpus, 8192, 0.5, default_needle());
        } catch (const Error& e) {
          EXPECT_EQ(e.kind(), ErrorKind::CorpusTooShort);
          throw;
        }
      },
      Error);
  EXPECT_THROW(build_case(corpus, 128, 1.5, default_needle()), Error);
  EXPECT_THROW(build_case(corpus, 128, -0.1, default_needle()), Error);
  auto with_needle = synthetic_corpus(200);
  with_needle.insert(with_needle.begin() + 3, default_needle().text);
  EXPECT_THROW(build_case(with_needle, 1024, 0.9, default_needle()), Error);
}

TEST(SplitSentences, Basics) {
  EXPECT_EQ(split_sentences("One. Two?  Three!\nFour"), (std::vector<std::string>{"One.", "Two?", "Three!", "Four"}));
  EXPECT_EQ(split_sentences("Pi is 3.14 today. Yes."), (std::vector<std::string>{"Pi is 3.14 today.", "Yes."}));
  EXPECT_TRUE(split_sentences("  \n ").empty());
}

TEST(Score, ThreeWay) {
  EXPECT_EQ(score_response("The code is amber 7316.", "amber 7316"), 1);
  EXPECT_EQ(score_response("AMBER\n 7316", "amber 7316"), 1);
  EXPECT_EQ(score_response("The code is amber 731.", "amber 7316"), 0);
  EXPECT_EQ(score_response("", "amber 7316"), 0);
  std::string loop;
  for (int i = 0; i < 6; ++i) loop += "Let me read the document once more. ";
  EXPECT_EQ(score_response(loop, "amber 7316"), -1);
  EXPECT_EQ(score_response("amber 7316. " + loop, "amber 7316"), 1);
}

TEST(EffectiveLength, Examples) {
  const std::vector<int> lengths = {4096, 8192, 16384, 32768};
  EXPECT_EQ(effective_context_length(lengths, {1.0, 1.0, 0.9, 0.4}, 0.85), 16384);
  EXPECT_EQ(effective_context_length(lengths, {0.8, 1.0, 1.0, 1.0}, 0.85), 0);
  EXPECT_EQ(effective_context_length(lengths, {1.0, 0.84, 1.0, 1.0}, 0.85), 4096);
  EXPECT_EQ(effective_context_length(lengths, {1.0, 1.0, 1.0, 1.0}, 0.85), 32768);
  EXPECT_EQ(effective_context_length(lengths, {0.85, 0.85, 0.85, 0.85}, 0.85), 32768);
  EXPECT_EQ(effective_context_length(lengths, {1.0, std::nullopt, 1.0, 1.0}, 0.85), 4096);
  EXPECT_THROW(effective_context_length({}, {}, 0.85), Error);
  EXPECT_THROW(effective_context_length({2, 1}, {1.0, 1.0}, 0.85), Error);
  EXPECT_THROW(effective_context_length(lengths, {1.0}, 0.85), Error);
}

TEST(Aggregate, EmptyGridThrows) {
  const auto g = NiahGrid::empty({256}, {0.5});
  EXPECT_THROW(aggregate_score(g), Error);
  EXPECT_THROW(aggregate_score(NiahGrid{}), Error);
}

TEST(ParseLength, Forms) {
  EXPECT_EQ(parse_length("1k"), 1024);
  EXPECT_EQ(parse_length("32K"), 32768);
  EXPECT_EQ(parse_length("4000"), 4000);
  EXPECT_THROW(parse_length("k"), Error);
  EXPECT_THROW(parse_length("1.5k"), Error);
  EXPECT_THROW(parse_length("-4"), Error);
}

TEST(ScriptedGrid, MatchesHandScores) {
  const auto fx = load_fixture();
  const auto spec = fixture_spec(fx);
  MockBackend mock(MockBackend::Mode::Script, fixture_rules(fx));
  const auto dir = fresh_dir("lct_niah_grid25");
  const auto stats = run_grid(mock, spec, dir);
  EXPECT_EQ(stats.requested, 25u);
  EXPECT_EQ(stats.unscored, 0u);
  EXPECT_EQ(mock.calls(), 25u);

  const auto grid = NiahGrid::from_json(json::parse(slurp(dir / "grid.json")));
  const auto hand = fx["scores"].get<std::vector<int>>();
  ASSERT_EQ(grid.cells.size(), hand.size());
  for (std::size_t i = 0; i < hand.size(); ++i) {
    ASSERT_TRUE(grid.cells[i].score.has_value()) << i;
    EXPECT_EQ(*grid.cells[i].score, hand[i]) << "case " << i << ": " << grid.cells[i].response;
  }
  EXPECT_EQ(aggregate_score(grid), fx["aggregate"].get<double>());
  EXPECT_EQ(aggregate_score(grid), 56.0);
  const auto acc = length_accuracies(grid);
  const auto want = fx["length_accuracy"].get<std::vector<double>>();
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(*acc[i], want[i]);
  EXPECT_EQ(effective_context_length(grid, 0.85), fx["effective_length"].get<int>());
  EXPECT_EQ(effective_context_length(grid, 0.85), 512);

  const auto summ = json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(summ["aggregate"], 56.0);
  EXPECT_EQ(summ["effective_length"], 512);
  EXPECT_EQ(summ["unscored_count"], 0);

  const auto svg = slurp(dir / "heatmap.svg");
  std::size_t rects = 0;
  for (auto p = svg.find("class=\"cell\""); p != std::string::npos; p = svg.find("class=\"cell\"", p + 1)) ++rects;
  EXPECT_EQ(rects, 25u);
  const auto csv = slurp(dir / "scores.csv");
  EXPECT_TRUE(csv.starts_with("length,depth,score\n256,0,1\n256,0.25,1\n"));
  EXPECT_NE(csv.find("2048,0.5,-1\n"), std::string::npos);
}

TEST(ScriptedGrid, DeterministicAndResumable) {
  const auto fx = load_fixture();
  auto spec = fixture_spec(fx);
  const auto a = fresh_dir("lct_niah_det_a");
  const auto b = fresh_dir("lct_niah_det_b");
  MockBackend m1(MockBackend::Mode::Script, fixture_rules(fx));
  MockBackend m2(MockBackend::Mode::Script, fixture_rules(fx));
  spec.concurrency = 1;
  run_grid(m1, spec, a);
  spec.concurrency = 4;
  run_grid(m2, spec, b);
  for (const char* f : {"grid.json", "scores.csv", "heatmap.svg", "summary.json"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }

  MockBackend m3(MockBackend::Mode::Script, fixture_rules(fx));
  const auto again = run_grid(m3, spec, a);
  EXPECT_EQ(again.requested, 0u);
  EXPECT_EQ(again.skipped, 25u);
  EXPECT_EQ(m3.calls(), 0u);

  auto other = spec;
  other.lengths.back() = 8192;
  EXPECT_THROW(run_grid(m3, other, a), Error);
}

TEST(ScriptedGrid, UnscoredCasesAreRetriedOnResume) {
  const auto fx = load_fixture();
  const auto spec = fixture_spec(fx);
  MockBackend mock(MockBackend::Mode::Script, fixture_rules(fx));
  SelectiveFailClient flaky(mock, "vault 07?");
  const auto dir = fresh_dir("lct_niah_unscored");
  const auto stats = run_grid(flaky, spec, dir);
  EXPECT_EQ(stats.unscored, 1u);
  const auto grid = NiahGrid::from_json(json::parse(slurp(dir / "grid.json")));
  EXPECT_TRUE(grid.cells[7].unscored());
  EXPECT_EQ(grid.scored_count(), 24u);
  EXPECT_NE(slurp(dir / "heatmap.svg").find("unscored"), std::string::npos);
  EXPECT_EQ(json::parse(slurp(dir / "summary.json"))["unscored_count"], 1);

  flaky.marker_.clear();
  const auto resumed = run_grid(flaky, spec, dir);
  EXPECT_EQ(resumed.requested, 1u);
  EXPECT_EQ(resumed.unscored, 0u);
  const auto done = NiahGrid::from_json(json::parse(slurp(dir / "grid.json")));
  EXPECT_EQ(done.scored_count(), 25u);
  EXPECT_EQ(aggregate_score(done), 56.0);
}

TEST(ScriptedGrid, DeadBackendThrows) {
  const auto fx = load_fixture();
  auto spec = fixture_spec(fx);
  spec.lengths = {256};
  spec.depths = {0.5};
  MockBackend dead(MockBackend::Mode::Echo, {}, 1000);
  try {
    run_grid(dead, spec, fresh_dir("lct_niah_dead"));
    FAIL() << "expected BackendUnreachable";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BackendUnreachable);
  }
}

TEST(NiahGrid, JsonRoundTrip) {
  auto g = NiahGrid::empty({256, 512}, {0.0, 1.0});
  g.at(0, 0).score = 1;
  g.at(0, 1).score = -1;
  g.at(1, 0).error = "down";
  g.at(1, 1).response = "x";
  const auto back = NiahGrid::from_json(g.to_json());
  EXPECT_EQ(back.to_json(), g.to_json());
  EXPECT_EQ(back.unscored_count(), 1u);
  auto bad = g.to_json();
  bad["cells"][0]["score"] = 2;
  EXPECT_THROW(NiahGrid::from_json(bad), Error);
  bad = g.to_json();
  bad["cells"].erase(0);
  EXPECT_THROW(NiahGrid::from_json(bad), Error);
}

TEST(NiahSpec, Validation) {
  NiahSpec s;
  s.lengths = {256};
  s.depths = {0.5};
  s.needles = {default_needle()};
  EXPECT_NO_THROW(s.validate());
  auto t = s;
  t.lengths = {512, 256};
  EXPECT_THROW(t.validate(), Error);
  t = s;
  t.depths = {1.2};
  EXPECT_THROW(t.validate(), Error);
  t = s;
  t.needles.clear();
  EXPECT_THROW(t.validate(), Error);
  t = s;
  t.lengths.clear();
  EXPECT_THROW(t.validate(), Error);
}
