// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria (capped at 125).
#include <CLI11.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>

#include "lct/backend.hpp"
#include "lct/data_pipeline.hpp"
#include "lct/error.hpp"
#include "lct/eval_harness.hpp"
#include "lct/math_verify.hpp"
#include "lct/model_surgery.hpp"
#include "lct/niah_bench.hpp"
#include "lct/rope.hpp"
#include "lct/tensor_store.hpp"
#include "lct/toy/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lct;
using Clock = std::chrono::steady_clock;

namespace {

fs::path g_fixtures = LCT_FIXTURES_DIR;
std::string g_lct = LCT_CLI_PATH;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string key;
  std::string title;
  std::function<Outcome()> run;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + p.string());
  std::vector<json> rows;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) rows.push_back(json::parse(line));
  }
  return rows;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

std::optional<ErrorKind> kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

// ---- checkpoint round-trip ----

Checkpoint random_checkpoint(std::mt19937_64& rng) {
  Checkpoint c;
  std::uniform_int_distribution<int> ntensors(0, 6), rank(0, 3), dim(0, 5), dt(0, 2), nmeta(0, 3);
  const int n = ntensors(rng);
  for (int t = 0; t < n; ++t) {
    std::vector<std::uint64_t> shape(static_cast<std::size_t>(rank(rng)));
    for (auto& d : shape) d = static_cast<std::uint64_t>(dim(rng));
    const auto dtype = static_cast<DType>(dt(rng));
    std::vector<std::byte> data(element_count(shape) * dtype_size(dtype));
    for (auto& b : data) b = static_cast<std::byte>(rng() & 0xFF);
    c.tensors.emplace("t" + std::to_string(rng() % 1000) + "." + std::to_string(t), Tensor(dtype, shape, data));
  }
  const int m = nmeta(rng);
  for (int i = 0; i < m; ++i) c.metadata["k" + std::to_string(i)] = "v" + std::to_string(rng());
  return c;
}

Outcome checkpoint_round_trip() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240501);
  const auto path = fs::temp_directory_path() / "lct_accept_roundtrip.lct";
  int ok = 0;
  for (int i = 0; i < 200; ++i) {
    const Checkpoint c = random_checkpoint(rng);
    save_checkpoint(c, path);
    const auto bytes = slurp(path);
    const Checkpoint back = load_checkpoint(path);
    save_checkpoint(back, path);
    if (back == c && slurp(path) == bytes) ++ok;
  }
  fs::remove(path);
  const double s = seconds_since(t0);
  return {ok == 200 && s < 60.0, std::to_string(ok) + "/200 bit-identical through disk, " + fmt(s) + " s"};
}

// ---- merge algebra ----

std::shared_ptr<const Checkpoint> random_model(std::mt19937_64& rng, DType dtype) {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto c = std::make_shared<Checkpoint>();
  const std::vector<std::vector<std::uint64_t>> shapes{{4}, {3, 5}, {2, 2, 2}};
  int i = 0;
  for (const auto& shape : shapes) {
    std::vector<double> v(element_count(shape));
    for (auto& x : v) x = normal(rng);
    c->tensors.emplace("layer" + std::to_string(i++), Tensor::from_values(dtype, shape, v));
  }
  c->metadata["rope_theta"] = "10000";
  return c;
}

std::int64_t ulp_distance(float a, float b) {
  auto key = [](float f) {
    const auto bits = static_cast<std::int64_t>(std::bit_cast<std::int32_t>(f));
    return bits < 0 ? std::int64_t{INT32_MIN} - bits : bits;
  };
  return std::llabs(key(a) - key(b));
}

Outcome merge_algebra() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int identity_fail = 0, self_fail = 0, perm_fail = 0;
  std::int64_t worst_ulp = 0;
  for (int trial = 0; trial < 100; ++trial) {
    for (DType dt : {DType::F32, DType::F16, DType::BF16}) {
      auto a = random_model(rng, dt), b = random_model(rng, dt);
      if (linear_merge({{{"a", a, 1.0}, {"b", b, 0.0}}}).tensors != a->tensors) ++identity_fail;
      if (linear_merge({{{"a", a, 0.0}, {"b", b, 1.0}}}).tensors != b->tensors) ++identity_fail;
    }
    auto a = random_model(rng, DType::F32);
    const double r = unit(rng);
    const Checkpoint self = linear_merge({{{"a", a, 1.0 - r}, {"a", a, r}}});
    for (const auto& [name, t] : a->tensors) {
      const auto& m = self.tensors.at(name);
      for (std::size_t i = 0; i < t.numel(); ++i) {
        const auto d = ulp_distance(static_cast<float>(t.value(i)), static_cast<float>(m.value(i)));
        worst_ulp = std::max(worst_ulp, d);
        if (d > 1) ++self_fail;
      }
    }
    MergeSpec spec;
    std::vector<double> w{unit(rng), unit(rng), unit(rng), unit(rng)};
    const double sum = std::accumulate(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      spec.entries.push_back({"m" + std::to_string(i), random_model(rng, DType::BF16), w[i] / sum});
    }
    try {
      const Checkpoint reference = linear_merge(spec);
      std::shuffle(spec.entries.begin(), spec.entries.end(), rng);
      if (linear_merge(spec).tensors != reference.tensors) ++perm_fail;
    } catch (const Error&) {
      ++perm_fail;
    }
  }
  auto a = random_model(rng, DType::F32);
  int rejected = 0;
  const std::vector<MergeSpec> bad{{}, {{{"a", a, 0.5}, {"a", a, 0.6}}}, {{{"a", a, 1.5}, {"a", a, -0.5}}},
                                   {{{"a", a, 2.0}}}, {{{"a", a, 0.5}, {"a", a, 0.49}}}};
  for (const auto& spec : bad) rejected += kind_of([&] { linear_merge(spec); }) == ErrorKind::WeightSumInvalid;
  const double s = seconds_since(t0);
  const bool pass = identity_fail == 0 && self_fail == 0 && perm_fail == 0 &&
                    rejected == static_cast<int>(bad.size()) && s < 60.0;
  return {pass, "identity failures " + std::to_string(identity_fail) + ", self-merge max " +
                    std::to_string(worst_ulp) + " ulp, permutation failures " + std::to_string(perm_fail) +
                    ", bad weight sums rejected " + std::to_string(rejected) + "/" + std::to_string(bad.size()) +
                    ", " + fmt(s) + " s"};
}

// ---- rope ----

double norm(std::span<const double> v) { return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)); }

std::vector<double> random_vec(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = d(rng);
  return v;
}

Outcome rope_properties() {
  std::mt19937_64 rng(3);
  double drift = 0.0, shift = 0.0, law = 0.0;
  const auto table = rope::build_table(64, 10000);
  for (int i = 0; i < 1000; ++i) {
    const auto v = random_vec(rng, 64);
    const auto pos = static_cast<std::int64_t>(rng() % (1u << 20));
    drift = std::max(drift, std::fabs(norm(rope::apply<double>(v, pos, table)) - norm(v)) / norm(v));
  }
  for (int i = 0; i < 1000; ++i) {
    const auto q = random_vec(rng, 64), k = random_vec(rng, 64);
    const auto m = static_cast<std::int64_t>(rng() % 32768), n = static_cast<std::int64_t>(rng() % 32768);
    const auto delta = static_cast<std::int64_t>(rng() % 32768);
    const auto a = rope::apply<double>(q, m, table), b = rope::apply<double>(k, n, table);
    const auto c = rope::apply<double>(q, m + delta, table), d = rope::apply<double>(k, n + delta, table);
    const double base = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
    const double moved = std::inner_product(c.begin(), c.end(), d.begin(), 0.0);
    shift = std::max(shift, std::fabs(base - moved) / (norm(q) * norm(k)));
  }
  std::uniform_real_distribution<double> factor(1.0, 64.0), theta(2.0, 1e6);
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 2 * static_cast<int>(1 + rng() % 64);
    const double th = theta(rng), f = factor(rng);
    const auto t1 = rope::build_table(d, th), t2 = rope::build_table(d, f * th);
    for (int i = 0; i < d / 2; ++i) {
      const double want = t1.freqs[static_cast<std::size_t>(i)] * std::pow(f, -2.0 * i / d);
      law = std::max(law, std::fabs(t2.freqs[static_cast<std::size_t>(i)] - want) / want);
    }
  }
  const bool pass = drift <= 1e-6 && shift <= 1e-5 && law <= 1e-12;
  return {pass, "norm drift " + fmt(drift) + ", shift error " + fmt(shift) + " (1000 samples), scaling law " +
                    fmt(law) + " relative"};
}

// ---- toy grad check ----

Outcome toy_grad_check() {
  const auto t0 = Clock::now();
  const auto report = toy::grad_check_report(toy::tiny_config(), 11);
  double worst = 0.0;
  for (const auto& [name, err] : report.per_tensor) worst = std::max(worst, err);
  const double s = seconds_since(t0);
  const bool pass = !report.per_tensor.empty() && worst <= 1e-4 && s < 120.0;
  return {pass, std::to_string(report.per_tensor.size()) + " tensors, worst relative error " + fmt(worst) + ", " +
                    fmt(s) + " s"};
}

// ---- toy mechanism ----

Outcome toy_mechanism() {
  const auto t0 = Clock::now();
  int passing = 0, failing = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    if (passing >= 2 || failing >= 2) break;  // outcome decided
    const auto e = toy::mechanism_experiment(seed);
    const auto ckpt = toy::train(e.model, e.steps, e.lr, e.train);
    const auto rows = toy::sweep(ckpt, e.train.task, e.factors, e.lengths, e.trials, e.eval_seed, e.train.task_options);
    std::map<double, double> acc;
    for (const auto& r : rows) acc[r.factor] = r.accuracy;
    double best_margin = -1.0, best_f = 0.0;
    for (const auto& [f, a] : acc) {
      if (f == 1.0 || f == 32.0) continue;
      const double margin = std::min(a - acc[1.0], a - acc[32.0]);
      if (margin > best_margin) best_margin = margin, best_f = f;
    }
    const bool ok = best_margin >= 0.1;
    (ok ? passing : failing)++;
    std::ostringstream os;
    os << "seed " << seed << ":";
    for (const auto& [f, a] : acc) os << " f" << f << "=" << fmt(a);
    os << " (best f" << best_f << " margin " << fmt(best_margin) << ")";
    std::cout << "  " << os.str() << "\n" << std::flush;
    detail += (detail.empty() ? "" : "; ") + os.str();
  }
  const double s = seconds_since(t0);
  return {passing >= 2 && s < 1800.0,
          std::to_string(passing) + " seed(s) show an interior optimum, " + fmt(s, 4) + " s; " + detail};
}

// ---- niah ----

Outcome niah_grid() {
  const auto fx = json::parse(slurp(g_fixtures / "niah" / "grid25.json"));
  niah::NiahSpec spec;
  spec.lengths = fx["lengths"].get<std::vector<int>>();
  spec.depths = fx["depths"].get<std::vector<double>>();
  for (const auto& n : fx["needles"]) spec.needles.push_back({n["text"], n["question"], n["expected"]});
  spec.max_tokens = 256;
  spec.retry.base_delay = std::chrono::milliseconds(0);
  std::vector<MockBackend::Rule> rules;
  for (const auto& r : fx["rules"]) rules.push_back({r["match"], r["response"]});
  MockBackend mock(MockBackend::Mode::Script, rules);
  const auto dir = fresh_dir("lct_accept_niah");
  niah::run_grid(mock, spec, dir);
  const auto grid = niah::NiahGrid::from_json(json::parse(slurp(dir / "grid.json")));
  const auto hand = fx["scores"].get<std::vector<int>>();
  int matches = 0;
  for (std::size_t i = 0; i < hand.size() && i < grid.cells.size(); ++i) {
    matches += grid.cells[i].score && *grid.cells[i].score == hand[i];
  }
  const double agg = niah::aggregate_score(grid);
  const int eff = niah::effective_context_length(grid, 0.85);
  const int example = niah::effective_context_length({4096, 8192, 16384, 32768}, {1.0, 1.0, 0.9, 0.4}, 0.85);
  const bool pass = hand.size() == 25 && grid.cells.size() == 25 && matches == 25 &&
                    agg == fx["aggregate"].get<double>() && eff == fx["effective_length"].get<int>() &&
                    example == 16384;
  return {pass, std::to_string(matches) + "/25 cells match hand scores, aggregate " + fmt(agg) +
                    ", effective length " + std::to_string(eff) + ", [1,1,.9,.4]@.85 -> " + std::to_string(example)};
}

Outcome niah_scoring() {
  std::string loop;
  for (int i = 0; i < 6; ++i) loop += "Let me read the document once more. ";
  struct Case {
    std::string response;
    int want;
  };
  const std::vector<Case> cases{{"The passphrase is Amber Falcon 7316.", 1},
                                {"amber   falcon\n7316", 1},
                                {loop, -1},
                                {"The passphrase is silver heron 4410.", 0},
                                {"I could not find that in the document.", 0},
                                {"", 0}};
  int ok = 0;
  for (const auto& c : cases) ok += niah::score_response(c.response, "amber falcon 7316") == c.want;
  return {ok == static_cast<int>(cases.size()),
          std::to_string(ok) + "/" + std::to_string(cases.size()) + " responses scored as labelled"};
}

// ---- math ----

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

Outcome math_equivalence() {
  const auto rows = read_jsonl(g_fixtures / "math" / "curated_pairs.jsonl");
  int ok = 0;
  for (const auto& r : rows) {
    ok += math::equivalent(r["a"].get<std::string>(), r["b"].get<std::string>()) == r["equivalent"].get<bool>();
  }
  std::mt19937_64 rng(20240611);
  int law_fail = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_answer(rng), b = random_answer(rng);
    if (!math::equivalent(a, a) || math::equivalent(a, b) != math::equivalent(b, a)) ++law_fail;
  }
  for (const auto& r : rows) {
    const auto a = r["a"].get<std::string>(), b = r["b"].get<std::string>();
    if (!math::equivalent(a, a) || math::equivalent(a, b) != math::equivalent(b, a)) ++law_fail;
  }
  const bool pass = rows.size() >= 40 && ok == static_cast<int>(rows.size()) && law_fail == 0;
  return {pass, std::to_string(ok) + "/" + std::to_string(rows.size()) +
                    " curated pairs, reflexivity/symmetry violations " + std::to_string(law_fail)};
}

// ---- data split ----

Outcome data_split() {
  auto sample = [](std::string id, std::int64_t n) {
    data::ReasoningSample s;
    s.id = std::move(id);
    s.token_len = n;
    return s;
  };
  const auto edge = data::split_by_length({sample("a", 8192), sample("b", 8193), sample("c", 16385)});
  const bool edges_ok = edge.short_set.size() == 1 && edge.short_set[0].id == "a" && edge.long_set.size() == 1 &&
                        edge.long_set[0].id == "b" && edge.discarded.size() == 1 && edge.discarded[0].id == "c";
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::int64_t> len(0, 40000);
  std::vector<data::ReasoningSample> input;
  for (int i = 0; i < 10000; ++i) input.push_back(sample("s" + std::to_string(i), len(rng)));
  const auto r = data::split_by_length(input);
  std::set<std::string> seen;
  bool disjoint = true, ranges = true;
  for (const auto* part : {&r.short_set, &r.long_set, &r.discarded}) {
    for (const auto& s : *part) disjoint &= seen.insert(s.id).second;
  }
  for (const auto& s : r.short_set) ranges &= s.token_len <= 8192;
  for (const auto& s : r.long_set) ranges &= s.token_len > 8192 && s.token_len <= 16384;
  for (const auto& s : r.discarded) ranges &= s.token_len > 16384;
  const bool cover = seen.size() == input.size();
  return {edges_ok && disjoint && ranges && cover,
          std::string("boundaries ") + (edges_ok ? "ok" : "wrong") + ", 10^4 lengths: " + std::to_string(r.short_set.size()) +
              " short / " + std::to_string(r.long_set.size()) + " long / " + std::to_string(r.discarded.size()) +
              " discarded, " + (disjoint && cover && ranges ? "exact partition" : "partition violated")};
}

// ---- pass@1 ----

Outcome pass_at_1() {
  const auto rows = read_jsonl(g_fixtures / "eval" / "pass_at_1.jsonl");
  std::vector<eval::EvalRecord> records;
  int labels = 0, positive = 0, label_mismatch = 0;
  for (const auto& row : rows) {
    eval::GenerateResult gen;
    for (const auto& g : row["generations"]) gen.generations.push_back({g.get<std::string>(), eval::FinishReason::Stop});
    auto rec = eval::score_record(row["id"], "fixture", "prompt", row["gold"], gen);
    const auto want = row["labels"].get<std::vector<bool>>();
    for (std::size_t i = 0; i < want.size(); ++i) {
      ++labels;
      positive += want[i];
      label_mismatch += rec.verdicts[i] != want[i];
    }
    records.push_back(std::move(rec));
  }
  const double got = eval::pass_at_1_of_n(records);
  double hand = 0.0;
  for (const auto& row : rows) {
    const auto want = row["labels"].get<std::vector<bool>>();
    hand += static_cast<double>(std::count(want.begin(), want.end(), true)) / static_cast<double>(want.size());
  }
  hand /= static_cast<double>(rows.size());
  const bool pass = rows.size() == 20 && label_mismatch == 0 && got == hand;
  return {pass, "pass@1(5) " + fmt(got, 6) + " vs hand-labelled " + fmt(hand, 6) + " (" + std::to_string(positive) +
                    "/" + std::to_string(labels) + " labels), verdict mismatches " + std::to_string(label_mismatch)};
}

// ---- repetition ----

Outcome repetition() {
  int loops = 0, detected = 0, clean = 0, false_pos = 0;
  for (const auto& row : read_jsonl(g_fixtures / "eval" / "repetition.jsonl")) {
    const bool hit = eval::detect_repetition(row["text"].get<std::string>()).has_value();
    if (row["loop"].get<bool>()) {
      ++loops;
      detected += hit;
    } else {
      ++clean;
      false_pos += hit;
    }
  }
  return {loops == 20 && clean == 20 && detected == 20 && false_pos == 0,
          std::to_string(detected) + "/" + std::to_string(loops) + " loops detected, " + std::to_string(false_pos) +
              "/" + std::to_string(clean) + " false positives"};
}

// ---- end to end ----

Outcome end_to_end() {
  const auto t0 = Clock::now();
  const auto root = fresh_dir("lct_accept_e2e");
  const auto config = g_fixtures / "e2e" / "run_full.json";
  std::vector<fs::path> outs{root / "a", root / "b"};
  for (const auto& out : outs) {
    const std::string cmd = "\"" + g_lct + "\" run \"" + config.string() + "\" -o \"" + out.string() + "\" > \"" +
                            (root / "log.txt").string() + "\" 2>&1";
    fs::create_directories(root);
    if (std::system(cmd.c_str()) != 0) return {false, "lct run failed: " + slurp(root / "log.txt")};
  }
  const double s = seconds_since(t0);
  const std::vector<std::string> files{"niah/grid.json", "niah/heatmap.svg", "eval/report.json"};
  int identical = 0;
  for (const auto& f : files) {
    if (fs::exists(outs[0] / f) && fs::exists(outs[1] / f) && slurp(outs[0] / f) == slurp(outs[1] / f)) ++identical;
  }
  const auto expected = json::parse(slurp(g_fixtures / "e2e" / "expected.json"));
  const auto report = json::parse(slurp(outs[0] / "eval" / "report.json"));
  const auto summary = json::parse(slurp(outs[0] / "niah" / "summary.json"));
  const bool values = report["accuracy"] == expected["eval_accuracy"] &&
                      summary["aggregate"] == expected["niah_aggregate"];
  const bool pass = identical == 3 && values && s < 60.0;
  return {pass, std::to_string(identical) + "/3 artifacts byte-identical across two runs, values " +
                    (values ? "match" : "differ from") + " expected, " + fmt(s) + " s for both runs"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lct acceptance suite"};
  std::vector<std::string> only;
  app.add_option("--only", only, "run only these criteria (keys)")->delimiter(',');
  app.add_option("--fixtures", g_fixtures, "fixture directory");
  app.add_option("--lct", g_lct, "path to the lct binary");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {"checkpoint", "checkpoint round-trip (200 random, bit-identical, < 1 min)", checkpoint_round_trip},
      {"merge", "merge algebra (identity, self-merge 1 ulp, permutation, weight sums, < 1 min)", merge_algebra},
      {"rope", "RoPE norm drift, shift invariance, scaling law", rope_properties},
      {"gradcheck", "toy gradient check on every tensor (< 2 min)", toy_grad_check},
      {"mechanism", "toy mechanism: interior theta factor wins at 4x context (>= 2 of 3 seeds, < 30 min)",
       toy_mechanism},
      {"niah", "NIAH scripted 25-case grid, aggregate, effective length", niah_grid},
      {"scoring", "NIAH three-way scoring (+1 / -1 / 0)", niah_scoring},
      {"math", "math equivalence (curated pairs, reflexive, symmetric)", math_equivalence},
      {"split", "length split boundaries and partition", data_split},
      {"pass1", "pass@1 over n=5 on the hand-labelled fixture", pass_at_1},
      {"repetition", "repetition detector on loop / clean fixtures", repetition},
      {"e2e", "lct run end to end, deterministic artifacts (< 1 min)", end_to_end},
  };
  const std::set<std::string> selected(only.begin(), only.end());
  int failed = 0, index = 0;
  for (const auto& c : criteria) {
    ++index;
    if (!selected.empty() && !selected.contains(c.key)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << std::setw(2) << index << "] " << c.title << " -- " << o.detail
              << "\n"
              << std::flush;
  }
  return std::min(failed, 125);
}
