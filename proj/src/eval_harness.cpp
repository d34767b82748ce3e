#include "lct/eval_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "lct/data_pipeline.hpp"
#include "lct/error.hpp"
#include "lct/math_verify.hpp"
#include "lct/provenance.hpp"
#include "lct/tokenize.hpp"
#include "lct/xml.hpp"

namespace lct::eval {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::Stop: return "stop";
    case FinishReason::LengthCap: return "length_cap";
    case FinishReason::Error: return "error";
  }
  return "error";
}

FinishReason parse_finish_reason(std::string_view s) {
  if (s == "length" || s == "length_cap") return FinishReason::LengthCap;
  if (s == "error") return FinishReason::Error;
  return FinishReason::Stop;
}

std::size_t GenerateResult::errors() const {
  return static_cast<std::size_t>(std::count_if(generations.begin(), generations.end(),
                                                [](const Generation& g) { return g.finish == FinishReason::Error; }));
}

GenerateResult generate(ChatClient& client, const std::string& prompt, int n, const GenerationParams& params,
                        const RetryPolicy& retry) {
  if (n < 1) throw Error(ErrorKind::InvalidConfig, "n must be >= 1");
  GenerateResult out;
  ChatRequest req;
  req.model = params.model;
  req.messages = {{"user", prompt}};
  req.temperature = params.temperature;
  req.max_tokens = params.max_tokens;

  int failures = 0;  // consecutive failed attempts
  while (static_cast<int>(out.generations.size()) < n) {
    req.n = n - static_cast<int>(out.generations.size());
    std::string why;
    try {
      const auto resp = client.complete(req);
      for (const auto& c : resp.choices) {
        if (static_cast<int>(out.generations.size()) == n) break;
        out.generations.push_back({c.content, parse_finish_reason(c.finish_reason)});
      }
      if (!resp.choices.empty()) {
        failures = 0;
        continue;
      }
      why = "backend returned no choices";
    } catch (const TransportError& e) {
      why = e.what();
    }
    if (failures < retry.max_retries) {
      const auto delay = retry.base_delay * (1LL << failures);
      ++failures;
      ++out.retries;
      out.log.push_back("retry " + std::to_string(failures) + "/" + std::to_string(retry.max_retries) + " after " +
                        std::to_string(delay.count()) + "ms: " + why);
      std::this_thread::sleep_for(delay);
      continue;
    }
    const int missing = n - static_cast<int>(out.generations.size());
    out.log.push_back("giving up on " + std::to_string(missing) + " generation(s): " + why);
    for (int i = 0; i < missing; ++i) out.generations.push_back({"", FinishReason::Error});
  }
  if (out.errors() == out.generations.size()) {
    throw Error(ErrorKind::BackendUnreachable, "all " + std::to_string(n) + " generations failed");
  }
  return out;
}

json EvalRecord::to_json() const {
  json reasons = json::array();
  for (auto r : finish_reasons) reasons.push_back(std::string(eval::to_string(r)));
  return json{{"id", id},           {"benchmark", benchmark}, {"prompt", prompt},   {"gold", gold},
              {"generations", generations}, {"verdicts", verdicts}, {"lengths", lengths}, {"finish_reasons", reasons}};
}

EvalRecord EvalRecord::from_json(const json& j) {
  try {
    EvalRecord r;
    r.id = j.at("id").get<std::string>();
    r.benchmark = j.value("benchmark", std::string("default"));
    r.prompt = j.at("prompt").get<std::string>();
    r.gold = j.at("gold").get<std::string>();
    r.generations = j.at("generations").get<std::vector<std::string>>();
    r.verdicts = j.at("verdicts").get<std::vector<bool>>();
    r.lengths = j.at("lengths").get<std::vector<std::int64_t>>();
    for (const auto& s : j.at("finish_reasons")) {
      const auto v = s.get<std::string>();
      if (v != "stop" && v != "length_cap" && v != "error") {
        throw Error(ErrorKind::InvalidRecord, "unknown finish_reason '" + v + "'");
      }
      r.finish_reasons.push_back(parse_finish_reason(v));
    }
    const auto n = r.generations.size();
    if (r.verdicts.size() != n || r.lengths.size() != n || r.finish_reasons.size() != n) {
      throw Error(ErrorKind::InvalidRecord, "record '" + r.id + "': per-generation lists differ in length");
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidRecord, std::string("eval record: ") + e.what());
  }
}

EvalRecord score_record(std::string id, std::string benchmark, std::string prompt, std::string gold,
                        const GenerateResult& result) {
  EvalRecord r{std::move(id), std::move(benchmark), std::move(prompt), std::move(gold), {}, {}, {}, {}};
  const auto gold_answer = math::make_answer(r.gold);
  for (const auto& g : result.generations) {
    r.generations.push_back(g.text);
    r.finish_reasons.push_back(g.finish);
    r.lengths.push_back(static_cast<std::int64_t>(data::count_tokens(g.text)));
    bool ok = false;
    if (g.finish != FinishReason::Error) {
      const auto got = math::extract_answer(g.text);
      ok = got && math::equivalent(*got, gold_answer);
    }
    r.verdicts.push_back(ok);
  }
  return r;
}

double pass_at_1_of_n(const std::vector<EvalRecord>& records) {
  std::size_t correct = 0, total = 0;
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.verdicts.size(); ++i) {
      if (i < r.finish_reasons.size() && r.finish_reasons[i] == FinishReason::Error) continue;
      ++total;
      correct += r.verdicts[i] ? 1 : 0;
    }
  }
  if (total == 0) throw Error(ErrorKind::EmptyInput, "no scorable generations");
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::optional<RepetitionSpan> detect_repetition(std::string_view text, const RepetitionParams& params) {
  if (params.ngram < 2 || params.min_repeats < 2 || params.window < 1) {
    throw Error(ErrorKind::InvalidConfig, "repetition detector needs ngram >= 2, min_repeats >= 2, window >= 1");
  }
  const auto toks = word_punct_tokens(text);
  const std::size_t T = toks.size();
  const auto n = static_cast<std::size_t>(params.ngram);
  const auto m = static_cast<std::size_t>(params.min_repeats);
  const std::size_t ws = T > static_cast<std::size_t>(params.window) ? T - static_cast<std::size_t>(params.window) : 0;
  const std::size_t W = T - ws;
  if (W < n + (m - 1)) return std::nullopt;

  // A loop of period p is a stretch where tok[i] == tok[i + p]; it holds the
  // n-gram m times back to back once it spans n + (m - 1) p tokens.
  std::size_t lo = T, hi = 0, best_p = 0;
  for (std::size_t p = 1; n + (m - 1) * p <= W; ++p) {
    const std::size_t need = n + (m - 2) * p;  // matched pairs in the run
    std::size_t i = ws;
    while (i + p < T) {
      if (toks[i] != toks[i + p]) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j + p < T && toks[j] == toks[j + p]) ++j;
      if (j - i >= need) {
        std::size_t start = i;
        while (start > 0 && toks[start - 1] == toks[start - 1 + p]) --start;
        lo = std::min(lo, start);
        hi = std::max(hi, j + p);
        if (best_p == 0) best_p = p;
      }
      i = j + 1;
    }
  }
  if (best_p == 0) return std::nullopt;
  const auto begin = static_cast<std::size_t>(toks[lo].data() - text.data());
  const auto end = static_cast<std::size_t>(toks[hi - 1].data() + toks[hi - 1].size() - text.data());
  return RepetitionSpan{begin, end, best_p};
}

std::string_view to_string(FailureKind kind) {
  switch (kind) {
    case FailureKind::Repetition: return "Repetition";
    case FailureKind::Truncation: return "Truncation";
    case FailureKind::ReferenceCandidate: return "ReferenceCandidate";
    case FailureKind::Other: return "Other";
  }
  return "Other";
}

json FailureTag::to_json() const {
  return json{{"kind", std::string(eval::to_string(kind))}, {"generation", generation}, {"begin", begin},
              {"end", end}, {"text", text}};
}

namespace {

constexpr std::string_view kRecallPhrases[] = {"given", "from the problem", "we know", "as stated"};

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Whitespace, dollar signs and trailing punctuation do not distinguish expressions.
std::string normalize_math(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c)) && c != '$') out.push_back(c);
  }
  while (!out.empty() && (out.back() == '.' || out.back() == ',' || out.back() == ';' || out.back() == ':')) {
    out.pop_back();
  }
  return out;
}

bool is_operator(char c) { return std::string_view("+-*/^=<>").find(c) != std::string_view::npos; }

bool is_mathish_token(std::string_view t) {
  if (t.empty()) return false;
  for (char c : t) {
    if (!std::isalnum(static_cast<unsigned char>(c)) &&
        std::string_view("+-*/^=<>(){}[]\\_.").find(c) == std::string_view::npos) {
      return false;
    }
  }
  if (t.size() == 1 && std::isalpha(static_cast<unsigned char>(t[0]))) return true;  // a variable
  if (t.size() <= 3 && std::all_of(t.begin(), t.end(), [](char c) { return std::isupper(static_cast<unsigned char>(c)); })) {
    return true;  // a named point or segment
  }
  if (t[0] == '\\') return true;
  return std::any_of(t.begin(), t.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)) || is_operator(c) || c == '('; });
}

struct Span {
  std::size_t begin, end;
};

// End of the sentence that starts at `from`: a period, ?, ! followed by
// whitespace or the end of text, or a newline.
std::size_t sentence_end(std::string_view g, std::size_t from) {
  for (std::size_t i = from; i < g.size(); ++i) {
    const char c = g[i];
    if (c == '\n') return i;
    if ((c == '.' || c == '?' || c == '!') && (i + 1 == g.size() || std::isspace(static_cast<unsigned char>(g[i + 1])))) {
      return i;
    }
  }
  return g.size();
}

void math_spans(std::string_view g, std::size_t from, std::size_t to, std::vector<Span>& out) {
  std::vector<Span> covered;
  // $...$
  for (std::size_t i = from; i < to; ++i) {
    if (g[i] != '$') continue;
    const auto close = g.find('$', i + 1);
    if (close == std::string_view::npos || close >= to) break;
    out.push_back({i + 1, close});
    covered.push_back({i, close + 1});
    i = close;
  }
  // \boxed{...}
  for (auto pos = g.find("\\boxed{", from); pos != std::string_view::npos && pos < to; pos = g.find("\\boxed{", pos + 1)) {
    int depth = 0;
    std::size_t i = pos + 6;
    for (; i < g.size(); ++i) {
      if (g[i] == '{') ++depth;
      if (g[i] == '}' && --depth == 0) break;
    }
    if (i >= g.size()) break;
    out.push_back({pos + 7, i});
    covered.push_back({pos, i + 1});
  }
  auto inside = [&](std::size_t p) {
    return std::any_of(covered.begin(), covered.end(), [p](const Span& s) { return p >= s.begin && p < s.end; });
  };
  // Equation-shaped runs of whitespace-separated math tokens containing a relation.
  std::size_t run_begin = 0, run_end = 0;
  bool in_run = false, has_relation = false;
  auto flush = [&] {
    // lhs relation rhs; a leading or trailing relation continues another expression
    if (in_run && has_relation && std::string_view("=<>").find(g[run_begin]) == std::string_view::npos &&
        std::string_view("=<>+-*/^").find(g[run_end - 1]) == std::string_view::npos) {
      out.push_back({run_begin, run_end});
    }
    in_run = has_relation = false;
  };
  std::size_t i = from;
  while (i < to) {
    while (i < to && std::isspace(static_cast<unsigned char>(g[i]))) ++i;
    if (i >= to) break;
    std::size_t j = i;
    while (j < to && !std::isspace(static_cast<unsigned char>(g[j]))) ++j;
    std::size_t k = j;
    while (k > i && std::string_view(".,;:").find(g[k - 1]) != std::string_view::npos) --k;
    const auto tok = g.substr(i, k - i);
    if (!inside(i) && is_mathish_token(tok)) {
      if (!in_run) run_begin = i;
      in_run = true;
      run_end = k;
      if (tok.find_first_of("=<>") != std::string_view::npos) has_relation = true;
      if (k < j) flush();  // trailing punctuation ends the expression
    } else {
      flush();
    }
    i = j;
  }
  flush();
}

}  // namespace

std::vector<FailureTag> flag_reference_candidates(std::string_view prompt, std::string_view generation) {
  const std::string norm_prompt = normalize_math(prompt);
  const std::string low = lower(generation);
  const std::size_t mid = generation.size() / 2;
  std::vector<Span> spans;
  for (const auto phrase : kRecallPhrases) {
    for (auto pos = low.find(phrase); pos != std::string::npos; pos = low.find(phrase, pos + 1)) {
      const std::size_t after = pos + phrase.size();
      if ((pos > 0 && is_word_char(low[pos - 1])) || (after < low.size() && is_word_char(low[after]))) continue;
      // Only the clause introduced by the phrase: "given that x = 3, so ..." stops at the comma.
      std::size_t from = after;
      while (from < low.size() && (std::isspace(static_cast<unsigned char>(low[from])) || low[from] == ',' || low[from] == ':')) {
        ++from;
      }
      if (low.compare(from, 5, "that ") == 0) from += 5;
      std::size_t to = sentence_end(generation, from);
      if (const auto comma = generation.substr(0, to).find(", ", from); comma != std::string_view::npos) to = comma;
      math_spans(generation, from, to, spans);
    }
  }
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
  });
  std::vector<FailureTag> tags;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& s : spans) {
    if (s.end <= mid || !seen.insert({s.begin, s.end}).second) continue;
    const auto raw = generation.substr(s.begin, s.end - s.begin);
    const auto norm = normalize_math(raw);
    if (norm.size() < 2 || norm_prompt.find(norm) != std::string::npos) continue;
    tags.push_back({FailureKind::ReferenceCandidate, 0, s.begin, s.end, std::string(raw)});
  }
  return tags;
}

std::vector<FailureTag> tag_failures(const EvalRecord& record, const RepetitionParams& params) {
  std::vector<FailureTag> tags;
  for (std::size_t i = 0; i < record.generations.size(); ++i) {
    const auto finish = record.finish_reasons.at(i);
    if (finish == FinishReason::Error) continue;
    const auto& text = record.generations[i];
    const int g = static_cast<int>(i);
    const std::size_t before = tags.size();
    if (const auto rep = detect_repetition(text, params)) {
      tags.push_back({FailureKind::Repetition, g, rep->begin, rep->end, text.substr(rep->begin, rep->end - rep->begin)});
    }
    if (finish == FinishReason::LengthCap) {
      const std::size_t b = text.size() > 80 ? text.size() - 80 : 0;
      tags.push_back({FailureKind::Truncation, g, b, text.size(), text.substr(b)});
    }
    if (!record.verdicts.at(i)) {
      for (auto t : flag_reference_candidates(record.prompt, text)) {
        t.generation = g;
        tags.push_back(std::move(t));
      }
      if (tags.size() == before) tags.push_back({FailureKind::Other, g, 0, 0, ""});
    }
  }
  return tags;
}

namespace {

struct Acc {
  double sum_c = 0, sum_i = 0;
  std::size_t n_c = 0, n_i = 0;

  void add(bool ok, std::int64_t len) {
    (ok ? sum_c : sum_i) += static_cast<double>(len);
    ++(ok ? n_c : n_i);
  }
  LengthStats stats() const {
    LengthStats s;
    s.n_correct = n_c;
    s.n_incorrect = n_i;
    if (n_c) s.mean_correct = sum_c / static_cast<double>(n_c);
    if (n_i) s.mean_incorrect = sum_i / static_cast<double>(n_i);
    return s;
  }
};

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(10) << *v;
  return os.str();
}

}  // namespace

LengthReport length_by_correctness(const std::vector<EvalRecord>& records) {
  Acc all;
  std::map<std::string, Acc> per;
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.verdicts.size(); ++i) {
      if (r.finish_reasons.at(i) == FinishReason::Error) continue;
      all.add(r.verdicts[i], r.lengths.at(i));
      per[r.benchmark].add(r.verdicts[i], r.lengths.at(i));
    }
  }
  LengthReport out;
  out.overall = all.stats();
  for (const auto& [name, acc] : per) out.per_benchmark[name] = acc.stats();
  return out;
}

json to_json(const LengthStats& s) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return json{{"mean_len_correct", opt(s.mean_correct)},
              {"mean_len_incorrect", opt(s.mean_incorrect)},
              {"n_correct", s.n_correct},
              {"n_incorrect", s.n_incorrect}};
}

std::string length_csv(const LengthReport& report) {
  std::ostringstream os;
  os << "benchmark,group,count,mean_length\n";
  auto rows = [&os](const std::string& name, const LengthStats& s) {
    os << name << ",correct," << s.n_correct << ',' << fmt(s.mean_correct) << '\n';
    os << name << ",incorrect," << s.n_incorrect << ',' << fmt(s.mean_incorrect) << '\n';
  };
  for (const auto& [name, s] : report.per_benchmark) rows(name, s);
  rows("overall", report.overall);
  return os.str();
}

std::string length_svg(const LengthReport& report) {
  std::vector<std::pair<std::string, LengthStats>> groups(report.per_benchmark.begin(), report.per_benchmark.end());
  groups.emplace_back("overall", report.overall);
  double top = 1;
  for (const auto& [_, s] : groups) top = std::max({top, s.mean_correct.value_or(0), s.mean_incorrect.value_or(0)});

  const int bar_w = 28, gap = 24, left = 60, plot_h = 220, top_pad = 40;
  const int width = left + static_cast<int>(groups.size()) * (2 * bar_w + gap) + gap;
  const int height = top_pad + plot_h + 60;
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">Mean output length by correctness</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top_pad + plot_h << "\" x2=\"" << width << "\" y2=\"" << top_pad + plot_h
     << "\" stroke=\"black\"/>\n";
  int x = left + gap;
  for (const auto& [name, s] : groups) {
    const std::pair<const char*, std::optional<double>> bars[] = {{"correct", s.mean_correct},
                                                                  {"incorrect", s.mean_incorrect}};
    for (int b = 0; b < 2; ++b) {
      const auto& [cls, v] = bars[b];
      const int bx = x + b * bar_w;
      if (v) {
        const double h = plot_h * *v / top;
        os << "<rect class=\"bar " << cls << "\" x=\"" << bx << "\" y=\"" << top_pad + plot_h - h << "\" width=\""
           << bar_w - 2 << "\" height=\"" << h << "\" fill=\"" << (b == 0 ? "#4c78a8" : "#e45756") << "\"><title>"
           << xml_escape(name) << ' ' << cls << ": " << fmt(v) << "</title></rect>\n";
      } else {
        os << "<text class=\"na\" x=\"" << bx << "\" y=\"" << top_pad + plot_h - 4 << "\" font-size=\"9\">n/a</text>\n";
      }
    }
    os << "<text x=\"" << x << "\" y=\"" << top_pad + plot_h + 16 << "\" font-size=\"11\">" << xml_escape(name)
       << "</text>\n";
    x += 2 * bar_w + gap;
  }
  os << "<rect x=\"" << width - 150 << "\" y=\"28\" width=\"10\" height=\"10\" fill=\"#4c78a8\"/><text x=\"" << width - 136
     << "\" y=\"37\" font-size=\"10\">correct</text>\n";
  os << "<rect x=\"" << width - 80 << "\" y=\"28\" width=\"10\" height=\"10\" fill=\"#e45756\"/><text x=\"" << width - 66
     << "\" y=\"37\" font-size=\"10\">incorrect</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::vector<EvalProblem> read_problems(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open dataset " + path.string());
  std::vector<EvalProblem> out;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::InvalidRecord, where + ": " + e.what());
    }
    auto pick = [&j](std::initializer_list<const char*> keys) -> std::optional<std::string> {
      for (const char* k : keys) {
        if (j.contains(k) && j[k].is_string()) return j[k].get<std::string>();
        if (j.contains(k) && j[k].is_number()) return j[k].dump();
      }
      return std::nullopt;
    };
    EvalProblem p;
    const auto id = pick({"id"});
    const auto prompt = pick({"problem", "prompt", "question"});
    const auto gold = pick({"gold", "answer"});
    if (!j.is_object() || !prompt || !gold) throw Error(ErrorKind::InvalidRecord, where + ": needs problem and gold");
    p.id = id ? *id : std::to_string(out.size());
    if (!ids.insert(p.id).second) throw Error(ErrorKind::InvalidRecord, where + ": duplicate id '" + p.id + "'");
    p.benchmark = pick({"benchmark"}).value_or("default");
    p.prompt = *prompt;
    p.gold = *gold;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<EvalRecord> load_records(const fs::path& records_jsonl) {
  std::vector<EvalRecord> out;
  std::ifstream in(records_jsonl);
  if (!in) return out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(EvalRecord::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      // A torn final line from an interrupted run is dropped; earlier damage is an error.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw Error(ErrorKind::InvalidRecord, records_jsonl.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

EvalRunStats run_eval(ChatClient& client, const std::vector<EvalProblem>& problems, const EvalSpec& spec,
                      const fs::path& out_dir) {
  if (spec.n < 1) throw Error(ErrorKind::InvalidConfig, "n must be >= 1");
  if (spec.concurrency < 1) throw Error(ErrorKind::InvalidConfig, "concurrency must be >= 1");
  fs::create_directories(out_dir);
  const fs::path records_path = out_dir / "records.jsonl";

  std::map<std::string, EvalRecord> done;
  for (auto& r : load_records(records_path)) done.emplace(r.id, std::move(r));

  EvalRunStats stats;
  std::vector<const EvalProblem*> pending;
  for (const auto& p : problems) {
    if (done.count(p.id)) {
      ++stats.skipped;
    } else {
      pending.push_back(&p);
    }
  }

  {
    // Rewrite what survived (drops a torn tail) before appending.
    std::ofstream out(records_path, std::ios::trunc);
    for (const auto& p : problems) {
      if (auto it = done.find(p.id); it != done.end()) out << it->second.to_json().dump() << '\n';
    }
  }

  std::mutex mu;
  std::ofstream out(records_path, std::ios::app);
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  auto worker = [&] {
    for (std::size_t k = next++; k < pending.size(); k = next++) {
      const auto& p = *pending[k];
      try {
        auto gen = generate(client, p.prompt, spec.n, spec.params, spec.retry);
        auto rec = score_record(p.id, p.benchmark, p.prompt, p.gold, gen);
        std::lock_guard lock(mu);
        out << rec.to_json().dump() << '\n';
        out.flush();
        done.emplace(rec.id, std::move(rec));
        ++stats.generated;
      } catch (const Error& e) {
        std::lock_guard lock(mu);
        if (e.kind() != ErrorKind::BackendUnreachable) {
          if (!fatal) fatal = std::current_exception();
          continue;
        }
        ++stats.failed;
      }
    }
  };
  const int workers = std::min<int>(spec.concurrency, static_cast<int>(std::max<std::size_t>(pending.size(), 1)));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  out.close();
  if (fatal) std::rethrow_exception(fatal);

  // Dataset order, so identical runs leave identical files.
  std::ofstream sorted(records_path, std::ios::trunc);
  for (const auto& p : problems) {
    if (auto it = done.find(p.id); it != done.end()) sorted << it->second.to_json().dump() << '\n';
  }
  return stats;
}

namespace {

json read_json_if_present(const fs::path& p) {
  std::ifstream in(p);
  if (!in) return nullptr;
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidRecord, p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + p.string());
  out << text;
}

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << 100.0 * v << '%';
  return os.str();
}

std::string md_len(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << *v;
  return os.str();
}

}  // namespace

json write_report(const fs::path& run_dir, const RepetitionParams& params) {
  const auto records = load_records(run_dir / "records.jsonl");
  if (records.empty()) throw Error(ErrorKind::IncompleteRun, "no eval records in " + run_dir.string());

  std::size_t generations = 0, errored = 0, truncated = 0;
  for (const auto& r : records) {
    for (auto f : r.finish_reasons) {
      ++generations;
      errored += f == FinishReason::Error;
      truncated += f == FinishReason::LengthCap;
    }
  }
  if (errored == generations) throw Error(ErrorKind::IncompleteRun, "every generation in the run failed");
  const std::size_t scorable = generations - errored;

  std::map<std::string, std::size_t> counts{
      {"Repetition", 0}, {"Truncation", 0}, {"ReferenceCandidate", 0}, {"Other", 0}};
  json failures = json::array();
  for (const auto& r : records) {
    for (const auto& t : tag_failures(r, params)) {
      ++counts[std::string(to_string(t.kind))];
      auto j = t.to_json();
      j["id"] = r.id;
      if (j["text"].get<std::string>().size() > 200) j["text"] = j["text"].get<std::string>().substr(0, 200);
      failures.push_back(j);
    }
  }

  const auto lengths = length_by_correctness(records);
  std::map<std::string, std::vector<EvalRecord>> by_bench;
  for (const auto& r : records) by_bench[r.benchmark].push_back(r);
  json per = json::object();
  for (const auto& [name, recs] : by_bench) {
    json b = to_json(lengths.per_benchmark.count(name) ? lengths.per_benchmark.at(name) : LengthStats{});
    b["records"] = recs.size();
    b["accuracy"] = nullptr;
    try {
      b["accuracy"] = pass_at_1_of_n(recs);
    } catch (const Error&) {
    }
    per[name] = b;
  }

  std::size_t n = 0;
  for (const auto& r : records) n = std::max(n, r.generations.size());
  json report{{"tool_version", std::string(kToolVersion)},
              {"records", records.size()},
              {"n", n},
              {"generations", generations},
              {"errored_generations", errored},
              {"accuracy", pass_at_1_of_n(records)},
              {"truncation_rate", static_cast<double>(truncated) / static_cast<double>(scorable)},
              {"lengths", to_json(lengths.overall)},
              {"per_benchmark", per},
              {"failure_counts", counts},
              {"failures", failures},
              {"repetition_params", {{"ngram", params.ngram}, {"min_repeats", params.min_repeats}, {"window", params.window}}},
              {"config", read_json_if_present(run_dir / "eval_config.json")},
              {"provenance", read_json_if_present(run_dir / "provenance.json")}};

  write_text(run_dir / "report.json", report.dump(2) + "\n");
  write_text(run_dir / "lengths.csv", length_csv(lengths));
  write_text(run_dir / "lengths.svg", length_svg(lengths));

  std::ostringstream md;
  md << "# Evaluation report\n\n";
  md << "| metric | value |\n|---|---|\n";
  md << "| records | " << records.size() << " |\n";
  md << "| generations per record | " << n << " |\n";
  md << "| pass@1(" << n << ") | " << pct(report["accuracy"].get<double>()) << " |\n";
  md << "| errored generations | " << errored << " |\n";
  md << "| truncation rate | " << pct(report["truncation_rate"].get<double>()) << " |\n";
  md << "| mean length, correct | " << md_len(lengths.overall.mean_correct) << " |\n";
  md << "| mean length, incorrect | " << md_len(lengths.overall.mean_incorrect) << " |\n\n";
  md << "## Per benchmark\n\n| benchmark | records | accuracy | mean len correct | mean len incorrect |\n|---|---|---|---|---|\n";
  for (const auto& [name, b] : per.items()) {
    const auto stats = lengths.per_benchmark.count(name) ? lengths.per_benchmark.at(name) : LengthStats{};
    md << "| " << name << " | " << b["records"].get<std::size_t>() << " | "
       << (b["accuracy"].is_null() ? std::string("n/a") : pct(b["accuracy"].get<double>())) << " | "
       << md_len(stats.mean_correct) << " | " << md_len(stats.mean_incorrect) << " |\n";
  }
  md << "\n## Failure tags\n\n| kind | count |\n|---|---|\n";
  for (const auto& [kind, c] : counts) md << "| " << kind << " | " << c << " |\n";
  if (!report["provenance"].is_null()) md << "\n## Provenance\n\n```json\n" << report["provenance"].dump(2) << "\n```\n";
  write_text(run_dir / "report.md", md.str());
  return report;
}

}  // namespace lct::eval
