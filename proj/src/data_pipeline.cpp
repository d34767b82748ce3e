#include "lct/data_pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lct/error.hpp"
#include "lct/math_verify.hpp"
#include "lct/rng.hpp"
#include "lct/tokenize.hpp"
#include "lct/xml.hpp"

namespace lct::data {

using nlohmann::json;

std::size_t count_tokens(std::string_view text, const TokenCounter& counter) {
  return counter ? counter(text) : word_punct_count(text);
}

namespace {

std::string string_field(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return {};
  const auto& v = j[key];
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return v.dump();
  throw Error(ErrorKind::InvalidRecord, std::string("field '") + key + "' must be a string");
}

}  // namespace

ReasoningSample parse_sample(const json& record, const TokenCounter& counter) {
  if (!record.is_object()) throw Error(ErrorKind::InvalidRecord, "record is not a JSON object");
  ReasoningSample s;
  s.id = string_field(record, "id");
  s.problem = string_field(record, "problem");
  s.gold = record.contains("gold") ? string_field(record, "gold") : string_field(record, "answer");
  if (record.contains("response")) {
    s.response = string_field(record, "response");
  } else if (record.contains("messages")) {
    const auto& msgs = record["messages"];
    if (!msgs.is_array()) throw Error(ErrorKind::InvalidRecord, "'messages' must be an array");
    bool found = false;
    for (const auto& m : msgs) {
      if (m.is_object() && m.value("role", "") == "assistant") {
        s.response = string_field(m, "content");
        found = true;
      }
      if (m.is_object() && m.value("role", "") == "user" && s.problem.empty()) s.problem = string_field(m, "content");
    }
    if (!found) throw Error(ErrorKind::InvalidRecord, "'messages' has no assistant turn");
  } else {
    throw Error(ErrorKind::InvalidRecord, "record has neither 'response' nor 'messages'");
  }
  if (record.contains("token_len") && !record["token_len"].is_null()) {
    if (!record["token_len"].is_number_integer() || record["token_len"].get<std::int64_t>() < 0) {
      throw Error(ErrorKind::InvalidRecord, "'token_len' must be a non-negative integer");
    }
    s.token_len = record["token_len"].get<std::int64_t>();
  } else {
    s.token_len = static_cast<std::int64_t>(count_tokens(s.response, counter));
  }
  return s;
}

json to_json(const ReasoningSample& s) {
  return json{{"id", s.id}, {"problem", s.problem}, {"response", s.response}, {"gold", s.gold}, {"token_len", s.token_len}};
}

std::vector<ReasoningSample> read_jsonl(const std::filesystem::path& path, const TokenCounter& counter) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
  std::vector<ReasoningSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_sample(json::parse(line), counter));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::InvalidRecord, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.kind(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<ReasoningSample>& samples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  for (const auto& s : samples) out << to_json(s).dump() << '\n';
}

void SplitSpec::validate() const {
  if (!(0 < short_max && short_max < long_max)) {
    throw Error(ErrorKind::InvalidConfig, "split spec needs 0 < short_max < long_max");
  }
}

SplitSpec split_spec_from_json(const json& j) {
  static const char* known[] = {"short_max", "long_max", "sample_n", "seed", "filter_first", "hist_edges"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw Error(ErrorKind::InvalidConfig, "unknown split spec key '" + key + "'");
    }
  }
  SplitSpec s;
  try {
    s.short_max = j.value("short_max", s.short_max);
    s.long_max = j.value("long_max", s.long_max);
    s.sample_n = j.value("sample_n", s.sample_n);
    s.seed = j.value("seed", s.seed);
    s.filter_first = j.value("filter_first", s.filter_first);
    s.hist_edges = j.value("hist_edges", s.hist_edges);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad split spec: ") + e.what());
  }
  s.validate();
  return s;
}

SplitResult split_by_length(const std::vector<ReasoningSample>& samples, const SplitSpec& spec) {
  spec.validate();
  SplitResult r;
  for (const auto& s : samples) {
    if (s.token_len <= spec.short_max) {
      r.short_set.push_back(s);
    } else if (s.token_len <= spec.long_max) {
      r.long_set.push_back(s);
    } else {
      r.discarded.push_back(s);
    }
  }
  return r;
}

std::vector<ReasoningSample> sample_n(const std::vector<ReasoningSample>& samples, std::size_t n, std::uint64_t seed,
                                      std::string* warning) {
  if (samples.size() < n && warning) {
    *warning = "requested " + std::to_string(n) + " samples but only " + std::to_string(samples.size()) +
               " are available; returning all";
  }
  if (n >= samples.size()) return samples;
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first n slots are a uniform n-subset.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<ReasoningSample> out;
  out.reserve(n);
  for (auto i : idx) out.push_back(samples[i]);
  return out;
}

std::string_view to_string(DropReason reason) {
  return reason == DropReason::NoAnswerFound ? "NoAnswerFound" : "WrongAnswer";
}

std::size_t FilterResult::count(DropReason reason) const {
  return static_cast<std::size_t>(
      std::count_if(dropped.begin(), dropped.end(), [reason](const auto& d) { return d.second == reason; }));
}

json FilterResult::summary() const {
  return json{{"kept", kept.size()},
              {"dropped", dropped.size()},
              {"drop_reasons",
               {{"NoAnswerFound", count(DropReason::NoAnswerFound)}, {"WrongAnswer", count(DropReason::WrongAnswer)}}}};
}

FilterResult filter_correct(const std::vector<ReasoningSample>& samples) {
  FilterResult r;
  for (const auto& s : samples) {
    const auto answer = math::extract_answer(s.response);
    if (!answer) {
      r.dropped.emplace_back(s, DropReason::NoAnswerFound);
    } else if (!math::equivalent(*answer, math::make_answer(s.gold))) {
      r.dropped.emplace_back(s, DropReason::WrongAnswer);
    } else {
      r.kept.push_back(s);
    }
  }
  return r;
}

std::size_t Histogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), underflow + overflow);
}

Histogram length_histogram(const std::vector<std::int64_t>& lengths, const std::vector<std::int64_t>& edges) {
  if (edges.size() < 2) throw Error(ErrorKind::NonAscendingEdges, "histogram needs at least two edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (edges[i] <= edges[i - 1]) {
      throw Error(ErrorKind::NonAscendingEdges, "edge " + std::to_string(edges[i]) + " does not exceed " +
                                                    std::to_string(edges[i - 1]));
    }
  }
  Histogram h;
  h.edges = edges;
  h.counts.assign(edges.size() - 1, 0);
  for (auto t : lengths) {
    if (t < edges.front()) {
      ++h.underflow;
    } else if (t >= edges.back()) {
      ++h.overflow;
    } else {
      const auto it = std::upper_bound(edges.begin(), edges.end(), t);
      ++h.counts[static_cast<std::size_t>(it - edges.begin() - 1)];
    }
  }
  return h;
}

Histogram length_histogram(const std::vector<ReasoningSample>& samples, const std::vector<std::int64_t>& edges) {
  std::vector<std::int64_t> lengths;
  lengths.reserve(samples.size());
  for (const auto& s : samples) lengths.push_back(s.token_len);
  return length_histogram(lengths, edges);
}

std::string histogram_csv(const Histogram& h) {
  std::ostringstream out;
  out << "bin,lower,upper,count\n";
  out << "underflow,," << h.edges.front() << ',' << h.underflow << '\n';
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    out << i << ',' << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.counts[i] << '\n';
  }
  out << "overflow," << h.edges.back() << ",," << h.overflow << '\n';
  return out.str();
}

std::string histogram_svg(const Histogram& h, std::string_view title) {
  constexpr int kBarW = 40, kGap = 6, kPlotH = 200, kLeft = 50, kTop = 40;
  std::vector<std::pair<std::string, std::size_t>> bars;
  bars.emplace_back("<" + std::to_string(h.edges.front()), h.underflow);
  for (std::size_t i = 0; i < h.counts.size(); ++i) bars.emplace_back(std::to_string(h.edges[i]), h.counts[i]);
  bars.emplace_back(">=" + std::to_string(h.edges.back()), h.overflow);
  std::size_t peak = 1;
  for (const auto& b : bars) peak = std::max(peak, b.second);

  const int width = kLeft + static_cast<int>(bars.size()) * (kBarW + kGap) + 20;
  const int height = kTop + kPlotH + 50;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  svg << "  <text x=\"" << kLeft << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
      << "</text>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const int x = kLeft + static_cast<int>(i) * (kBarW + kGap);
    const int bh = static_cast<int>(static_cast<double>(bars[i].second) / static_cast<double>(peak) * kPlotH);
    svg << "  <rect class=\"bar\" x=\"" << x << "\" y=\"" << kTop + kPlotH - bh << "\" width=\"" << kBarW
        << "\" height=\"" << bh << "\" fill=\"#4c72b0\"><title>" << xml_escape(bars[i].first) << ": "
        << bars[i].second << "</title></rect>\n";
    svg << "  <text x=\"" << x + kBarW / 2 << "\" y=\"" << kTop + kPlotH + 15
        << "\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">" << xml_escape(bars[i].first)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace lct::data
