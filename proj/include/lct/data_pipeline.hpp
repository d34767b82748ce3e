#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace lct::data {

struct ReasoningSample {
  std::string id;
  std::string problem;
  std::string response;
  std::string gold;
  std::int64_t token_len = 0;

  bool operator==(const ReasoningSample&) const = default;
};

using TokenCounter = std::function<std::size_t(std::string_view)>;

/// Default counter: word runs plus standalone punctuation (see word_punct_tokens).
std::size_t count_tokens(std::string_view text, const TokenCounter& counter = {});

/// One JSONL object -> sample. Accepts "messages" (last assistant turn is the
/// response) and "answer" as an alias of "gold". A precomputed "token_len" wins
/// over the counter. Throws InvalidRecord.
ReasoningSample parse_sample(const nlohmann::json& record, const TokenCounter& counter = {});
nlohmann::json to_json(const ReasoningSample& sample);

std::vector<ReasoningSample> read_jsonl(const std::filesystem::path& path, const TokenCounter& counter = {});
void write_jsonl(const std::filesystem::path& path, const std::vector<ReasoningSample>& samples);

struct SplitSpec {
  std::int64_t short_max = 8192;
  std::int64_t long_max = 16384;
  std::size_t sample_n = 20000;
  std::uint64_t seed = 0;
  bool filter_first = false;  // default order: sample, then filter
  std::vector<std::int64_t> hist_edges;

  void validate() const;  // throws InvalidConfig
};

SplitSpec split_spec_from_json(const nlohmann::json& j);

struct SplitResult {
  std::vector<ReasoningSample> short_set;
  std::vector<ReasoningSample> long_set;
  std::vector<ReasoningSample> discarded;
};

/// short: t <= short_max; long: short_max < t <= long_max; discarded otherwise.
SplitResult split_by_length(const std::vector<ReasoningSample>& samples, const SplitSpec& spec = {});

/// Seeded uniform subset without replacement, returned in input order. When the
/// set is smaller than n every element is returned and `warning` is set.
std::vector<ReasoningSample> sample_n(const std::vector<ReasoningSample>& samples, std::size_t n, std::uint64_t seed,
                                      std::string* warning = nullptr);

enum class DropReason { NoAnswerFound, WrongAnswer };
std::string_view to_string(DropReason reason);

struct FilterResult {
  std::vector<ReasoningSample> kept;
  std::vector<std::pair<ReasoningSample, DropReason>> dropped;

  std::size_t count(DropReason reason) const;
  nlohmann::json summary() const;
};

FilterResult filter_correct(const std::vector<ReasoningSample>& samples);

/// counts[i] covers [edges[i], edges[i+1]); values below edges.front() go to
/// underflow and values >= edges.back() to overflow.
struct Histogram {
  std::vector<std::int64_t> edges;
  std::vector<std::size_t> counts;
  std::size_t underflow = 0;
  std::size_t overflow = 0;

  std::size_t total() const;
};

/// Throws NonAscendingEdges unless edges has >= 2 strictly ascending entries.
Histogram length_histogram(const std::vector<std::int64_t>& lengths, const std::vector<std::int64_t>& edges);
Histogram length_histogram(const std::vector<ReasoningSample>& samples, const std::vector<std::int64_t>& edges);

std::string histogram_csv(const Histogram& h);
std::string histogram_svg(const Histogram& h, std::string_view title);

}  // namespace lct::data
