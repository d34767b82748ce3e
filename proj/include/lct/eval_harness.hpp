#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lct/backend.hpp"

namespace lct::eval {

enum class FinishReason { Stop, LengthCap, Error };
std::string_view to_string(FinishReason reason);
FinishReason parse_finish_reason(std::string_view s);  // backend "length" -> LengthCap

struct GenerationParams {
  std::string model = "default";
  double temperature = 0.6;
  int max_tokens = 16384;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds base_delay{200};  // doubles after every failed attempt
};

struct Generation {
  std::string text;
  FinishReason finish = FinishReason::Stop;
};

struct GenerateResult {
  std::vector<Generation> generations;  // always n entries
  int retries = 0;
  std::vector<std::string> log;
  std::size_t errors() const;
};

/// n completions; short responses are topped up with follow-up requests.
/// Transport errors are retried with exponential backoff; generations that still
/// fail are recorded as Error. Throws BackendUnreachable when all n fail.
GenerateResult generate(ChatClient& client, const std::string& prompt, int n, const GenerationParams& params,
                        const RetryPolicy& retry = {});

struct EvalRecord {
  std::string id;
  std::string benchmark;
  std::string prompt;
  std::string gold;
  std::vector<std::string> generations;
  std::vector<bool> verdicts;
  std::vector<std::int64_t> lengths;
  std::vector<FinishReason> finish_reasons;

  nlohmann::json to_json() const;
  static EvalRecord from_json(const nlohmann::json& j);
};

/// Verdicts through math_verify, lengths through the default token counter.
EvalRecord score_record(std::string id, std::string benchmark, std::string prompt, std::string gold,
                        const GenerateResult& result);

/// Mean of every non-error verdict across all records (avg over responses, not
/// any-of-n). Throws EmptyInput when nothing is scorable.
double pass_at_1_of_n(const std::vector<EvalRecord>& records);

struct RepetitionParams {
  int ngram = 10;
  int min_repeats = 3;
  int window = 200;  // tokens at the end of the text that are inspected
};

struct RepetitionSpan {
  std::size_t begin = 0;  // byte offsets into the text
  std::size_t end = 0;
  std::size_t period = 0;  // tokens per repeated unit
};

/// Some n-gram repeats >= min_repeats times back to back (a run of period p
/// spanning at least ngram + (min_repeats - 1) * p tokens) inside the final
/// window. The span covers every qualifying run in the window, extended to the
/// full loop even where it starts before the window.
std::optional<RepetitionSpan> detect_repetition(std::string_view text, const RepetitionParams& params = {});

enum class FailureKind { Repetition, Truncation, ReferenceCandidate, Other };
std::string_view to_string(FailureKind kind);

struct FailureTag {
  FailureKind kind;
  int generation = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string text;

  nlohmann::json to_json() const;
};

/// Audit heuristic: math-like spans in the second half of the generation that
/// follow recall phrasing and do not occur in the prompt.
std::vector<FailureTag> flag_reference_candidates(std::string_view prompt, std::string_view generation);

/// Repetition, Truncation (finish = length cap) and reference candidates for every
/// generation; incorrect generations with no other tag get Other.
std::vector<FailureTag> tag_failures(const EvalRecord& record, const RepetitionParams& params = {});

struct LengthStats {
  std::optional<double> mean_correct;
  std::optional<double> mean_incorrect;
  std::size_t n_correct = 0;
  std::size_t n_incorrect = 0;
};

struct LengthReport {
  LengthStats overall;
  std::map<std::string, LengthStats> per_benchmark;
};

LengthReport length_by_correctness(const std::vector<EvalRecord>& records);
std::string length_csv(const LengthReport& report);
std::string length_svg(const LengthReport& report);
nlohmann::json to_json(const LengthStats& stats);

struct EvalSpec {
  std::filesystem::path dataset;
  int n = 5;
  GenerationParams params;
  RetryPolicy retry;
  int concurrency = 8;
};

struct EvalProblem {
  std::string id;
  std::string benchmark;
  std::string prompt;
  std::string gold;
};

/// JSONL with id, problem (or prompt/question), gold (or answer), optional benchmark.
std::vector<EvalProblem> read_problems(const std::filesystem::path& path);

struct EvalRunStats {
  std::size_t generated = 0;  // problems sent to the backend in this invocation
  std::size_t skipped = 0;    // already present in records.jsonl
  std::size_t failed = 0;     // problems whose generations all failed
};

/// Appends one EvalRecord per problem to out_dir/records.jsonl, skipping ids that
/// are already there, so interrupted runs resume.
EvalRunStats run_eval(ChatClient& client, const std::vector<EvalProblem>& problems, const EvalSpec& spec,
                      const std::filesystem::path& out_dir);

std::vector<EvalRecord> load_records(const std::filesystem::path& records_jsonl);

/// Writes report.json and report.md into run_dir from records.jsonl and the
/// optional provenance.json next to it. Throws IncompleteRun with no records.
nlohmann::json write_report(const std::filesystem::path& run_dir, const RepetitionParams& params = {});

}  // namespace lct::eval
