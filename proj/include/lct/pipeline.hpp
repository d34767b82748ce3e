#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lct/backend.hpp"
#include "lct/data_pipeline.hpp"
#include "lct/eval_harness.hpp"
#include "lct/niah_bench.hpp"

namespace lct::pipeline {

struct SurgeryStage {
  std::string base;                  // as written in the config
  std::optional<std::string> donor;  // absent: theta scaling only
  double theta_factor = 16.0;
  double merge_ratio = 0.3;
};

struct DataStage {
  std::string input;
  data::SplitSpec split;
};

struct EvalStage {
  std::string dataset;
  int n = 5;
  eval::GenerationParams params;
  int concurrency = 8;
};

/// Declarative run file. Stages present in the file run in the fixed order
/// surgery, niah, data, sft, eval; each writes into <output>/<stage>/.
struct RunConfig {
  std::filesystem::path base_dir;  // relative paths resolve against this
  std::string output = "runs/default";
  std::uint64_t seed = 0;
  std::string backend = "mock://echo";  // a relative mock script file resolves against base_dir
  eval::RetryPolicy retry;
  std::optional<SurgeryStage> surgery;
  std::optional<niah::NiahSpec> niah;
  std::optional<DataStage> data;
  std::optional<std::string> sft_command;  // {model}, {data}, {out} are substituted
  std::optional<EvalStage> eval;

  std::filesystem::path resolve(const std::string& p) const;
  std::filesystem::path output_dir() const { return resolve(output); }
  std::string backend_url() const;
  std::vector<std::string> stages() const;
  /// Canonical JSON of one stage's inputs; its hash decides whether a rerun may skip it.
  nlohmann::json stage_json(const std::string& stage) const;
};

/// Validates against the run-config schema (unknown keys rejected, types and
/// ranges checked). Throws InvalidRunConfig.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
/// `seed` replaces the file's top-level seed before validation.
RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed = std::nullopt);

struct StageOutcome {
  std::string stage;
  bool skipped = false;
};

struct RunResult {
  std::vector<StageOutcome> stages;
  std::size_t backend_calls = 0;
};

/// Executes every requested stage. A stage whose <stage>/.done marker holds the
/// current stage hash is skipped unless `force`; a stale stage directory is
/// cleared first. Writes <output>/manifest.json (sha256 of every artifact).
/// Throws StageFailed naming the first failing stage.
RunResult run(const RunConfig& config, bool force = false, ChatClient* client = nullptr, std::ostream* log = nullptr);

/// Sample (seeded), filter for correct answers and split by length, in the
/// order set by spec.filter_first. Histogram covers the kept samples.
struct PreparedData {
  std::size_t input_count = 0;
  std::string sample_warning;
  data::FilterResult filter;
  data::SplitResult split;
  data::Histogram histogram;
};
PreparedData prepare_data(const std::vector<data::ReasoningSample>& samples, const data::SplitSpec& spec);
/// Writes short/long/discarded.jsonl, dropped.jsonl, summary.json, hist.csv and hist.svg.
void write_prepared(const PreparedData& prepared, const std::filesystem::path& dir);

/// Replaces dir/name atomically.
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace lct::pipeline
