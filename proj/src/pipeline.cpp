#include "lct/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#include "lct/error.hpp"
#include "lct/json_keys.hpp"
#include "lct/model_surgery.hpp"
#include "lct/provenance.hpp"
#include "lct/tensor_store.hpp"

namespace lct::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kStageOrder[] = {"surgery", "niah", "data", "sft", "eval"};
const std::vector<std::int64_t> kDefaultHistEdges = {0, 1024, 2048, 4096, 8192, 16384, 32768};

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw Error(ErrorKind::InvalidRunConfig, where + ": " + what);
}

template <typename T>
T field(const json& obj, const char* key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    bad(where + "." + key, "wrong type (" + std::string(obj.at(key).type_name()) + ")");
  }
}

std::string required_string(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) bad(where, "missing required key '" + std::string(key) + "'");
  auto s = field<std::string>(obj, key, where, "");
  if (s.empty()) bad(where + "." + key, "must not be empty");
  return s;
}

void keys(const json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  require_known_keys(j, known, where, ErrorKind::InvalidRunConfig);
}

int parse_length_value(const json& v, const std::string& where) {
  try {
    if (v.is_number_integer()) return v.get<int>();
    if (v.is_string()) return niah::parse_length(v.get<std::string>());
  } catch (const Error& e) {
    bad(where, e.what());
  }
  bad(where, "lengths are integers or strings like \"4k\"");
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string file_hash(const fs::path& p) {
  if (!fs::exists(p)) throw Error(ErrorKind::IoFailure, "input not found: " + p.string());
  return sha256_file(p);
}

std::string substitute(std::string s, const std::string& key, const std::string& value) {
  for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size())) {
    s.replace(pos, key.size(), value);
  }
  return s;
}

void emit(std::ostream* log, const std::string& line) {
  if (log) *log << line << '\n';
}

json provenance_for(const RunConfig& cfg, const std::string& stage, json inputs) {
  return json{{"tool_version", kToolVersion},
              {"stage", stage},
              {"seed", cfg.seed},
              {"parameters", cfg.stage_json(stage)["config"]},
              {"inputs", std::move(inputs)}};
}

json input_entry(const RunConfig& cfg, const std::string& role, const std::string& ref) {
  return json{{"role", role}, {"ref", ref}, {"sha256", file_hash(cfg.resolve(ref))}};
}

void run_surgery(const RunConfig& cfg, const fs::path& dir) {
  const auto& s = *cfg.surgery;
  auto base = std::make_shared<const Checkpoint>(load_checkpoint(cfg.resolve(s.base)));
  json prov;
  Checkpoint out;
  if (s.donor) {
    RecipeSpec spec;
    spec.theta_factor = s.theta_factor;
    spec.merge_ratio = s.merge_ratio;
    spec.base_ref = s.base;
    spec.base = base;
    spec.donor_ref = *s.donor;
    spec.donor = std::make_shared<const Checkpoint>(load_checkpoint(cfg.resolve(*s.donor)));
    auto result = apply_recipe(spec);
    out = std::move(result.checkpoint);
    prov = std::move(result.provenance);
    prov["stage"] = "surgery";
  } else {
    out = scale_rope_theta(*base, s.theta_factor);
    prov = provenance_for(cfg, "surgery", json::array({input_entry(cfg, "base", s.base)}));
    prov["operation"] = "theta";
    prov["output_sha256"] = sha256_hex(serialize_checkpoint(out));
  }
  save_checkpoint(out, dir / "model.lct");
  write_file(dir / "provenance.json", prov.dump(2) + "\n");
}

void run_niah(const RunConfig& cfg, ChatClient& client, const fs::path& dir, std::ostream* log) {
  niah::NiahSpec spec = *cfg.niah;
  json inputs = json::array();
  if (spec.corpus) {
    inputs.push_back(input_entry(cfg, "corpus", spec.corpus->string()));
    spec.corpus = cfg.resolve(spec.corpus->string());
  }
  write_file(dir / "provenance.json", provenance_for(cfg, "niah", std::move(inputs)).dump(2) + "\n");
  const auto stats = niah::run_grid(client, spec, dir);
  const auto grid = niah::NiahGrid::from_json(json::parse(read_text(dir / "grid.json")));
  emit(log, "[niah] " + std::to_string(stats.requested) + " cases sent, " + std::to_string(stats.skipped) +
                " resumed, " + std::to_string(stats.unscored) + " unscored; aggregate " +
                format_shortest(niah::aggregate_score(grid)) + ", effective length " +
                std::to_string(niah::effective_context_length(grid, spec.tau)));
  if (stats.unscored > 0) {
    throw Error(ErrorKind::BackendUnreachable,
                std::to_string(stats.unscored) + " NIAH cases unscored; rerun to retry them");
  }
}

void run_data(const RunConfig& cfg, const fs::path& dir, std::ostream* log) {
  const auto& d = *cfg.data;
  write_file(dir / "provenance.json",
             provenance_for(cfg, "data", json::array({input_entry(cfg, "input", d.input)})).dump(2) + "\n");
  const auto prepared = prepare_data(data::read_jsonl(cfg.resolve(d.input)), d.split);
  write_prepared(prepared, dir);
  emit(log, "[data] " + std::to_string(prepared.input_count) + " samples: " +
                std::to_string(prepared.split.short_set.size()) + " short, " +
                std::to_string(prepared.split.long_set.size()) + " long, " +
                std::to_string(prepared.split.discarded.size()) + " discarded, " +
                std::to_string(prepared.filter.dropped.size()) + " dropped by the answer filter");
  if (!prepared.sample_warning.empty()) emit(log, "[data] warning: " + prepared.sample_warning);
}

void run_sft(const RunConfig& cfg, const fs::path& dir, std::ostream* log) {
  const fs::path out = cfg.output_dir();
  std::string cmd = *cfg.sft_command;
  cmd = substitute(cmd, "{model}", (out / "surgery" / "model.lct").string());
  cmd = substitute(cmd, "{data}", (out / "data").string());
  cmd = substitute(cmd, "{out}", dir.string());
  write_file(dir / "provenance.json", provenance_for(cfg, "sft", json::array()).dump(2) + "\n");
  write_file(dir / "command.txt", cmd + "\n");
  emit(log, "[sft] " + cmd);
  const std::string full = "(" + cmd + ") > '" + (dir / "log.txt").string() + "' 2>&1";
  const int rc = std::system(full.c_str());
  if (rc != 0) {
    throw Error(ErrorKind::StageFailed, "sft command exited with status " + std::to_string(rc) + "; see " +
                                            (dir / "log.txt").string());
  }
}

void run_eval_stage(const RunConfig& cfg, ChatClient& client, const fs::path& dir, std::ostream* log) {
  const auto& e = *cfg.eval;
  eval::EvalSpec spec;
  spec.dataset = cfg.resolve(e.dataset);
  spec.n = e.n;
  spec.params = e.params;
  spec.concurrency = e.concurrency;
  spec.retry = cfg.retry;
  write_file(dir / "eval_config.json", cfg.stage_json("eval")["config"].dump(2) + "\n");
  write_file(dir / "provenance.json",
             provenance_for(cfg, "eval", json::array({input_entry(cfg, "dataset", e.dataset)})).dump(2) + "\n");
  const auto stats = eval::run_eval(client, eval::read_problems(spec.dataset), spec, dir);
  emit(log, "[eval] " + std::to_string(stats.generated) + " problems generated, " + std::to_string(stats.skipped) +
                " resumed, " + std::to_string(stats.failed) + " failed");
  const auto report = eval::write_report(dir);
  emit(log, "[eval] accuracy " + format_shortest(report["accuracy"].get<double>()));
  if (stats.failed > 0) {
    throw Error(ErrorKind::BackendUnreachable, std::to_string(stats.failed) + " problems failed; rerun to retry them");
  }
}

std::string stage_hash(const RunConfig& cfg, const std::string& stage) {
  return sha256_hex(cfg.stage_json(stage).dump());
}

void write_manifest(const fs::path& root) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), root).generic_string();
    if (rel == "manifest.json" || rel.ends_with(".tmp")) continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& f : files) out[f] = sha256_file(root / f);
  write_file(root / "manifest.json", json{{"tool_version", kToolVersion}, {"files", out}}.dump(2) + "\n");
}

}  // namespace

void write_file(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
    out << content;
    if (!out) throw Error(ErrorKind::IoFailure, "write failed for " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IoFailure, "cannot move " + tmp.string() + ": " + ec.message());
}

fs::path RunConfig::resolve(const std::string& p) const {
  const fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

std::string RunConfig::backend_url() const {
  constexpr std::string_view key = "file=";
  const auto pos = backend.find(key);
  if (!backend.starts_with("mock://") || pos == std::string::npos) return backend;
  const auto end = backend.find('&', pos);
  const std::string file = backend.substr(pos + key.size(), end == std::string::npos ? end : end - pos - key.size());
  return backend.substr(0, pos + key.size()) + resolve(file).string() +
         (end == std::string::npos ? "" : backend.substr(end));
}

std::vector<std::string> RunConfig::stages() const {
  std::vector<std::string> out;
  if (surgery) out.emplace_back("surgery");
  if (niah) out.emplace_back("niah");
  if (data) out.emplace_back("data");
  if (sft_command) out.emplace_back("sft");
  if (eval) out.emplace_back("eval");
  return out;
}

json RunConfig::stage_json(const std::string& stage) const {
  json config;
  json inputs = json::object();
  if (stage == "surgery" && surgery) {
    config = {{"base", surgery->base}, {"theta_factor", surgery->theta_factor}};
    inputs["base"] = file_hash(resolve(surgery->base));
    if (surgery->donor) {
      config["donor"] = *surgery->donor;
      config["merge_ratio"] = surgery->merge_ratio;
      inputs["donor"] = file_hash(resolve(*surgery->donor));
    }
  } else if (stage == "niah" && niah) {
    config = niah->to_json();
    config["concurrency"] = niah->concurrency;
    config["model"] = niah->model;
    config["backend"] = backend;
    if (niah->corpus) inputs["corpus"] = file_hash(resolve(niah->corpus->string()));
  } else if (stage == "data" && data) {
    const auto& s = data->split;
    config = {{"input", data->input},        {"short_max", s.short_max}, {"long_max", s.long_max},
              {"sample_n", s.sample_n},      {"seed", s.seed},           {"filter_first", s.filter_first},
              {"hist_edges", s.hist_edges}};
    inputs["input"] = file_hash(resolve(data->input));
  } else if (stage == "sft" && sft_command) {
    config = {{"command", *sft_command}};
  } else if (stage == "eval" && eval) {
    config = {{"dataset", eval->dataset},
              {"n", eval->n},
              {"model", eval->params.model},
              {"temperature", eval->params.temperature},
              {"max_tokens", eval->params.max_tokens},
              {"backend", backend}};
    inputs["dataset"] = file_hash(resolve(eval->dataset));
  } else {
    throw Error(ErrorKind::InvalidRunConfig, "stage '" + stage + "' is not configured");
  }
  return json{{"stage", stage}, {"seed", seed}, {"config", config}, {"inputs", inputs}, {"tool_version", kToolVersion}};
}

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  keys(j, {"output", "seed", "backend", "retry", "surgery", "niah", "data", "sft_command", "eval"}, "run config");
  RunConfig c;
  c.base_dir = base_dir;
  c.output = field<std::string>(j, "output", "run config", c.output);
  if (c.output.empty()) bad("run config.output", "must not be empty");
  c.seed = field<std::uint64_t>(j, "seed", "run config", 0);
  c.backend = field<std::string>(j, "backend", "run config", c.backend);
  if (!(c.backend.starts_with("mock://") || c.backend.starts_with("http://") || c.backend.starts_with("https://"))) {
    bad("run config.backend", "expected mock://, http:// or https://");
  }

  eval::RetryPolicy& retry = c.retry;
  if (j.contains("retry")) {
    const auto& r = j["retry"];
    keys(r, {"max_retries", "base_delay_ms"}, "run config.retry");
    retry.max_retries = field<int>(r, "max_retries", "retry", retry.max_retries);
    retry.base_delay = std::chrono::milliseconds(field<int>(r, "base_delay_ms", "retry", 200));
    if (retry.max_retries < 0 || retry.base_delay.count() < 0) bad("run config.retry", "values must be >= 0");
  }

  if (j.contains("surgery")) {
    const auto& s = j["surgery"];
    const std::string w = "run config.surgery";
    keys(s, {"base", "donor", "theta_factor", "merge_ratio"}, w);
    SurgeryStage st;
    st.base = required_string(s, "base", w);
    if (s.contains("donor")) st.donor = required_string(s, "donor", w);
    st.theta_factor = field<double>(s, "theta_factor", w, st.theta_factor);
    st.merge_ratio = field<double>(s, "merge_ratio", w, st.merge_ratio);
    if (!(st.theta_factor > 0.0)) bad(w + ".theta_factor", "must be > 0");
    if (!(st.merge_ratio >= 0.0 && st.merge_ratio <= 1.0)) bad(w + ".merge_ratio", "must lie in [0, 1]");
    if (s.contains("merge_ratio") && !st.donor) bad(w + ".merge_ratio", "requires a donor");
    c.surgery = st;
  }

  if (j.contains("niah")) {
    const auto& n = j["niah"];
    const std::string w = "run config.niah";
    keys(n, {"lengths", "depths", "tau", "max_tokens", "concurrency", "model", "corpus", "needles"}, w);
    niah::NiahSpec spec;
    if (!n.contains("lengths") || !n["lengths"].is_array()) bad(w, "'lengths' must be an array");
    for (std::size_t i = 0; i < n["lengths"].size(); ++i) {
      spec.lengths.push_back(parse_length_value(n["lengths"][i], w + ".lengths[" + std::to_string(i) + "]"));
    }
    spec.depths = field<std::vector<double>>(n, "depths", w, {0.0, 0.25, 0.5, 0.75, 1.0});
    spec.tau = field<double>(n, "tau", w, spec.tau);
    spec.max_tokens = field<int>(n, "max_tokens", w, spec.max_tokens);
    spec.concurrency = field<int>(n, "concurrency", w, spec.concurrency);
    spec.model = field<std::string>(n, "model", w, spec.model);
    if (n.contains("corpus")) spec.corpus = required_string(n, "corpus", w);
    if (n.contains("needles")) {
      if (!n["needles"].is_array()) bad(w + ".needles", "must be an array");
      for (std::size_t i = 0; i < n["needles"].size(); ++i) {
        const auto& nd = n["needles"][i];
        const std::string wi = w + ".needles[" + std::to_string(i) + "]";
        keys(nd, {"text", "question", "expected"}, wi);
        spec.needles.push_back(
            {required_string(nd, "text", wi), required_string(nd, "question", wi), required_string(nd, "expected", wi)});
      }
    } else {
      spec.needles = {niah::default_needle()};
    }
    spec.seed = c.seed;
    spec.retry = retry;
    try {
      spec.validate();
    } catch (const Error& e) {
      bad(w, e.what());
    }
    c.niah = spec;
  }

  if (j.contains("data")) {
    const auto& d = j["data"];
    const std::string w = "run config.data";
    keys(d, {"input", "short_max", "long_max", "sample_n", "seed", "filter_first", "hist_edges"}, w);
    DataStage st;
    st.input = required_string(d, "input", w);
    json split = d;
    split.erase("input");
    if (!split.contains("seed")) split["seed"] = c.seed;
    try {
      st.split = data::split_spec_from_json(split);
    } catch (const Error& e) {
      bad(w, e.what());
    }
    if (st.split.hist_edges.empty()) st.split.hist_edges = kDefaultHistEdges;
    c.data = st;
  }

  if (j.contains("sft_command")) {
    c.sft_command = required_string(j, "sft_command", "run config");
  }

  if (j.contains("eval")) {
    const auto& e = j["eval"];
    const std::string w = "run config.eval";
    keys(e, {"dataset", "n", "temperature", "max_tokens", "model", "concurrency"}, w);
    EvalStage st;
    st.dataset = required_string(e, "dataset", w);
    st.n = field<int>(e, "n", w, st.n);
    st.params.temperature = field<double>(e, "temperature", w, st.params.temperature);
    st.params.max_tokens = field<int>(e, "max_tokens", w, st.params.max_tokens);
    st.params.model = field<std::string>(e, "model", w, st.params.model);
    st.concurrency = field<int>(e, "concurrency", w, st.concurrency);
    if (st.n < 1) bad(w + ".n", "must be >= 1");
    if (st.params.temperature < 0.0) bad(w + ".temperature", "must be >= 0");
    if (st.params.max_tokens < 1) bad(w + ".max_tokens", "must be >= 1");
    if (st.concurrency < 1) bad(w + ".concurrency", "must be >= 1");
    c.eval = st;
  }

  if (c.stages().empty()) bad("run config", "no stage requested (surgery, niah, data, sft_command, eval)");
  return c;
}

RunConfig load_run_config(const fs::path& path, std::optional<std::uint64_t> seed) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidRunConfig, path.string() + ": " + e.what());
  }
  if (seed && j.is_object()) j["seed"] = *seed;
  return parse_run_config(j, fs::absolute(path).parent_path());
}

PreparedData prepare_data(const std::vector<data::ReasoningSample>& samples, const data::SplitSpec& spec) {
  spec.validate();
  PreparedData out;
  out.input_count = samples.size();
  if (spec.filter_first) {
    out.filter = data::filter_correct(samples);
    out.filter.kept = data::sample_n(out.filter.kept, spec.sample_n, spec.seed, &out.sample_warning);
  } else {
    out.filter = data::filter_correct(data::sample_n(samples, spec.sample_n, spec.seed, &out.sample_warning));
  }
  out.split = data::split_by_length(out.filter.kept, spec);
  out.histogram = data::length_histogram(out.filter.kept, spec.hist_edges.empty() ? kDefaultHistEdges : spec.hist_edges);
  return out;
}

void write_prepared(const PreparedData& p, const fs::path& dir) {
  fs::create_directories(dir);
  data::write_jsonl(dir / "short.jsonl", p.split.short_set);
  data::write_jsonl(dir / "long.jsonl", p.split.long_set);
  data::write_jsonl(dir / "discarded.jsonl", p.split.discarded);
  std::string dropped;
  for (const auto& [s, reason] : p.filter.dropped) {
    dropped += json{{"id", s.id}, {"reason", std::string(data::to_string(reason))}}.dump() + "\n";
  }
  write_file(dir / "dropped.jsonl", dropped);
  json summary = {{"input", p.input_count},
                  {"filter", p.filter.summary()},
                  {"short", p.split.short_set.size()},
                  {"long", p.split.long_set.size()},
                  {"discarded", p.split.discarded.size()}};
  if (!p.sample_warning.empty()) summary["warning"] = p.sample_warning;
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  write_file(dir / "hist.csv", data::histogram_csv(p.histogram));
  write_file(dir / "hist.svg", data::histogram_svg(p.histogram, "Token length of kept samples"));
}

RunResult run(const RunConfig& cfg, bool force, ChatClient* client, std::ostream* log) {
  const fs::path root = cfg.output_dir();
  fs::create_directories(root);
  std::unique_ptr<ChatClient> owned;
  auto backend = [&]() -> ChatClient& {
    if (client) return *client;
    if (!owned) owned = make_client(cfg.backend_url());
    return *owned;
  };

  RunResult result;
  const auto requested = cfg.stages();
  for (const char* name : kStageOrder) {
    const std::string stage = name;
    if (std::find(requested.begin(), requested.end(), stage) == requested.end()) continue;
    const fs::path dir = root / stage;
    const fs::path marker = dir / ".done";
    try {
      const std::string hash = stage_hash(cfg, stage);
      if (!force && fs::exists(marker) && read_text(marker) == hash + "\n") {
        emit(log, "[" + stage + "] up to date, skipped");
        result.stages.push_back({stage, true});
        continue;
      }
      // A completed stage with different inputs (or --force) starts from scratch;
      // an interrupted one keeps its partial results for resumption.
      if (force || fs::exists(marker)) fs::remove_all(dir);
      fs::create_directories(dir);
      if (stage == "surgery") run_surgery(cfg, dir);
      if (stage == "niah") run_niah(cfg, backend(), dir, log);
      if (stage == "data") run_data(cfg, dir, log);
      if (stage == "sft") run_sft(cfg, dir, log);
      if (stage == "eval") run_eval_stage(cfg, backend(), dir, log);
      write_file(marker, hash + "\n");
      result.stages.push_back({stage, false});
    } catch (const Error& e) {
      throw Error(ErrorKind::StageFailed, "stage '" + stage + "' failed: " + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorKind::StageFailed, "stage '" + stage + "' failed: " + e.what());
    }
  }
  write_manifest(root);
  result.backend_calls = client ? client->calls() : (owned ? owned->calls() : 0);
  return result;
}

}  // namespace lct::pipeline
