#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "lct/backend.hpp"
#include "lct/data_pipeline.hpp"
#include "lct/error.hpp"
#include "lct/eval_harness.hpp"
#include "lct/math_verify.hpp"
#include "lct/model_surgery.hpp"
#include "lct/niah_bench.hpp"
#include "lct/pipeline.hpp"
#include "lct/provenance.hpp"
#include "lct/tensor_store.hpp"
#include "lct/toy/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lct;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::InvalidConfig, "bad " + what + " '" + s + "'");
}

void write_provenance(const fs::path& out, const json& prov) {
  pipeline::write_file(out.string() + ".provenance.json", prov.dump(2) + "\n");
}

json input_ref(const std::string& role, const std::string& path) {
  return json{{"role", role}, {"ref", path}, {"sha256", sha256_file(path)}};
}

// ---- surgery ----

void cmd_merge(const std::vector<std::string>& inputs, const std::string& out) {
  MergeSpec spec;
  json prov_inputs = json::array();
  for (const auto& item : inputs) {
    const auto colon = item.rfind(':');
    if (colon == std::string::npos || colon == 0) {
      throw Error(ErrorKind::InvalidConfig, "merge inputs are PATH:WEIGHT, got '" + item + "'");
    }
    const std::string path = item.substr(0, colon);
    const double w = parse_double(item.substr(colon + 1), "weight");
    spec.entries.push_back({path, std::make_shared<const Checkpoint>(load_checkpoint(path)), w});
    auto ref = input_ref("input", path);
    ref["weight"] = w;
    prov_inputs.push_back(ref);
  }
  const Checkpoint merged = linear_merge(spec);
  save_checkpoint(merged, out);
  write_provenance(out, {{"tool_version", kToolVersion},
                         {"operation", "merge"},
                         {"inputs", prov_inputs},
                         {"output_sha256", sha256_file(out)}});
  std::cout << "merged " << inputs.size() << " checkpoints into " << out << "\n";
}

void cmd_theta(const std::string& in, double factor, const std::string& out) {
  const Checkpoint scaled = scale_rope_theta(load_checkpoint(in), factor);
  save_checkpoint(scaled, out);
  write_provenance(out, {{"tool_version", kToolVersion},
                         {"operation", "theta"},
                         {"parameters", {{"theta_factor", factor}}},
                         {"inputs", json::array({input_ref("base", in)})},
                         {"output_sha256", sha256_file(out)}});
  std::cout << "rope_theta " << scaled.metadata.at(kRopeThetaKey) << " written to " << out << "\n";
}

void cmd_recipe(const std::string& base, const std::string& donor, double factor, double ratio, const std::string& out) {
  RecipeSpec spec;
  spec.theta_factor = factor;
  spec.merge_ratio = ratio;
  spec.base_ref = base;
  spec.base = std::make_shared<const Checkpoint>(load_checkpoint(base));
  spec.donor_ref = donor;
  spec.donor = std::make_shared<const Checkpoint>(load_checkpoint(donor));
  const auto result = apply_recipe(spec);
  save_checkpoint(result.checkpoint, out);
  write_provenance(out, result.provenance);
  std::cout << "recipe (theta x" << format_shortest(factor) << ", ratio " << format_shortest(ratio) << ") written to "
            << out << "\n";
}

// ---- toy ----

toy::ToyExperiment load_toy_experiment(const std::string& path, const Globals& g) {
  auto e = path.empty() ? toy::mechanism_experiment(0) : toy::load_experiment(path);
  if (g.seed) e.model.seed = *g.seed;
  return e;
}

void cmd_toy_train(const toy::ToyExperiment& e, const fs::path& out) {
  fs::create_directories(out);
  std::vector<double> losses;
  auto opts = e.train;
  const int every = std::max(1, e.steps / 20);
  opts.on_step = [every, &e](int step, double loss) {
    if (step % every == 0 || step == e.steps) std::cout << "step " << step << " loss " << loss << "\n" << std::flush;
  };
  const auto ckpt = toy::train(e.model, e.steps, e.lr, opts, &losses);
  toy::save_toy(ckpt, out / "model.lct");
  std::ostringstream csv;
  csv << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) csv << i + 1 << ',' << format_shortest(losses[i]) << '\n';
  pipeline::write_file(out / "losses.csv", csv.str());
  pipeline::write_file(out / "toy_config.json", toy::to_json(e).dump(2) + "\n");
  std::cout << "checkpoint written to " << (out / "model.lct").string() << "\n";
}

toy::ToyCheckpoint load_toy_ckpt(const std::string& ckpt, const fs::path& out) {
  const fs::path path = ckpt.empty() ? out / "model.lct" : fs::path(ckpt);
  return toy::load_toy(path);
}

void cmd_toy_eval(const toy::ToyExperiment& e, const fs::path& out, const std::string& ckpt_path, double factor) {
  const auto ckpt = load_toy_ckpt(ckpt_path, out);
  const auto rows = toy::sweep(ckpt, e.train.task, {factor}, e.lengths, e.trials, e.eval_seed, e.train.task_options);
  fs::create_directories(out);
  pipeline::write_file(out / "eval.csv", toy::sweep_csv(rows));
  const double chance = 1.0 / toy::Vocabulary{ckpt.config.vocab}.value_count();
  for (const auto& r : rows) {
    const int hits = static_cast<int>(std::lround(r.accuracy * e.trials));
    const double p = toy::binomial_upper_tail(hits, e.trials, chance);
    std::cout << "length " << r.length << " factor " << format_shortest(r.factor) << " accuracy "
              << format_shortest(r.accuracy) << (p < 0.01 ? "" : "  (not above chance, p >= 0.01)") << "\n";
  }
}

void cmd_toy_sweep(const toy::ToyExperiment& e, const fs::path& out, const std::string& ckpt_path) {
  const auto ckpt = load_toy_ckpt(ckpt_path, out);
  const auto rows = toy::sweep(ckpt, e.train.task, e.factors, e.lengths, e.trials, e.eval_seed, e.train.task_options);
  fs::create_directories(out);
  pipeline::write_file(out / "sweep.csv", toy::sweep_csv(rows));
  std::cout << toy::sweep_csv(rows);
}

// ---- niah / verify / data / eval ----

struct NiahArgs {
  std::string backend = "mock://echo";
  std::string lengths = "1k,2k,4k";
  std::string depths = "0,0.25,0.5,0.75,1";
  std::string out;
  double tau = 0.85;
  int max_tokens = 64;
  int concurrency = 4;
  std::string model = "default";
  std::string corpus;
  std::string needle, question, expected;
};

void cmd_niah(const NiahArgs& a, const Globals& g) {
  niah::NiahSpec spec;
  for (const auto& l : split_list(a.lengths)) spec.lengths.push_back(niah::parse_length(l));
  for (const auto& d : split_list(a.depths)) spec.depths.push_back(parse_double(d, "depth"));
  spec.tau = a.tau;
  spec.max_tokens = a.max_tokens;
  spec.concurrency = a.concurrency;
  spec.model = a.model;
  spec.seed = g.seed.value_or(0);
  if (!a.corpus.empty()) spec.corpus = a.corpus;
  if (!a.needle.empty() || !a.question.empty() || !a.expected.empty()) {
    spec.needles = {{a.needle, a.question, a.expected}};
  } else {
    spec.needles = {niah::default_needle()};
  }
  auto client = make_client(a.backend);
  const auto stats = niah::run_grid(*client, spec, a.out);
  std::ifstream in(fs::path(a.out) / "summary.json");
  const auto summary = json::parse(in);
  std::cout << "cases sent " << stats.requested << ", resumed " << stats.skipped << ", unscored " << stats.unscored
            << "\naggregate " << format_shortest(summary["aggregate"].get<double>()) << "\neffective length "
            << summary["effective_length"] << "\n";
}

int cmd_verify(const std::string& a, const std::string& b, bool extract) {
  std::optional<math::Answer> lhs = extract ? math::extract_answer(a) : std::optional(math::make_answer(a));
  if (!lhs) {
    std::cout << "no answer found\n";
    return 1;
  }
  const auto rhs = math::make_answer(b);
  const bool eq = math::equivalent(*lhs, rhs);
  std::cout << (eq ? "equivalent" : "not equivalent") << ": " << lhs->canonical << " vs " << rhs.canonical << "\n";
  return eq ? 0 : 1;
}

struct DataArgs {
  std::string in, out;
  std::int64_t short_max = 8192, long_max = 16384;
  std::size_t n = 20000;
  std::string edges = "0,1024,2048,4096,8192,16384,32768";
};

data::SplitSpec data_spec(const DataArgs& a) {
  data::SplitSpec s;
  s.short_max = a.short_max;
  s.long_max = a.long_max;
  s.validate();
  return s;
}

void cmd_data(const std::string& op, const DataArgs& a, const Globals& g) {
  const auto samples = data::read_jsonl(a.in);
  fs::create_directories(a.out);
  const fs::path out = a.out;
  if (op == "split") {
    const auto r = data::split_by_length(samples, data_spec(a));
    data::write_jsonl(out / "short.jsonl", r.short_set);
    data::write_jsonl(out / "long.jsonl", r.long_set);
    data::write_jsonl(out / "discarded.jsonl", r.discarded);
    std::cout << "short " << r.short_set.size() << ", long " << r.long_set.size() << ", discarded "
              << r.discarded.size() << "\n";
  } else if (op == "sample") {
    std::string warning;
    const auto picked = data::sample_n(samples, a.n, g.seed.value_or(0), &warning);
    if (!warning.empty()) std::cerr << "warning: " << warning << "\n";
    data::write_jsonl(out / "sampled.jsonl", picked);
    std::cout << "sampled " << picked.size() << " of " << samples.size() << "\n";
  } else if (op == "filter") {
    const auto r = data::filter_correct(samples);
    data::write_jsonl(out / "kept.jsonl", r.kept);
    std::string dropped;
    for (const auto& [s, reason] : r.dropped) {
      dropped += json{{"id", s.id}, {"reason", std::string(data::to_string(reason))}}.dump() + "\n";
    }
    pipeline::write_file(out / "dropped.jsonl", dropped);
    pipeline::write_file(out / "filter_summary.json", r.summary().dump(2) + "\n");
    std::cout << r.summary().dump() << "\n";
  } else {
    std::vector<std::int64_t> edges;
    for (const auto& e : split_list(a.edges)) edges.push_back(static_cast<std::int64_t>(parse_double(e, "edge")));
    const auto h = data::length_histogram(samples, edges);
    pipeline::write_file(out / "hist.csv", data::histogram_csv(h));
    pipeline::write_file(out / "hist.svg", data::histogram_svg(h, "Token length"));
    std::cout << data::histogram_csv(h);
  }
}

struct EvalArgs {
  std::string backend = "mock://echo";
  std::string dataset, out;
  int n = 5;
  double temperature = 0.6;
  int max_tokens = 16384;
  std::string model = "default";
  int concurrency = 8;
};

void cmd_eval(const EvalArgs& a) {
  eval::EvalSpec spec;
  spec.dataset = a.dataset;
  spec.n = a.n;
  spec.params.temperature = a.temperature;
  spec.params.max_tokens = a.max_tokens;
  spec.params.model = a.model;
  spec.concurrency = a.concurrency;
  fs::create_directories(a.out);
  pipeline::write_file(fs::path(a.out) / "eval_config.json",
                       json{{"dataset", a.dataset},
                            {"n", a.n},
                            {"model", a.model},
                            {"temperature", a.temperature},
                            {"max_tokens", a.max_tokens},
                            {"backend", a.backend}}
                               .dump(2) + "\n");
  pipeline::write_file(fs::path(a.out) / "provenance.json",
                       json{{"tool_version", kToolVersion}, {"inputs", json::array({input_ref("dataset", a.dataset)})}}
                               .dump(2) + "\n");
  auto client = make_client(a.backend);
  const auto stats = eval::run_eval(*client, eval::read_problems(a.dataset), spec, a.out);
  const auto report = eval::write_report(a.out);
  std::cout << "generated " << stats.generated << ", resumed " << stats.skipped << ", failed " << stats.failed
            << "\naccuracy " << format_shortest(report["accuracy"].get<double>()) << " over "
            << report["generations"] << " generations\n";
}

int cmd_run(const std::string& config, bool force, const std::string& out_override, const Globals& g) {
  auto cfg = pipeline::load_run_config(config, g.seed);
  if (!out_override.empty()) cfg.output = fs::absolute(out_override).string();
  const auto result = pipeline::run(cfg, force, nullptr, &std::cout);
  std::size_t ran = 0;
  for (const auto& s : result.stages) ran += s.skipped ? 0 : 1;
  std::cout << "run complete: " << ran << " stage(s) executed, " << result.stages.size() - ran << " skipped, "
            << result.backend_calls << " backend call(s); artifacts in " << cfg.output_dir().string() << "\n";
  return 0;
}

void cmd_serve_mock(const std::string& mode, const std::string& script, const std::string& host, int port) {
  std::string url = "mock://" + mode;
  if (!script.empty()) url += "?file=" + script;
  auto backend = MockBackend::from_url(url);
  MockServer server(*backend);
  std::cout << "serving mock backend (" << mode << ") on http://" << host << ":" << port << "/v1/chat/completions\n"
            << std::flush;
  server.run(host, port);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lct: long-context toolkit (checkpoint surgery, NIAH, data prep, evaluation, toy lab)"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "lct " + std::string(kToolVersion));
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed for every random choice (overrides config seeds)");
  int exit_code = 0;
  std::function<void()> action;

  // merge
  auto* merge = app.add_subcommand("merge", "Weighted linear merge of checkpoints");
  std::vector<std::string> merge_inputs;
  std::string merge_out;
  merge->add_option("inputs", merge_inputs, "PATH:WEIGHT pairs (weights sum to 1)")->required();
  merge->add_option("-o,--out", merge_out, "Output checkpoint")->required();
  merge->callback([&] { action = [&] { cmd_merge(merge_inputs, merge_out); }; });

  // theta
  auto* theta = app.add_subcommand("theta", "Scale rope_theta in checkpoint metadata");
  std::string theta_in, theta_out;
  double theta_factor = 16.0;
  theta->add_option("-i,--in", theta_in, "Input checkpoint")->required()->check(CLI::ExistingFile);
  theta->add_option("-f,--factor", theta_factor, "Theta factor")->capture_default_str();
  theta->add_option("-o,--out", theta_out, "Output checkpoint")->required();
  theta->callback([&] { action = [&] { cmd_theta(theta_in, theta_factor, theta_out); }; });

  // recipe
  auto* recipe = app.add_subcommand("recipe", "Scale the base's theta, then merge with a donor");
  std::string recipe_base, recipe_donor, recipe_out;
  double recipe_factor = 16.0, recipe_ratio = 0.3;
  recipe->add_option("--base", recipe_base, "Base checkpoint (theta is scaled)")->required()->check(CLI::ExistingFile);
  recipe->add_option("--donor", recipe_donor, "Donor checkpoint")->required()->check(CLI::ExistingFile);
  recipe->add_option("--theta-factor", recipe_factor, "Theta factor for the base")->capture_default_str();
  recipe->add_option("--ratio", recipe_ratio, "Donor weight")->capture_default_str();
  recipe->add_option("-o,--out", recipe_out, "Output checkpoint")->required();
  recipe->callback([&] { action = [&] { cmd_recipe(recipe_base, recipe_donor, recipe_factor, recipe_ratio, recipe_out); }; });

  // toy
  auto* toy_cmd = app.add_subcommand("toy", "Desk-scale RoPE transformer lab");
  toy_cmd->require_subcommand(1);
  std::string toy_config, toy_out = "runs/toy", toy_ckpt;
  double toy_factor = 1.0;
  auto add_toy_common = [&](CLI::App* sub) {
    sub->add_option("--config", toy_config, "Toy experiment JSON (defaults to the mechanism preset)")
        ->check(CLI::ExistingFile);
    sub->add_option("-o,--out", toy_out, "Run directory")->capture_default_str();
  };
  auto* toy_train = toy_cmd->add_subcommand("train", "Train and write <out>/model.lct");
  add_toy_common(toy_train);
  auto* toy_eval = toy_cmd->add_subcommand("eval", "Accuracy at the configured lengths for one theta factor");
  add_toy_common(toy_eval);
  toy_eval->add_option("--ckpt", toy_ckpt, "Checkpoint (default <out>/model.lct)");
  toy_eval->add_option("--factor", toy_factor, "Theta factor")->capture_default_str();
  auto* toy_sweep = toy_cmd->add_subcommand("sweep", "Accuracy over factors x lengths, written to <out>/sweep.csv");
  add_toy_common(toy_sweep);
  toy_sweep->add_option("--ckpt", toy_ckpt, "Checkpoint (default <out>/model.lct)");
  toy_train->callback([&] { action = [&] { cmd_toy_train(load_toy_experiment(toy_config, g), toy_out); }; });
  toy_eval->callback(
      [&] { action = [&] { cmd_toy_eval(load_toy_experiment(toy_config, g), toy_out, toy_ckpt, toy_factor); }; });
  toy_sweep->callback([&] { action = [&] { cmd_toy_sweep(load_toy_experiment(toy_config, g), toy_out, toy_ckpt); }; });

  // niah
  auto* niah_cmd = app.add_subcommand("niah", "Needle-in-a-haystack grid against a chat backend");
  NiahArgs na;
  niah_cmd->add_option("--backend", na.backend, "mock://MODE or http(s)://HOST:PORT")->capture_default_str();
  niah_cmd->add_option("--lengths", na.lengths, "Comma-separated lengths (\"4k\" = 4096)")->capture_default_str();
  niah_cmd->add_option("--depths", na.depths, "Comma-separated depths in [0,1]")->capture_default_str();
  niah_cmd->add_option("-o,--out", na.out, "Output directory")->required();
  niah_cmd->add_option("--tau", na.tau, "Accuracy threshold for the effective length")->capture_default_str();
  niah_cmd->add_option("--max-tokens", na.max_tokens, "Generation cap per case")->capture_default_str();
  niah_cmd->add_option("--concurrency", na.concurrency, "Parallel requests")->capture_default_str();
  niah_cmd->add_option("--model", na.model, "Model name sent to the backend")->capture_default_str();
  niah_cmd->add_option("--corpus", na.corpus, "Filler text file (default: synthetic)")->check(CLI::ExistingFile);
  niah_cmd->add_option("--needle", na.needle, "Needle sentence");
  niah_cmd->add_option("--question", na.question, "Question about the needle");
  niah_cmd->add_option("--expected", na.expected, "Answer substring");
  niah_cmd->callback([&] { action = [&] { cmd_niah(na, g); }; });

  // verify
  auto* verify = app.add_subcommand("verify", "Math answer equivalence (exit 0 when equivalent)");
  std::string va, vb;
  bool v_extract = false;
  verify->add_option("answer", va, "Answer, or a full response with --extract")->required();
  verify->add_option("gold", vb, "Reference answer")->required();
  verify->add_flag("--extract", v_extract, "Extract the final answer from a response first");
  verify->callback([&] { action = [&] { exit_code = cmd_verify(va, vb, v_extract); }; });

  // data
  auto* data_cmd = app.add_subcommand("data", "Reasoning-dataset preparation");
  data_cmd->require_subcommand(1);
  DataArgs da;
  auto add_data_common = [&](CLI::App* sub) {
    sub->add_option("-i,--in", da.in, "Input JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--out", da.out, "Output directory")->required();
  };
  auto* d_split = data_cmd->add_subcommand("split", "short (<= short-max), long (<= long-max), discarded");
  add_data_common(d_split);
  d_split->add_option("--short-max", da.short_max, "Short-set token cap")->capture_default_str();
  d_split->add_option("--long-max", da.long_max, "Long-set token cap")->capture_default_str();
  auto* d_sample = data_cmd->add_subcommand("sample", "Seeded uniform subset");
  add_data_common(d_sample);
  d_sample->add_option("-n,--n", da.n, "Subset size")->capture_default_str();
  auto* d_filter = data_cmd->add_subcommand("filter", "Keep samples whose final answer matches gold");
  add_data_common(d_filter);
  auto* d_hist = data_cmd->add_subcommand("hist", "Token-length histogram (CSV + SVG)");
  add_data_common(d_hist);
  d_hist->add_option("--edges", da.edges, "Comma-separated ascending bin edges")->capture_default_str();
  for (auto* sub : {d_split, d_sample, d_filter, d_hist}) {
    sub->callback([&, sub] { action = [&, sub] { cmd_data(sub->get_name(), da, g); }; });
  }

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "pass@1(n) evaluation with failure taxonomy and length report");
  EvalArgs ea;
  eval_cmd->add_option("--backend", ea.backend, "mock://MODE or http(s)://HOST:PORT")->capture_default_str();
  eval_cmd->add_option("--dataset", ea.dataset, "Problems JSONL")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("-o,--out", ea.out, "Run directory (resumable)")->required();
  eval_cmd->add_option("-n,--n", ea.n, "Generations per problem")->capture_default_str();
  eval_cmd->add_option("--temperature", ea.temperature, "Sampling temperature")->capture_default_str();
  eval_cmd->add_option("--max-tokens", ea.max_tokens, "Generation cap")->capture_default_str();
  eval_cmd->add_option("--model", ea.model, "Model name sent to the backend")->capture_default_str();
  eval_cmd->add_option("--concurrency", ea.concurrency, "Parallel problems")->capture_default_str();
  eval_cmd->callback([&] { action = [&] { cmd_eval(ea); }; });

  // run
  auto* run_cmd = app.add_subcommand("run", "Execute the stages of a run config");
  std::string run_config, run_out;
  bool run_force = false;
  run_cmd->add_option("config", run_config, "Run config JSON")->required()->check(CLI::ExistingFile);
  run_cmd->add_flag("--force", run_force, "Rerun stages that are already complete");
  run_cmd->add_option("-o,--out", run_out, "Override the output root");
  run_cmd->callback([&] { action = [&] { exit_code = cmd_run(run_config, run_force, run_out, g); }; });

  // serve-mock
  auto* serve = app.add_subcommand("serve-mock", "Serve the mock backend over HTTP");
  std::string serve_mode = "echo", serve_script, serve_host = "127.0.0.1";
  int serve_port = 8000;
  serve->add_option("--mode", serve_mode, "echo, repeat, verbose or script")->capture_default_str();
  serve->add_option("--script", serve_script, "Rules file for script mode")->check(CLI::ExistingFile);
  serve->add_option("--host", serve_host, "Bind address")->capture_default_str();
  serve->add_option("--port", serve_port, "Port")->capture_default_str();
  serve->callback([&] { action = [&] { cmd_serve_mock(serve_mode, serve_script, serve_host, serve_port); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (seed_opt->count() > 0) g.seed = seed_value;
  try {
    if (action) action();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
