#include "lct/toy/experiment.hpp"

#include <fstream>

#include "lct/error.hpp"
#include "lct/json_keys.hpp"

namespace lct::toy {

using nlohmann::json;

void ToyExperiment::validate() const {
  model.validate();
  if (steps < 1) throw Error(ErrorKind::InvalidConfig, "train.steps must be >= 1");
  if (!(lr > 0.0)) throw Error(ErrorKind::InvalidConfig, "train.lr must be > 0");
  if (train.batch < 1) throw Error(ErrorKind::InvalidConfig, "train.batch must be >= 1");
  if (train.hold < 0 || train.curriculum < 0 || train.probes < 0 || train.warmup < 0) {
    throw Error(ErrorKind::InvalidConfig, "train.hold/curriculum/probes/warmup must be >= 0");
  }
  if (factors.empty() || lengths.empty()) throw Error(ErrorKind::InvalidConfig, "eval needs factors and lengths");
  for (double f : factors) {
    if (!(f > 0.0)) throw Error(ErrorKind::InvalidConfig, "eval.factors must be > 0");
  }
  for (int l : lengths) {
    if (l < 16) throw Error(ErrorKind::InvalidConfig, "eval.lengths must be >= 16");
  }
  if (trials < 1) throw Error(ErrorKind::InvalidConfig, "eval.trials must be >= 1");
}

ToyExperiment mechanism_experiment(std::uint64_t seed) {
  ToyExperiment e;
  e.model.vocab = 64;
  e.model.d_model = 64;
  e.model.heads = 4;
  e.model.layers = 2;
  e.model.train_ctx = 256;
  e.model.theta = 500.0;
  e.model.seed = seed;
  e.steps = 6000;
  e.lr = 3e-3;
  e.train.task = TaskKind::KeyValue;
  e.train.task_options.pairs = 4;
  e.train.task_options.shared_alphabet = true;
  e.train.batch = 32;
  e.train.min_len = 16;
  e.train.warmup = 100;
  e.train.hold = 3000;
  e.train.curriculum = 1500;
  e.train.probes = 4;
  return e;
}

ToyExperiment experiment_from_json(const json& j) {
  require_known_keys(j, {"model", "train", "task", "eval"}, "toy config");
  ToyExperiment e = mechanism_experiment(0);
  try {
    if (j.contains("model")) {
      json m = nlohmann::json(e.model);
      require_known_keys(j["model"], {"vocab", "d_model", "heads", "layers", "d_ff", "train_ctx", "theta", "seed"},
                         "toy config model");
      m.update(j["model"]);
      if (!j["model"].contains("d_ff")) m.erase("d_ff");
      e.model = m.get<ToyConfig>();
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      require_known_keys(t, {"steps", "lr", "batch", "min_len", "log_uniform", "warmup", "clip", "hold", "curriculum",
                             "probes"},
                         "toy config train");
      e.steps = t.value("steps", e.steps);
      e.lr = t.value("lr", e.lr);
      e.train.batch = t.value("batch", e.train.batch);
      e.train.min_len = t.value("min_len", e.train.min_len);
      e.train.log_uniform = t.value("log_uniform", e.train.log_uniform);
      e.train.warmup = t.value("warmup", e.train.warmup);
      e.train.clip = t.value("clip", e.train.clip);
      e.train.hold = t.value("hold", e.train.hold);
      e.train.curriculum = t.value("curriculum", e.train.curriculum);
      e.train.probes = t.value("probes", e.train.probes);
    }
    if (j.contains("task")) {
      const auto& t = j["task"];
      require_known_keys(t, {"kind", "pairs", "hops", "updates", "shared_alphabet", "filler"}, "toy config task");
      if (t.contains("kind")) e.train.task = parse_task(t["kind"].get<std::string>());
      auto& o = e.train.task_options;
      o.pairs = t.value("pairs", o.pairs);
      o.hops = t.value("hops", o.hops);
      o.updates = t.value("updates", o.updates);
      o.shared_alphabet = t.value("shared_alphabet", o.shared_alphabet);
      o.filler = t.value("filler", o.filler);
    }
    if (j.contains("eval")) {
      const auto& v = j["eval"];
      require_known_keys(v, {"factors", "lengths", "trials", "seed"}, "toy config eval");
      e.factors = v.value("factors", e.factors);
      e.lengths = v.value("lengths", e.lengths);
      e.trials = v.value("trials", e.trials);
      e.eval_seed = v.value("seed", e.eval_seed);
    }
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::InvalidConfig, std::string("toy config: ") + ex.what());
  }
  e.validate();
  return e;
}

json to_json(const ToyExperiment& e) {
  const auto& t = e.train;
  const auto& o = t.task_options;
  return json{{"model", json(e.model)},
              {"train",
               {{"steps", e.steps},
                {"lr", e.lr},
                {"batch", t.batch},
                {"min_len", t.min_len},
                {"log_uniform", t.log_uniform},
                {"warmup", t.warmup},
                {"clip", t.clip},
                {"hold", t.hold},
                {"curriculum", t.curriculum},
                {"probes", t.probes}}},
              {"task",
               {{"kind", std::string(task_name(t.task))},
                {"pairs", o.pairs},
                {"hops", o.hops},
                {"updates", o.updates},
                {"shared_alphabet", o.shared_alphabet},
                {"filler", o.filler}}},
              {"eval", {{"factors", e.factors}, {"lengths", e.lengths}, {"trials", e.trials}, {"seed", e.eval_seed}}}};
}

ToyExperiment load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + ex.what());
  }
  return experiment_from_json(j);
}

}  // namespace lct::toy
