#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "lct/toy/lab.hpp"

namespace lct::toy {

/// Everything `lct toy train|eval|sweep` needs: model, training schedule and sweep grid.
struct ToyExperiment {
  ToyConfig model;
  int steps = 3000;
  double lr = 3e-3;
  TrainOptions train;
  std::vector<double> factors = {1, 2, 4, 8, 16, 32};
  std::vector<int> lengths = {1024};
  int trials = 200;
  std::uint64_t eval_seed = 99;

  void validate() const;  // throws InvalidConfig
};

/// Key-value retrieval at train_ctx 256, theta 500, head_dim 16. Training holds
/// sequences at <= 64 tokens for 3000 steps (the retrieval circuit forms there),
/// ramps to 256 over 1500 steps and finishes at full length. At 1024 tokens the
/// accuracy rises with the theta factor up to ~8 and falls again by 32.
ToyExperiment mechanism_experiment(std::uint64_t seed);

/// Keys missing from `j` keep the mechanism preset's values; unknown keys throw InvalidConfig.
/// Layout: {"model": {...}, "train": {...}, "task": {...}, "eval": {...}}.
ToyExperiment experiment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ToyExperiment& e);
ToyExperiment load_experiment(const std::filesystem::path& path);

}  // namespace lct::toy
