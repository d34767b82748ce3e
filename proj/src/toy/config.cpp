#include "lct/toy/config.hpp"

#include <algorithm>

#include "lct/error.hpp"

namespace lct::toy {

void ToyConfig::validate() const {
  if (vocab < 8) throw Error(ErrorKind::InvalidConfig, "vocab must be >= 8");
  if (d_model < 2 || heads < 1) throw Error(ErrorKind::InvalidConfig, "d_model and heads must be positive");
  if (d_model % heads != 0) {
    throw Error(ErrorKind::InvalidConfig,
                "d_model " + std::to_string(d_model) + " not divisible by heads " + std::to_string(heads));
  }
  if (head_dim() % 2 != 0) throw Error(ErrorKind::InvalidConfig, "head_dim must be even");
  if (layers < 0) throw Error(ErrorKind::InvalidConfig, "layers must be >= 0");
  if (d_ff < 0) throw Error(ErrorKind::InvalidConfig, "d_ff must be >= 0");
  if (train_ctx < 16) throw Error(ErrorKind::InvalidConfig, "train_ctx must be >= 16");
  if (!(theta > 0.0)) throw Error(ErrorKind::InvalidConfig, "theta must be > 0");
}

bool ToyConfig::same_architecture(const ToyConfig& o) const {
  return vocab == o.vocab && d_model == o.d_model && heads == o.heads && layers == o.layers &&
         ff_dim() == o.ff_dim();
}

void to_json(nlohmann::json& j, const ToyConfig& c) {
  j = nlohmann::json{{"vocab", c.vocab},     {"d_model", c.d_model},     {"heads", c.heads},
                     {"layers", c.layers},   {"d_ff", c.ff_dim()},       {"train_ctx", c.train_ctx},
                     {"theta", c.theta},     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ToyConfig& c) {
  static const char* known[] = {"vocab", "d_model", "heads", "layers", "d_ff", "train_ctx", "theta", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw Error(ErrorKind::InvalidConfig, "unknown toy config key '" + key + "'");
    }
  }
  ToyConfig d;
  c.vocab = j.value("vocab", d.vocab);
  c.d_model = j.value("d_model", d.d_model);
  c.heads = j.value("heads", d.heads);
  c.layers = j.value("layers", d.layers);
  c.d_ff = j.value("d_ff", d.d_ff);
  c.train_ctx = j.value("train_ctx", d.train_ctx);
  c.theta = j.value("theta", d.theta);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

}  // namespace lct::toy
