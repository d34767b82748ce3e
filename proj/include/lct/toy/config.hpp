#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace lct::toy {

struct ToyConfig {
  int vocab = 64;
  int d_model = 64;
  int heads = 4;
  int layers = 2;
  int d_ff = 0;  // 0 means 4 * d_model
  int train_ctx = 256;
  double theta = 10000.0;
  std::uint64_t seed = 0;

  int head_dim() const { return d_model / heads; }
  int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }

  /// Throws InvalidConfig when d_model % heads != 0 or head_dim is odd.
  void validate() const;

  /// Same architecture; theta and seed may differ.
  bool same_architecture(const ToyConfig& other) const;

  bool operator==(const ToyConfig&) const = default;
};

void to_json(nlohmann::json& j, const ToyConfig& c);
void from_json(const nlohmann::json& j, ToyConfig& c);

}  // namespace lct::toy
