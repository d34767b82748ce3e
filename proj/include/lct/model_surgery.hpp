#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "lct/tensor_store.hpp"

namespace lct {

inline constexpr const char* kRopeThetaKey = "rope_theta";
inline constexpr const char* kRopeThetaFactorKey = "rope_theta_factor";
inline constexpr const char* kMergeSpecKey = "merge_spec";
inline constexpr const char* kRecipeKey = "recipe";

/// One input of an affine merge. `ref` names the checkpoint (usually its path)
/// and is the secondary key of the canonical accumulation order.
struct MergeEntry {
  std::string ref;
  std::shared_ptr<const Checkpoint> checkpoint;
  double weight = 0.0;
};

struct MergeSpec {
  std::vector<MergeEntry> entries;
};

/// Throws WeightSumInvalid unless entries are non-empty, each weight is in [0,1]
/// and the weights sum to 1 within 1e-9.
void validate(const MergeSpec& spec);

/// Entries in accumulation order: weight descending, then ref ascending.
std::vector<const MergeEntry*> canonical_order(const MergeSpec& spec);

/// Un-narrowed F64 merge of one tensor, in canonical accumulation order.
std::vector<double> merged_values_f64(const MergeSpec& spec, const std::string& tensor_name);

Checkpoint linear_merge(const MergeSpec& spec);

/// Multiplies metadata "rope_theta" by `factor`; tensors are never touched.
Checkpoint scale_rope_theta(const Checkpoint& ckpt, double factor);

double rope_theta_of(const Checkpoint& ckpt);

struct RecipeSpec {
  double theta_factor = 16.0;
  double merge_ratio = 0.3;  // donor weight; base gets 1 - merge_ratio
  std::string base_ref;
  std::shared_ptr<const Checkpoint> base;
  std::string donor_ref;
  std::shared_ptr<const Checkpoint> donor;
};

struct RecipeResult {
  Checkpoint checkpoint;
  nlohmann::json provenance;
};

RecipeResult apply_recipe(const RecipeSpec& spec);

/// Shortest decimal string (fixed notation) that parses back to `value`.
std::string format_shortest(double value);

}  // namespace lct
