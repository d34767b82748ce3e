#include "lct/model_surgery.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "lct/error.hpp"
#include "lct/provenance.hpp"

namespace lct {

namespace {

double parse_positive(const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end || !std::isfinite(v) || v <= 0.0) return -1.0;
  return v;
}

nlohmann::json spec_to_json(const MergeSpec& spec) {
  auto arr = nlohmann::json::array();
  for (const auto& e : spec.entries) arr.push_back({{"ref", e.ref}, {"weight", e.weight}});
  return arr;
}

}  // namespace

std::string format_shortest(double value) {
  char buf[512];
  auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed);
  if (res.ec != std::errc{}) res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void validate(const MergeSpec& spec) {
  if (spec.entries.empty()) throw Error(ErrorKind::WeightSumInvalid, "merge spec has no entries");
  double sum = 0.0;
  for (const auto& e : spec.entries) {
    if (!e.checkpoint) throw Error(ErrorKind::WeightSumInvalid, "entry '" + e.ref + "' has no checkpoint");
    if (!(e.weight >= 0.0 && e.weight <= 1.0)) {
      throw Error(ErrorKind::WeightSumInvalid, "weight of '" + e.ref + "' outside [0,1]");
    }
    sum += e.weight;
  }
  if (std::fabs(sum - 1.0) > 1e-9) {
    throw Error(ErrorKind::WeightSumInvalid, "weights sum to " + format_shortest(sum) + ", expected 1");
  }
}

std::vector<const MergeEntry*> canonical_order(const MergeSpec& spec) {
  std::vector<const MergeEntry*> order;
  for (const auto& e : spec.entries) order.push_back(&e);
  std::stable_sort(order.begin(), order.end(), [](const MergeEntry* a, const MergeEntry* b) {
    if (a->weight != b->weight) return a->weight > b->weight;
    return a->ref < b->ref;
  });
  return order;
}

std::vector<double> merged_values_f64(const MergeSpec& spec, const std::string& tensor_name) {
  std::vector<double> acc;
  bool first = true;
  for (const MergeEntry* e : canonical_order(spec)) {
    // Zero-weight entries are skipped so 0*inf and -0.0 + 0.0 cannot leak in.
    if (e->weight == 0.0) continue;
    const Tensor& t = e->checkpoint->tensors.at(tensor_name);
    if (first) {
      acc.resize(t.numel());
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = e->weight * t.value(i);
      first = false;
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e->weight * t.value(i);
    }
  }
  return acc;
}

Checkpoint linear_merge(const MergeSpec& spec) {
  validate(spec);
  const Checkpoint& reference = *spec.entries.front().checkpoint;
  for (std::size_t i = 1; i < spec.entries.size(); ++i) require_compatible(reference, *spec.entries[i].checkpoint);

  const MergeEntry* heaviest = &spec.entries.front();
  for (const auto& e : spec.entries)
    if (e.weight > heaviest->weight) heaviest = &e;

  Checkpoint out;
  out.metadata = heaviest->checkpoint->metadata;
  out.metadata[kMergeSpecKey] = spec_to_json(spec).dump();
  for (const auto& [name, t] : reference.tensors) {
    out.tensors.emplace(name, Tensor::from_values(t.dtype(), t.shape(), merged_values_f64(spec, name)));
  }
  return out;
}

double rope_theta_of(const Checkpoint& ckpt) {
  auto it = ckpt.metadata.find(kRopeThetaKey);
  if (it == ckpt.metadata.end()) throw Error(ErrorKind::MissingTheta, "metadata has no rope_theta");
  const double theta = parse_positive(it->second);
  if (theta <= 0.0) throw Error(ErrorKind::MissingTheta, "rope_theta '" + it->second + "' is not a positive decimal");
  return theta;
}

Checkpoint scale_rope_theta(const Checkpoint& ckpt, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw Error(ErrorKind::NonPositiveFactor, "theta factor must be positive, got " + format_shortest(factor));
  }
  const double theta = rope_theta_of(ckpt);
  double cumulative = 1.0;
  if (auto it = ckpt.metadata.find(kRopeThetaFactorKey); it != ckpt.metadata.end()) {
    const double prev = parse_positive(it->second);
    if (prev > 0.0) cumulative = prev;
  }

  Checkpoint out = ckpt;
  if (factor != 1.0) out.metadata[kRopeThetaKey] = format_shortest(theta * factor);
  out.metadata[kRopeThetaFactorKey] = format_shortest(cumulative * factor);
  return out;
}

RecipeResult apply_recipe(const RecipeSpec& spec) {
  if (!spec.base || !spec.donor) throw Error(ErrorKind::WeightSumInvalid, "recipe needs both base and donor");
  if (!(spec.merge_ratio >= 0.0 && spec.merge_ratio <= 1.0)) {
    throw Error(ErrorKind::WeightSumInvalid, "merge ratio must lie in [0,1]");
  }
  auto scaled = std::make_shared<const Checkpoint>(scale_rope_theta(*spec.base, spec.theta_factor));

  MergeSpec merge;
  merge.entries.push_back({spec.base_ref, scaled, 1.0 - spec.merge_ratio});
  merge.entries.push_back({spec.donor_ref, spec.donor, spec.merge_ratio});

  RecipeResult result;
  result.checkpoint = linear_merge(merge);

  const nlohmann::json params = {{"theta_factor", spec.theta_factor}, {"merge_ratio", spec.merge_ratio}};
  result.checkpoint.metadata[kRecipeKey] = params.dump();
  result.provenance = {
      {"tool_version", kToolVersion},
      {"operation", "recipe"},
      {"parameters", params},
      {"inputs",
       {{{"role", "base"}, {"ref", spec.base_ref}, {"sha256", sha256_hex(serialize_checkpoint(*spec.base))}},
        {{"role", "donor"}, {"ref", spec.donor_ref}, {"sha256", sha256_hex(serialize_checkpoint(*spec.donor))}}}},
      {"output_sha256", sha256_hex(serialize_checkpoint(result.checkpoint))},
  };
  return result;
}

}  // namespace lct
