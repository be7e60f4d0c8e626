#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spm/graph.hpp"
#include "spm/importance.hpp"

namespace spm {

// What to do with the weights of the pruned model.
struct WeightPolicy {
  enum class Kind { Reload, Reinit };
  Kind kind = Kind::Reload;
  std::uint64_t seed = 0;  // used by Reinit only

  static WeightPolicy reload() { return {Kind::Reload, 0}; }
  static WeightPolicy reinit(std::uint64_t seed) { return {Kind::Reinit, seed}; }
};

enum class DepKind { BnSlice, Pass, InputSlice, FlattenRemap };
const char* dep_kind_name(DepKind k);

// For each prunable conv: the layers whose tensors must change when its
// output channels are removed, in chain order.
using ConsumerMap =
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, DepKind>>>>;

ConsumerMap consumer_map(const ModelGraph& graph);

// Builds a new, genuinely smaller graph (no mask layers). Under Reload all
// surviving weights are copied bit-exactly from `original`; under Reinit the
// structure is kept and weights are drawn fresh. `original` is untouched.
ModelGraph apply_plan(const ModelGraph& original, const PrunePlan& plan, WeightPolicy policy);

// Max absolute logit difference over n_inputs seeded random batches, run in
// inference mode. A measurement, not an assertion: tol is only echoed back
// by callers that want a verdict.
double check_equivalence(const ModelGraph& a, const ModelGraph& b, int n_inputs,
                         std::uint64_t seed);

}  // namespace spm
