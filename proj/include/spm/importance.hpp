#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spm/graph.hpp"

namespace spm {

enum class Method { L1, BnGamma };
enum class Scope { PerLayer, Global };

Method method_from_string(const std::string& s);
const char* method_name(Method m);
Scope scope_from_string(const std::string& s);
const char* scope_name(Scope s);

// Per-channel importance of every prunable conv layer, kept in graph order
// (order is the tie-break key when ranking).
struct ImportanceReport {
  Method method = Method::L1;
  std::vector<std::pair<std::string, std::vector<float>>> scores;
  std::uint64_t graph_fingerprint = 0;
};

// Channel indices to remove per conv layer, strictly increasing per layer.
struct PrunePlan {
  std::vector<std::pair<std::string, std::vector<int>>> removals;
  std::uint64_t source_graph_fingerprint = 0;
  // Global scope only: removals dropped because every remaining candidate
  // would have emptied its layer.
  int shortfall = 0;

  bool empty() const {
    for (const auto& [id, idx] : removals)
      if (!idx.empty()) return false;
    return true;
  }
  std::size_t total_removals() const {
    std::size_t n = 0;
    for (const auto& [id, idx] : removals) n += idx.size();
    return n;
  }
};

// Score of channel c = sum |weights[:, :, :, c]|, bias excluded.
ImportanceReport score_l1(const ModelGraph& graph);

// Score of channel c = |gamma_c| of the batch-norm following the conv.
ImportanceReport score_bn_gamma(const ModelGraph& graph);

ImportanceReport score(const ModelGraph& graph, Method method);

// Converts a target pruned ratio into concrete removals. PerLayer removes
// floor(ratio*C) lowest-scoring channels per layer; Global ranks all
// channels together and removes floor(ratio*sum(C)), skipping candidates
// that would empty a layer. Ties resolved by layer order then channel index.
PrunePlan make_plan(const ImportanceReport& report, double ratio, Scope scope);

}  // namespace spm
