#include "spm/importance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "spm/errors.hpp"

namespace spm {

Method method_from_string(const std::string& s) {
  if (s == "l1") return Method::L1;
  if (s == "bn_gamma") return Method::BnGamma;
  throw std::invalid_argument("unknown method: " + s);
}

const char* method_name(Method m) { return m == Method::L1 ? "l1" : "bn_gamma"; }

Scope scope_from_string(const std::string& s) {
  if (s == "per_layer") return Scope::PerLayer;
  if (s == "global") return Scope::Global;
  throw std::invalid_argument("unknown scope: " + s);
}

const char* scope_name(Scope s) { return s == Scope::PerLayer ? "per_layer" : "global"; }

ImportanceReport score_l1(const ModelGraph& graph) {
  ImportanceReport report;
  report.method = Method::L1;
  report.graph_fingerprint = structure_fingerprint(graph);
  for (const auto& layer : graph.layers) {
    const auto* c = std::get_if<Conv2D>(&layer);
    if (!c) continue;
    std::vector<float> s(static_cast<std::size_t>(c->out_channels), 0.0f);
    // weights are [kh, kw, in, out]: out is the fastest index.
    const std::size_t rows = c->weights.data.size() / static_cast<std::size_t>(c->out_channels);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* p = c->weights.data.data() + r * static_cast<std::size_t>(c->out_channels);
      for (int co = 0; co < c->out_channels; ++co) s[static_cast<std::size_t>(co)] += std::fabs(p[co]);
    }
    report.scores.emplace_back(c->id, std::move(s));
  }
  return report;
}

ImportanceReport score_bn_gamma(const ModelGraph& graph) {
  ImportanceReport report;
  report.method = Method::BnGamma;
  report.graph_fingerprint = structure_fingerprint(graph);
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const auto* c = std::get_if<Conv2D>(&graph.layers[i]);
    if (!c) continue;
    const BatchNorm* bn = i + 1 < graph.layers.size()
                              ? std::get_if<BatchNorm>(&graph.layers[i + 1])
                              : nullptr;
    if (!bn)
      throw StructureError("conv '" + c->id + "' has no following BatchNorm to take gamma from");
    std::vector<float> s(bn->gamma.data.size());
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = std::fabs(bn->gamma.data[k]);
    report.scores.emplace_back(c->id, std::move(s));
  }
  return report;
}

ImportanceReport score(const ModelGraph& graph, Method method) {
  return method == Method::L1 ? score_l1(graph) : score_bn_gamma(graph);
}

PrunePlan make_plan(const ImportanceReport& report, double ratio, Scope scope) {
  if (!(ratio >= 0.0 && ratio < 1.0))
    throw std::invalid_argument("ratio must be in [0, 1), got " + std::to_string(ratio));

  PrunePlan plan;
  plan.source_graph_fingerprint = report.graph_fingerprint;
  for (const auto& [id, s] : report.scores) plan.removals.emplace_back(id, std::vector<int>{});

  if (scope == Scope::PerLayer) {
    for (std::size_t li = 0; li < report.scores.size(); ++li) {
      const auto& s = report.scores[li].second;
      const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(s.size())));
      std::vector<int> order(s.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      std::stable_sort(order.begin(), order.end(),
                       [&s](int a, int b) { return s[static_cast<std::size_t>(a)] < s[static_cast<std::size_t>(b)]; });
      order.resize(k);
      std::sort(order.begin(), order.end());
      plan.removals[li].second = std::move(order);
    }
    return plan;
  }

  // Global: one ranking over (layer order, channel, score) triples.
  struct Cand {
    std::size_t layer;
    int channel;
    float score;
  };
  std::vector<Cand> cands;
  std::size_t total = 0;
  for (std::size_t li = 0; li < report.scores.size(); ++li) {
    const auto& s = report.scores[li].second;
    total += s.size();
    for (std::size_t c = 0; c < s.size(); ++c)
      cands.push_back({li, static_cast<int>(c), s[c]});
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.channel < b.channel;
  });
  auto want = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(total)));
  std::vector<std::size_t> removed_per_layer(report.scores.size(), 0);
  std::size_t taken = 0;
  for (const auto& c : cands) {
    if (taken == want) break;
    // Survivor constraint: never empty a layer; skip to the next candidate.
    if (removed_per_layer[c.layer] + 1 >= report.scores[c.layer].second.size()) continue;
    plan.removals[c.layer].second.push_back(c.channel);
    ++removed_per_layer[c.layer];
    ++taken;
  }
  plan.shortfall = static_cast<int>(want - taken);
  for (auto& [id, idx] : plan.removals) std::sort(idx.begin(), idx.end());
  return plan;
}

}  // namespace spm
