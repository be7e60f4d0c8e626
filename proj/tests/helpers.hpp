#pragma once

// Shared builders and independent oracles for the test suites. Oracles here
// must stay independent of the library code paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "spm/graph.hpp"
#include "spm/importance.hpp"
#include "spm/rng.hpp"
#include "spm/tensor.hpp"

namespace spm::test {

inline Conv2D make_conv(std::string id, int in, int out, int k = 3) {
  Conv2D c;
  c.id = std::move(id);
  c.in_channels = in;
  c.out_channels = out;
  c.kernel_h = k;
  c.kernel_w = k;
  c.weights = Tensor::zeros({k, k, in, out});
  c.bias = Tensor::zeros({out});
  return c;
}

// eps small enough that sqrt(1 + eps) rounds to 1: unit-variance stats make
// this BN an exact identity.
inline BatchNorm identity_bn(std::string id, int channels) {
  BatchNorm b;
  b.id = std::move(id);
  b.channels = channels;
  b.gamma = Tensor::full({channels}, 1.0f);
  b.beta = Tensor::zeros({channels});
  b.moving_mean = Tensor::zeros({channels});
  b.moving_var = Tensor::full({channels}, 1.0f);
  b.eps = 1e-30f;
  return b;
}

inline Dense make_dense(std::string id, int in, int out) {
  Dense d;
  d.id = std::move(id);
  d.in_features = in;
  d.out_features = out;
  d.weights = Tensor::zeros({in, out});
  d.bias = Tensor::zeros({out});
  return d;
}

inline Dense identity_dense(std::string id, int n) {
  Dense d = make_dense(std::move(id), n, n);
  for (int i = 0; i < n; ++i) d.weights.data[static_cast<std::size_t>(i) * n + i] = 1.0f;
  return d;
}

inline void randomize(Tensor& t, Rng& rng, double scale = 0.5) {
  for (auto& v : t.data) v = static_cast<float>(rng.normal(0.0, scale));
}

inline Tensor random_input(const ModelGraph& g, int n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x;
  x.shape = {n, g.input_shape[0], g.input_shape[1], g.input_shape[2]};
  x.data.resize(static_cast<std::size_t>(shape_product(x.shape)));
  for (auto& v : x.data) v = static_cast<float>(rng.normal());
  return x;
}

// Brute-force ranking oracle for make_plan: full sort of explicit tuples.
inline PrunePlan brute_force_plan(const ImportanceReport& report, double ratio, Scope scope) {
  PrunePlan plan;
  plan.source_graph_fingerprint = report.graph_fingerprint;
  for (const auto& [id, s] : report.scores) plan.removals.emplace_back(id, std::vector<int>{});

  using Triple = std::tuple<float, std::size_t, int>;  // score, layer pos, channel
  if (scope == Scope::PerLayer) {
    for (std::size_t li = 0; li < report.scores.size(); ++li) {
      const auto& s = report.scores[li].second;
      std::vector<Triple> all;
      for (std::size_t c = 0; c < s.size(); ++c) all.emplace_back(s[c], li, static_cast<int>(c));
      std::sort(all.begin(), all.end());
      const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(s.size())));
      std::vector<int> idx;
      for (std::size_t i = 0; i < k; ++i) idx.push_back(std::get<2>(all[i]));
      std::sort(idx.begin(), idx.end());
      plan.removals[li].second = idx;
    }
    return plan;
  }
  std::vector<Triple> all;
  std::size_t total = 0;
  for (std::size_t li = 0; li < report.scores.size(); ++li) {
    const auto& s = report.scores[li].second;
    total += s.size();
    for (std::size_t c = 0; c < s.size(); ++c) all.emplace_back(s[c], li, static_cast<int>(c));
  }
  std::sort(all.begin(), all.end());
  const auto want = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(total)));
  std::vector<std::size_t> removed(report.scores.size(), 0);
  std::size_t taken = 0;
  for (const auto& [score, li, c] : all) {
    if (taken == want) break;
    if (removed[li] + 1 >= report.scores[li].second.size()) continue;
    plan.removals[li].second.push_back(c);
    ++removed[li];
    ++taken;
  }
  plan.shortfall = static_cast<int>(want - taken);
  for (auto& [id, idx] : plan.removals) std::sort(idx.begin(), idx.end());
  return plan;
}

inline bool plans_equal(const PrunePlan& a, const PrunePlan& b) {
  return a.removals == b.removals && a.shortfall == b.shortfall;
}

// Independent parameter-count oracle for the reference 16-layer architecture
// (conv stack + 4096/4096/1000 head, no batch-norm): explicit table sum.
inline std::int64_t vgg16_reference_param_count() {
  const std::vector<std::pair<int, int>> convs = {
      {3, 64},    {64, 64},   {64, 128},  {128, 128}, {128, 256}, {256, 256}, {256, 256},
      {256, 512}, {512, 512}, {512, 512}, {512, 512}, {512, 512}, {512, 512}};
  std::int64_t total = 0;
  for (auto [in, out] : convs) total += 9LL * in * out + out;
  total += 25088LL * 4096 + 4096;
  total += 4096LL * 4096 + 4096;
  total += 4096LL * 1000 + 1000;
  return total;
}

}  // namespace spm::test
