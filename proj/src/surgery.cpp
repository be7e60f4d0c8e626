#include "spm/surgery.hpp"

#include <algorithm>
#include <stdexcept>

#include "spm/engine.hpp"
#include "spm/errors.hpp"
#include "spm/rng.hpp"

namespace spm {

namespace {

std::vector<int> keep_indices(int count, const std::vector<int>& removals) {
  std::vector<int> keep;
  keep.reserve(static_cast<std::size_t>(count) - removals.size());
  std::size_t r = 0;
  for (int i = 0; i < count; ++i) {
    if (r < removals.size() && removals[r] == i) {
      ++r;
    } else {
      keep.push_back(i);
    }
  }
  return keep;
}

// Selects `keep` along `axis`, preserving order of all other axes.
Tensor slice_axis(const Tensor& t, std::size_t axis, const std::vector<int>& keep) {
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= t.shape[i];
  for (std::size_t i = axis + 1; i < t.shape.size(); ++i) inner *= t.shape[i];
  const std::int64_t dim = t.shape[axis];

  Tensor out;
  out.shape = t.shape;
  out.shape[axis] = static_cast<std::int64_t>(keep.size());
  out.data.resize(static_cast<std::size_t>(outer * static_cast<std::int64_t>(keep.size()) * inner));

  float* dst = out.data.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    const float* base = t.data.data() + o * dim * inner;
    for (int k : keep) {
      const float* src = base + static_cast<std::int64_t>(k) * inner;
      std::copy(src, src + inner, dst);
      dst += inner;
    }
  }
  return out;
}

const std::vector<int>* removals_for(const PrunePlan& plan, const std::string& id) {
  for (const auto& [lid, idx] : plan.removals)
    if (lid == id) return &idx;
  return nullptr;
}

void validate_plan_against(const ModelGraph& graph, const PrunePlan& plan) {
  if (plan.source_graph_fingerprint != structure_fingerprint(graph))
    throw PlanMismatchError("plan fingerprint does not match the target graph structure");
  for (const auto& [id, idx] : plan.removals) {
    const Conv2D* conv = nullptr;
    for (const auto& layer : graph.layers)
      if (const auto* c = std::get_if<Conv2D>(&layer); c && c->id == id) conv = c;
    if (!conv) throw InvalidPlanError("plan names unknown conv layer '" + id + "'");
    if (idx.size() >= static_cast<std::size_t>(conv->out_channels))
      throw InvalidPlanError("plan would leave no surviving channel in '" + id + "'");
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= conv->out_channels)
        throw InvalidPlanError("plan index " + std::to_string(idx[i]) + " out of range for '" + id + "'");
      if (i > 0 && idx[i] <= idx[i - 1])
        throw InvalidPlanError("plan indices for '" + id + "' are not strictly increasing");
    }
  }
}

}  // namespace

const char* dep_kind_name(DepKind k) {
  switch (k) {
    case DepKind::BnSlice: return "bn-slice";
    case DepKind::Pass: return "pass";
    case DepKind::InputSlice: return "input-slice";
    default: return "flatten-remap";
  }
}

ConsumerMap consumer_map(const ModelGraph& graph) {
  int flatten_count = 0;
  for (const auto& layer : graph.layers)
    if (std::holds_alternative<Flatten>(layer)) ++flatten_count;
  if (flatten_count > 1)
    throw StructureError("graph has " + std::to_string(flatten_count) +
                         " Flatten layers; not a single chain to a classifier");

  ConsumerMap map;
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const auto* conv = std::get_if<Conv2D>(&graph.layers[i]);
    if (!conv) continue;
    std::vector<std::pair<std::string, DepKind>> deps;
    std::size_t j = i + 1;
    if (j >= graph.layers.size() || !std::holds_alternative<BatchNorm>(graph.layers[j]))
      throw StructureError("conv '" + conv->id + "' is not immediately followed by a BatchNorm");
    deps.emplace_back(layer_id(graph.layers[j]), DepKind::BnSlice);
    ++j;
    bool terminated = false;
    for (; j < graph.layers.size() && !terminated; ++j) {
      const auto& l = graph.layers[j];
      if (std::holds_alternative<ReLU>(l) || std::holds_alternative<MaxPool>(l)) {
        deps.emplace_back(layer_id(l), DepKind::Pass);
      } else if (std::holds_alternative<Conv2D>(l)) {
        deps.emplace_back(layer_id(l), DepKind::InputSlice);
        terminated = true;
      } else if (std::holds_alternative<Flatten>(l)) {
        if (j + 1 >= graph.layers.size() || !std::holds_alternative<Dense>(graph.layers[j + 1]))
          throw StructureError("Flatten '" + layer_id(l) + "' is not followed by a Dense layer");
        deps.emplace_back(layer_id(graph.layers[j + 1]), DepKind::FlattenRemap);
        terminated = true;
      } else {
        throw StructureError("unexpected layer '" + layer_id(l) + "' after conv '" + conv->id + "'");
      }
    }
    if (!terminated)
      throw StructureError("conv '" + conv->id + "' has no downstream consumer");
    map.emplace_back(conv->id, std::move(deps));
  }
  return map;
}

ModelGraph apply_plan(const ModelGraph& original, const PrunePlan& plan, WeightPolicy policy) {
  validate_plan_against(original, plan);
  auto shapes = infer_shapes(original, 1);

  ModelGraph out;
  out.input_shape = original.input_shape;
  out.num_classes = original.num_classes;

  // Output-channel removals of the nearest upstream conv, live until the
  // next conv or the flatten boundary consumes them.
  std::vector<int> pending;
  std::vector<std::int64_t> pending_dense_rows;

  for (std::size_t i = 0; i < original.layers.size(); ++i) {
    const auto& layer = original.layers[i];
    if (const auto* c = std::get_if<Conv2D>(&layer)) {
      Conv2D nc = *c;
      if (!pending.empty()) {
        auto keep_in = keep_indices(c->in_channels, pending);
        nc.weights = slice_axis(nc.weights, 2, keep_in);
        nc.in_channels = static_cast<int>(keep_in.size());
      }
      const std::vector<int>* rem = removals_for(plan, c->id);
      if (rem && !rem->empty()) {
        auto keep_out = keep_indices(c->out_channels, *rem);
        nc.weights = slice_axis(nc.weights, 3, keep_out);
        nc.bias = slice_axis(nc.bias, 0, keep_out);
        nc.out_channels = static_cast<int>(keep_out.size());
        pending = *rem;
      } else {
        pending.clear();
      }
      out.layers.emplace_back(std::move(nc));
    } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
      BatchNorm nb = *b;
      if (!pending.empty()) {
        auto keep = keep_indices(b->channels, pending);
        nb.gamma = slice_axis(nb.gamma, 0, keep);
        nb.beta = slice_axis(nb.beta, 0, keep);
        nb.moving_mean = slice_axis(nb.moving_mean, 0, keep);
        nb.moving_var = slice_axis(nb.moving_var, 0, keep);
        nb.channels = static_cast<int>(keep.size());
      }
      out.layers.emplace_back(std::move(nb));
    } else if (std::holds_alternative<Flatten>(layer)) {
      if (!pending.empty()) {
        // Dense rows are laid out ((h*W)+w)*C + c against the pre-prune
        // channel count C and the post-pool spatial dims of this boundary.
        const auto& s = shapes[i - 1];  // rank-4 input shape of the Flatten
        const std::int64_t height = s[1], width = s[2], channels = s[3];
        for (std::int64_t h = 0; h < height; ++h)
          for (std::int64_t w = 0; w < width; ++w)
            for (int c : pending)
              pending_dense_rows.push_back((h * width + w) * channels + c);
        std::sort(pending_dense_rows.begin(), pending_dense_rows.end());
        pending.clear();
      }
      out.layers.emplace_back(layer);
    } else if (const auto* d = std::get_if<Dense>(&layer)) {
      Dense nd = *d;
      if (!pending_dense_rows.empty()) {
        std::vector<int> rows(pending_dense_rows.begin(), pending_dense_rows.end());
        auto keep = keep_indices(d->in_features, rows);
        nd.weights = slice_axis(nd.weights, 0, keep);
        nd.in_features = static_cast<int>(keep.size());
        pending_dense_rows.clear();
      }
      out.layers.emplace_back(std::move(nd));
    } else {
      out.layers.emplace_back(layer);
    }
  }

  if (policy.kind == WeightPolicy::Kind::Reinit) init_weights(out, policy.seed);
  validate(out);
  return out;
}

double check_equivalence(const ModelGraph& a, const ModelGraph& b, int n_inputs,
                         std::uint64_t seed) {
  if (a.input_shape != b.input_shape || a.num_classes != b.num_classes)
    throw std::invalid_argument("graphs do not accept the same input/output shapes");
  Rng rng(seed);
  double max_diff = 0.0;
  const std::int64_t n =
      a.input_shape[0] * a.input_shape[1] * a.input_shape[2];
  for (int i = 0; i < n_inputs; ++i) {
    Tensor x;
    x.shape = {1, a.input_shape[0], a.input_shape[1], a.input_shape[2]};
    x.data.resize(static_cast<std::size_t>(n));
    for (auto& v : x.data) v = static_cast<float>(rng.normal());
    Tensor la = forward(a, x, RunMode::Infer);
    Tensor lb = forward(b, x, RunMode::Infer);
    for (std::size_t k = 0; k < la.data.size(); ++k) {
      double d = std::abs(static_cast<double>(la.data[k]) - static_cast<double>(lb.data[k]));
      max_diff = std::max(max_diff, d);
    }
  }
  return max_diff;
}

}  // namespace spm
