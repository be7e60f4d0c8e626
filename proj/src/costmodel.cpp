#include "spm/costmodel.hpp"

#include <stdexcept>

namespace spm {

namespace {

std::int64_t padded_elements(const std::vector<std::int64_t>& shape, const LayoutConfig& layout) {
  if (shape.empty()) return 0;
  std::int64_t n = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    std::int64_t d = shape[i];
    if (i + 1 == shape.size()) {
      d = padded_dim(d, layout.minor_multiple);
    } else if (i + 2 == shape.size()) {
      d = padded_dim(d, layout.second_minor_multiple);
    }
    n *= d;
  }
  return n;
}

}  // namespace

void validate_layout(const LayoutConfig& layout) {
  if (layout.minor_multiple < 1 || layout.second_minor_multiple < 1 ||
      layout.bytes_per_element < 1)
    throw std::invalid_argument("layout multiples and element size must be >= 1");
}

void validate_profile(const DeviceProfile& profile) {
  if (!(profile.flops_per_second > 0) || !(profile.bytes_per_second > 0) ||
      !(profile.fixed_overhead_seconds >= 0))
    throw std::invalid_argument("device profile throughputs must be positive");
}

std::int64_t padded_dim(std::int64_t n, std::int64_t multiple) {
  if (n < 1) throw std::invalid_argument("padded_dim requires n >= 1");
  if (multiple < 1) throw std::invalid_argument("padded_dim requires multiple >= 1");
  return (n + multiple - 1) / multiple * multiple;
}

std::int64_t padded_tensor_bytes(const std::vector<std::int64_t>& shape,
                                 const LayoutConfig& layout) {
  validate_layout(layout);
  return padded_elements(shape, layout) * layout.bytes_per_element;
}

PaddedBytes padded_bytes(const ModelGraph& graph, const LayoutConfig& layout, int batch) {
  validate_layout(layout);
  PaddedBytes out;
  for (const auto& layer : graph.layers) {
    if (const auto* c = std::get_if<Conv2D>(&layer)) {
      out.weight_bytes += padded_elements(c->weights.shape, layout);
      out.weight_bytes += padded_elements(c->bias.shape, layout);
    } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
      out.weight_bytes += padded_elements(b->gamma.shape, layout) * 4;
    } else if (const auto* d = std::get_if<Dense>(&layer)) {
      out.weight_bytes += padded_elements(d->weights.shape, layout);
      out.weight_bytes += padded_elements(d->bias.shape, layout);
    }
  }
  out.weight_bytes *= layout.bytes_per_element;
  for (const auto& shape : infer_shapes(graph, batch))
    out.activation_bytes += padded_elements(shape, layout) * layout.bytes_per_element;
  out.total = out.weight_bytes + out.activation_bytes;
  return out;
}

std::vector<std::pair<std::string, std::int64_t>> flop_breakdown(const ModelGraph& graph,
                                                                 int batch) {
  std::vector<std::pair<std::string, std::int64_t>> out;
  auto shapes = infer_shapes(graph, batch);
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const std::int64_t out_elems = shape_product(shapes[i]);
    std::int64_t flops = 0;
    if (const auto* c = std::get_if<Conv2D>(&graph.layers[i])) {
      flops = 2LL * c->kernel_h * c->kernel_w * c->in_channels * out_elems;
    } else if (std::get_if<BatchNorm>(&graph.layers[i])) {
      flops = 2 * out_elems;  // scale + shift
    } else if (const auto* d = std::get_if<Dense>(&graph.layers[i])) {
      flops = 2LL * d->in_features * d->out_features * batch;
    } else if (std::get_if<ReLU>(&graph.layers[i]) || std::get_if<MaxPool>(&graph.layers[i])) {
      flops = out_elems;
    }
    out.emplace_back(layer_id(graph.layers[i]), flops);
  }
  return out;
}

std::int64_t flop_count(const ModelGraph& graph, int batch) {
  std::int64_t flops = 0;
  for (const auto& [id, f] : flop_breakdown(graph, batch)) flops += f;
  return flops;
}

double estimate_step_time(const ModelGraph& graph, const LayoutConfig& layout,
                          const DeviceProfile& profile, int batch) {
  validate_profile(profile);
  const auto bytes = padded_bytes(graph, layout, batch);
  const double flops = static_cast<double>(flop_count(graph, batch));
  return profile.fixed_overhead_seconds + 3.0 * flops / profile.flops_per_second +
         static_cast<double>(bytes.total) / profile.bytes_per_second;
}

}  // namespace spm
