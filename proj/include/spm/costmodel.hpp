#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spm/graph.hpp"

namespace spm {

// Fixed-tile approximation of accelerator layout padding: the two
// minor-most dimensions of every tensor round up to these multiples.
struct LayoutConfig {
  int minor_multiple = 128;        // last dimension
  int second_minor_multiple = 8;   // second-to-last dimension
  int bytes_per_element = 4;
};

struct DeviceProfile {
  double flops_per_second = 1e12;
  double bytes_per_second = 1e11;
  double fixed_overhead_seconds = 0.0;
};

void validate_layout(const LayoutConfig& layout);
void validate_profile(const DeviceProfile& profile);

// Smallest multiple of `multiple` that is >= n.
std::int64_t padded_dim(std::int64_t n, std::int64_t multiple);

struct PaddedBytes {
  std::int64_t weight_bytes = 0;
  std::int64_t activation_bytes = 0;
  std::int64_t total = 0;
};

// Bytes one tensor occupies after padding its two minor-most dimensions.
std::int64_t padded_tensor_bytes(const std::vector<std::int64_t>& shape,
                                 const LayoutConfig& layout);

// Bytes charged after padding: every weight tensor plus every layer's
// output activation at the given batch size.
PaddedBytes padded_bytes(const ModelGraph& graph, const LayoutConfig& layout, int batch);

// Multiply-accumulates counted as 2 flops; BN/ReLU/pool charged as
// elementwise passes over their outputs.
std::int64_t flop_count(const ModelGraph& graph, int batch);

// Per-layer contributions to flop_count, in graph order.
std::vector<std::pair<std::string, std::int64_t>> flop_breakdown(const ModelGraph& graph,
                                                                 int batch);

// fixed_overhead + 3*flops/flops_per_second + padded bytes/bytes_per_second.
// The factor 3 approximates forward + backward + update.
double estimate_step_time(const ModelGraph& graph, const LayoutConfig& layout,
                          const DeviceProfile& profile, int batch);

}  // namespace spm
