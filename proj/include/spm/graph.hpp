#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "spm/tensor.hpp"

namespace spm {

struct Conv2D {
  std::string id;
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;        // SAME padding always
  Tensor weights;        // [kh, kw, in, out]
  Tensor bias;           // [out]
};

struct BatchNorm {
  std::string id;
  int channels = 0;
  Tensor gamma, beta, moving_mean, moving_var;  // each [C]
  float eps = 1e-5f;
};

struct ReLU {
  std::string id;
};

struct MaxPool {
  std::string id;
  int pool = 2;
  int stride = 2;
};

struct Flatten {
  std::string id;
};

struct Dense {
  std::string id;
  int in_features = 0;
  int out_features = 0;
  Tensor weights;  // [in, out]
  Tensor bias;     // [out]
};

using LayerSpec = std::variant<Conv2D, BatchNorm, ReLU, MaxPool, Flatten, Dense>;

const std::string& layer_id(const LayerSpec& layer);
const char* layer_kind(const LayerSpec& layer);

// Pure chain of layers; the single source of truth for structure and weights.
struct ModelGraph {
  std::vector<LayerSpec> layers;
  std::array<std::int64_t, 3> input_shape = {0, 0, 0};  // H, W, C
  int num_classes = 0;
};

enum class Preset { Imagenet, Cifar, Tiny };

Preset preset_from_string(const std::string& name);
const char* preset_name(Preset p);

ModelGraph build_preset(Preset preset, int num_classes, std::uint64_t seed);

// NHWC output shape after each layer for the given batch size.
std::vector<std::vector<std::int64_t>> infer_shapes(const ModelGraph& graph, int batch);

std::int64_t param_count(const ModelGraph& graph);

// Checks all ModelGraph invariants (shape chain, conv->bn pairing, unique
// ids, weight shapes, finite values). Throws StructureError/ShapeError.
void validate(const ModelGraph& graph);

// Hash of the structure only (kinds, ids, dimensions); weights excluded.
std::uint64_t structure_fingerprint(const ModelGraph& graph);

// He-uniform conv weights, Glorot-uniform dense weights, zero biases,
// BN gamma=1 beta=0 moving_mean=0 moving_var=1. Deterministic per seed.
void init_weights(ModelGraph& graph, std::uint64_t seed);

}  // namespace spm
