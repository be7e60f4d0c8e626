#include "spm/graph.hpp"

#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "spm/errors.hpp"
#include "spm/rng.hpp"

namespace spm {

namespace {

struct IdVisitor {
  template <class L>
  const std::string& operator()(const L& l) const {
    return l.id;
  }
};

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

void append_conv_block(ModelGraph& g, int& conv_idx, int in_ch, int out_ch) {
  ++conv_idx;
  std::string n = std::to_string(conv_idx);
  Conv2D conv;
  conv.id = "conv" + n;
  conv.in_channels = in_ch;
  conv.out_channels = out_ch;
  conv.weights = Tensor::zeros({3, 3, in_ch, out_ch});
  conv.bias = Tensor::zeros({out_ch});
  g.layers.emplace_back(std::move(conv));

  BatchNorm bn;
  bn.id = "bn" + n;
  bn.channels = out_ch;
  bn.gamma = Tensor::full({out_ch}, 1.0f);
  bn.beta = Tensor::zeros({out_ch});
  bn.moving_mean = Tensor::zeros({out_ch});
  bn.moving_var = Tensor::full({out_ch}, 1.0f);
  g.layers.emplace_back(std::move(bn));

  g.layers.emplace_back(ReLU{"relu" + n});
}

void append_pool(ModelGraph& g, int idx) {
  g.layers.emplace_back(MaxPool{"pool" + std::to_string(idx)});
}

void append_dense(ModelGraph& g, const std::string& id, int in, int out) {
  Dense d;
  d.id = id;
  d.in_features = in;
  d.out_features = out;
  d.weights = Tensor::zeros({in, out});
  d.bias = Tensor::zeros({out});
  g.layers.emplace_back(std::move(d));
}

// VGG-16 conv stack: channel plan with pools after blocks of 2,2,3,3,3.
void append_vgg16_stack(ModelGraph& g) {
  const int plan[5][3] = {{64, 64, 0}, {128, 128, 0}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
  const int block_len[5] = {2, 2, 3, 3, 3};
  int conv_idx = 0;
  int in_ch = 3;
  for (int b = 0; b < 5; ++b) {
    for (int i = 0; i < block_len[b]; ++i) {
      append_conv_block(g, conv_idx, in_ch, plan[b][i]);
      in_ch = plan[b][i];
    }
    append_pool(g, b + 1);
  }
}

}  // namespace

const std::string& layer_id(const LayerSpec& layer) { return std::visit(IdVisitor{}, layer); }

const char* layer_kind(const LayerSpec& layer) {
  switch (layer.index()) {
    case 0: return "Conv2D";
    case 1: return "BatchNorm";
    case 2: return "ReLU";
    case 3: return "MaxPool";
    case 4: return "Flatten";
    default: return "Dense";
  }
}

Preset preset_from_string(const std::string& name) {
  if (name == "imagenet") return Preset::Imagenet;
  if (name == "cifar") return Preset::Cifar;
  if (name == "tiny") return Preset::Tiny;
  throw std::invalid_argument("unknown preset: " + name);
}

const char* preset_name(Preset p) {
  switch (p) {
    case Preset::Imagenet: return "imagenet";
    case Preset::Cifar: return "cifar";
    default: return "tiny";
  }
}

ModelGraph build_preset(Preset preset, int num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  ModelGraph g;
  g.num_classes = num_classes;
  switch (preset) {
    case Preset::Imagenet: {
      g.input_shape = {224, 224, 3};
      append_vgg16_stack(g);
      g.layers.emplace_back(Flatten{"flatten"});
      append_dense(g, "fc1", 7 * 7 * 512, 4096);
      g.layers.emplace_back(ReLU{"relu_fc1"});
      append_dense(g, "fc2", 4096, 4096);
      g.layers.emplace_back(ReLU{"relu_fc2"});
      append_dense(g, "fc3", 4096, num_classes);
      break;
    }
    case Preset::Cifar: {
      g.input_shape = {32, 32, 3};
      append_vgg16_stack(g);
      g.layers.emplace_back(Flatten{"flatten"});
      append_dense(g, "fc1", 512, num_classes);
      break;
    }
    case Preset::Tiny: {
      g.input_shape = {32, 32, 3};
      int conv_idx = 0;
      const int chans[3] = {16, 32, 64};
      int in_ch = 3;
      for (int i = 0; i < 3; ++i) {
        append_conv_block(g, conv_idx, in_ch, chans[i]);
        append_pool(g, i + 1);
        in_ch = chans[i];
      }
      g.layers.emplace_back(Flatten{"flatten"});
      append_dense(g, "fc1", 4 * 4 * 64, num_classes);
      break;
    }
  }
  init_weights(g, seed);
  validate(g);
  return g;
}

std::vector<std::vector<std::int64_t>> infer_shapes(const ModelGraph& graph, int batch) {
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  std::vector<std::vector<std::int64_t>> out;
  out.reserve(graph.layers.size());
  // Current activation shape; rank 4 [N,H,W,C] until Flatten, then [N,F].
  std::vector<std::int64_t> cur = {batch, graph.input_shape[0], graph.input_shape[1], graph.input_shape[2]};
  std::string prev_id = "<input>";
  for (const auto& layer : graph.layers) {
    const std::string& id = layer_id(layer);
    if (const auto* c = std::get_if<Conv2D>(&layer)) {
      if (cur.size() != 4)
        throw ShapeError("Conv2D '" + id + "' needs a rank-4 input (after '" + prev_id + "')");
      if (cur[3] != c->in_channels)
        throw ShapeError("channel mismatch between '" + prev_id + "' (" + std::to_string(cur[3]) +
                         ") and '" + id + "' (expects " + std::to_string(c->in_channels) + ")");
      cur = {cur[0], ceil_div(cur[1], c->stride), ceil_div(cur[2], c->stride), c->out_channels};
    } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
      if (cur.size() != 4 || cur[3] != b->channels)
        throw ShapeError("channel mismatch between '" + prev_id + "' and '" + id + "'");
    } else if (std::get_if<ReLU>(&layer)) {
      // shape preserved
    } else if (const auto* p = std::get_if<MaxPool>(&layer)) {
      if (cur.size() != 4) throw ShapeError("MaxPool '" + id + "' needs a rank-4 input");
      std::int64_t h = (cur[1] - p->pool) / p->stride + 1;
      std::int64_t w = (cur[2] - p->pool) / p->stride + 1;
      if (h < 1 || w < 1) throw ShapeError("MaxPool '" + id + "' output would be empty");
      cur = {cur[0], h, w, cur[3]};
    } else if (std::get_if<Flatten>(&layer)) {
      if (cur.size() != 4) throw ShapeError("Flatten '" + id + "' needs a rank-4 input");
      cur = {cur[0], cur[1] * cur[2] * cur[3]};
    } else if (const auto* d = std::get_if<Dense>(&layer)) {
      if (cur.size() != 2)
        throw ShapeError("Dense '" + id + "' needs a flattened input (after '" + prev_id + "')");
      if (cur[1] != d->in_features)
        throw ShapeError("feature mismatch between '" + prev_id + "' (" + std::to_string(cur[1]) +
                         ") and '" + id + "' (expects " + std::to_string(d->in_features) + ")");
      cur = {cur[0], d->out_features};
    }
    out.push_back(cur);
    prev_id = id;
  }
  return out;
}

std::int64_t param_count(const ModelGraph& graph) {
  std::int64_t total = 0;
  for (const auto& layer : graph.layers) {
    if (const auto* c = std::get_if<Conv2D>(&layer)) {
      total += static_cast<std::int64_t>(c->kernel_h) * c->kernel_w * c->in_channels * c->out_channels +
               c->out_channels;
    } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
      total += 4LL * b->channels;
    } else if (const auto* d = std::get_if<Dense>(&layer)) {
      total += static_cast<std::int64_t>(d->in_features) * d->out_features + d->out_features;
    }
  }
  return total;
}

void validate(const ModelGraph& graph) {
  std::set<std::string> ids;
  for (const auto& layer : graph.layers) {
    if (!ids.insert(layer_id(layer)).second)
      throw StructureError("duplicate layer id '" + layer_id(layer) + "'");
  }
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    if (const auto* c = std::get_if<Conv2D>(&graph.layers[i])) {
      std::vector<std::int64_t> want = {c->kernel_h, c->kernel_w, c->in_channels, c->out_channels};
      if (c->weights.shape != want || c->bias.shape != std::vector<std::int64_t>{c->out_channels})
        throw StructureError("conv '" + c->id + "' weight shape " + c->weights.shape_str() +
                             " disagrees with declared channels");
      if (!c->weights.all_finite() || !c->bias.all_finite())
        throw StructureError("conv '" + c->id + "' has non-finite weights");
      bool followed_by_bn = i + 1 < graph.layers.size() &&
                            std::holds_alternative<BatchNorm>(graph.layers[i + 1]);
      if (!followed_by_bn)
        throw StructureError("conv '" + c->id + "' is not immediately followed by a BatchNorm");
    } else if (const auto* b = std::get_if<BatchNorm>(&graph.layers[i])) {
      std::vector<std::int64_t> want = {b->channels};
      if (b->gamma.shape != want || b->beta.shape != want || b->moving_mean.shape != want ||
          b->moving_var.shape != want)
        throw StructureError("batchnorm '" + b->id + "' vector shapes disagree with channel count");
      if (b->eps <= 0.0f) throw StructureError("batchnorm '" + b->id + "' needs eps > 0");
      for (float v : b->moving_var.data)
        if (!(v >= 0.0f)) throw StructureError("batchnorm '" + b->id + "' has negative moving_var");
      if (!b->gamma.all_finite() || !b->beta.all_finite() || !b->moving_mean.all_finite())
        throw StructureError("batchnorm '" + b->id + "' has non-finite parameters");
    } else if (const auto* d = std::get_if<Dense>(&graph.layers[i])) {
      std::vector<std::int64_t> want = {d->in_features, d->out_features};
      if (d->weights.shape != want || d->bias.shape != std::vector<std::int64_t>{d->out_features})
        throw StructureError("dense '" + d->id + "' weight shape disagrees with declared features");
      if (!d->weights.all_finite() || !d->bias.all_finite())
        throw StructureError("dense '" + d->id + "' has non-finite weights");
    }
  }
  if (graph.layers.empty() || !std::holds_alternative<Dense>(graph.layers.back()))
    throw StructureError("graph must end with a Dense classifier");
  if (std::get<Dense>(graph.layers.back()).out_features != graph.num_classes)
    throw StructureError("final Dense out_features must equal num_classes");
  infer_shapes(graph, 1);
}

std::uint64_t structure_fingerprint(const ModelGraph& graph) {
  // FNV-1a over the structural description.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix_byte = [&h](unsigned char b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  auto mix_int = [&](std::int64_t v) {
    for (int i = 0; i < 8; ++i) mix_byte(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
  };
  auto mix_str = [&](const std::string& s) {
    mix_int(static_cast<std::int64_t>(s.size()));
    for (char c : s) mix_byte(static_cast<unsigned char>(c));
  };
  for (auto d : graph.input_shape) mix_int(d);
  mix_int(graph.num_classes);
  for (const auto& layer : graph.layers) {
    mix_str(layer_kind(layer));
    mix_str(layer_id(layer));
    if (const auto* c = std::get_if<Conv2D>(&layer)) {
      mix_int(c->in_channels);
      mix_int(c->out_channels);
      mix_int(c->kernel_h);
      mix_int(c->kernel_w);
      mix_int(c->stride);
    } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
      mix_int(b->channels);
    } else if (const auto* p = std::get_if<MaxPool>(&layer)) {
      mix_int(p->pool);
      mix_int(p->stride);
    } else if (const auto* d = std::get_if<Dense>(&layer)) {
      mix_int(d->in_features);
      mix_int(d->out_features);
    }
  }
  return h;
}

void init_weights(ModelGraph& graph, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& layer : graph.layers) {
    if (auto* c = std::get_if<Conv2D>(&layer)) {
      double fan_in = static_cast<double>(c->kernel_h) * c->kernel_w * c->in_channels;
      double limit = std::sqrt(6.0 / fan_in);  // He-uniform
      for (auto& w : c->weights.data) w = static_cast<float>(rng.uniform(-limit, limit));
      for (auto& b : c->bias.data) b = 0.0f;
    } else if (auto* b = std::get_if<BatchNorm>(&layer)) {
      for (auto& v : b->gamma.data) v = 1.0f;
      for (auto& v : b->beta.data) v = 0.0f;
      for (auto& v : b->moving_mean.data) v = 0.0f;
      for (auto& v : b->moving_var.data) v = 1.0f;
    } else if (auto* d = std::get_if<Dense>(&layer)) {
      double limit = std::sqrt(6.0 / (static_cast<double>(d->in_features) + d->out_features));
      for (auto& w : d->weights.data) w = static_cast<float>(rng.uniform(-limit, limit));
      for (auto& v : d->bias.data) v = 0.0f;
    }
  }
}

}  // namespace spm
