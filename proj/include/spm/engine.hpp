#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "spm/graph.hpp"
#include "spm/tensor.hpp"

namespace spm {

enum class RunMode { Train, Infer };
enum class Precision { F32, F64 };

Precision precision_from_string(const std::string& s);
const char* precision_name(Precision p);

struct Hyperparams {
  int batch_size = 128;
  int max_epochs = 100;
  float learning_rate = 0.01f;
  float momentum = 0.9f;
  float bn_stat_momentum = 0.9f;
  std::uint64_t seed = 0;
  Precision precision = Precision::F32;
};

void validate_hyperparams(const Hyperparams& hp);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double epoch_wall_seconds = 0.0;
  std::vector<double> per_step_wall_seconds;
};

using TrainLog = std::vector<EpochRecord>;

struct Dataset {
  Tensor images;            // [N, H, W, C]
  std::vector<int> labels;  // values in [0, num_classes)

  std::int64_t size() const { return images.shape.empty() ? 0 : images.shape[0]; }
};

// Inference-mode calls leave the graph untouched; the mutable overload in
// Train mode writes the updated BN moving statistics back.
Tensor forward(const ModelGraph& graph, const Tensor& inputs, RunMode mode);
Tensor forward(ModelGraph& graph, const Tensor& inputs, RunMode mode);

struct GradResult {
  double loss = 0.0;
  // One entry per trainable tensor, named "<layer id>.<tensor>", graph order.
  std::vector<std::pair<std::string, Tensor>> grads;
};

// Softmax cross-entropy loss and reverse-mode gradients for every trainable
// tensor (conv/dense weights+bias, BN gamma/beta).
GradResult loss_and_grads(const ModelGraph& graph, const Tensor& inputs,
                          const std::vector<int>& labels);

// v <- momentum*v - lr*g ; w <- w + v
void sgd_momentum_step(Tensor& weights, const Tensor& grads, Tensor& velocity, float lr,
                       float momentum);

struct TrainResult {
  ModelGraph model;
  TrainLog log;
};

// Seeded-shuffled mini-batch SGD with momentum, single-threaded with fixed
// reduction order: same inputs + seed + precision give bitwise-equal weights.
TrainResult train(const ModelGraph& graph, const Dataset& train_set, const Dataset& val_set,
                  const Hyperparams& hp);

// Fraction of argmax(logits) == label, inference mode.
double evaluate(const ModelGraph& graph, const Dataset& dataset);

// Compares every analytic gradient entry against central finite differences
// at the given step, in f64. Returns the worst relative error, where
// rel = |analytic - fd| / max(|analytic|, |fd|, 1).
double grad_check(const ModelGraph& graph, const Dataset& batch, double step,
                  Precision precision = Precision::F64);

// One reusable full training step (forward + backward + SGD update) on a
// fixed batch; the unit timed by the step-time measurements.
class TrainStepper {
 public:
  TrainStepper(const ModelGraph& graph, const Tensor& inputs, const std::vector<int>& labels,
               const Hyperparams& hp);
  ~TrainStepper();
  TrainStepper(TrainStepper&&) noexcept;
  void step();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace spm
