#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spm/costmodel.hpp"
#include "spm/dataset.hpp"
#include "spm/engine.hpp"
#include "spm/graph.hpp"
#include "spm/importance.hpp"

namespace spm {

struct ExperimentConfig {
  Preset preset = Preset::Tiny;
  std::string dataset = "synthetic";  // "cifar10" or "synthetic"
  std::string data_dir;
  std::optional<std::vector<int>> class_subset;
  double train_fraction = 1.0;
  std::vector<double> ratios;  // ascending, first entry 0.0
  std::vector<Method> methods;
  Scope scope = Scope::PerLayer;
  std::vector<bool> reload;  // subset of {true, false}
  std::vector<std::uint64_t> seeds;
  Hyperparams hyperparams;
  LayoutConfig layout;
  DeviceProfile profile;
  std::string out_dir = "out";
  // step-time measurement knobs
  int step_time_warmup = 5;
  int step_time_reps = 20;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
void validate_config(const ExperimentConfig& config);

// One row per plotted point. Baseline rows carry method "baseline".
struct RunRecord {
  std::string run_id;
  std::string method;
  std::string scope;
  double ratio = 0.0;
  bool reload = false;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::string split;  // "test", or "failed" for aborted sweep points
  double accuracy = 0.0;
  double loss = 0.0;
  std::int64_t param_count = 0;
  std::int64_t padded_weight_bytes = 0;
  std::int64_t padded_total_bytes = 0;
  double est_step_ms = 0.0;
  double measured_step_ms_median = 0.0;
};

struct StepTimeResult {
  double median_ms = 0.0;
  std::vector<double> all_ms;
  bool warmup_skipped = false;  // warmup 0 is allowed but flagged
};

// Runs `warmup` untimed full train steps, then `reps` timed ones on a fixed
// seeded batch.
StepTimeResult measure_step_time(const ModelGraph& graph, int batch, int warmup, int reps);

// The full train -> prune -> fine-tune -> measure sweep. Writes CSV, SVG
// plots, and model files under config.out_dir.
std::vector<RunRecord> run_experiment(const ExperimentConfig& config);

void emit_csv(const std::vector<RunRecord>& records, const std::string& path);
std::vector<RunRecord> parse_csv(const std::string& path);

// Line chart of `field` vs ratio, one polyline per (method, reload) series.
void emit_svg(const std::vector<RunRecord>& records, const std::string& path,
              const std::string& field);

extern const char* const kCsvHeader;

}  // namespace spm
