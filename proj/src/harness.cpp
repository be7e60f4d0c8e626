#include "spm/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <stdexcept>

#include "spm/errors.hpp"
#include "spm/rng.hpp"
#include "spm/serialize.hpp"
#include "spm/surgery.hpp"

namespace spm {

namespace {

using json = nlohmann::json;

// Seed for the synthetic dataset contents; run seeds control training only,
// so every sweep point sees the same data.
constexpr std::uint64_t kSyntheticDataSeed = 1000003;

std::string fmt(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  return os.str();
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (j.contains(key) && !j.at(key).is_null()) return j.at(key).get<T>();
  return fallback;
}

}  // namespace

const char* const kCsvHeader =
    "run_id,method,scope,ratio,reload,seed,epoch,split,accuracy,loss,param_count,"
    "padded_weight_bytes,padded_total_bytes,est_step_ms,measured_step_ms_median";

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config JSON parse failure: ") + e.what());
  }
  ExperimentConfig c;
  try {
    c.preset = preset_from_string(get_or<std::string>(j, "preset", "tiny"));
    c.dataset = get_or<std::string>(j, "dataset", "synthetic");
    c.data_dir = get_or<std::string>(j, "data_dir", "");
    if (j.contains("class_subset") && !j.at("class_subset").is_null())
      c.class_subset = j.at("class_subset").get<std::vector<int>>();
    c.train_fraction = get_or<double>(j, "train_fraction", 1.0);
    c.ratios = j.at("ratios").get<std::vector<double>>();
    for (const auto& m : j.at("methods")) c.methods.push_back(method_from_string(m.get<std::string>()));
    c.scope = scope_from_string(get_or<std::string>(j, "scope", "per_layer"));
    c.reload = get_or<std::vector<bool>>(j, "reload", {true});
    for (const auto& s : j.at("seeds")) c.seeds.push_back(s.get<std::uint64_t>());
    if (j.contains("hyperparams")) {
      const json& h = j.at("hyperparams");
      c.hyperparams.batch_size = get_or<int>(h, "batch_size", 128);
      c.hyperparams.max_epochs = get_or<int>(h, "max_epochs", 100);
      c.hyperparams.learning_rate = get_or<float>(h, "learning_rate", 0.01f);
      c.hyperparams.momentum = get_or<float>(h, "momentum", 0.9f);
      c.hyperparams.bn_stat_momentum = get_or<float>(h, "bn_stat_momentum", 0.9f);
      c.hyperparams.precision = precision_from_string(get_or<std::string>(h, "precision", "f32"));
    }
    if (j.contains("layout")) {
      const json& l = j.at("layout");
      c.layout.minor_multiple = get_or<int>(l, "minor_multiple", 128);
      c.layout.second_minor_multiple = get_or<int>(l, "second_minor_multiple", 8);
      c.layout.bytes_per_element = get_or<int>(l, "bytes_per_element", 4);
    }
    if (j.contains("profile")) {
      const json& p = j.at("profile");
      c.profile.flops_per_second = get_or<double>(p, "flops_per_second", 1e12);
      c.profile.bytes_per_second = get_or<double>(p, "bytes_per_second", 1e11);
      c.profile.fixed_overhead_seconds = get_or<double>(p, "fixed_overhead_seconds", 0.0);
    }
    c.out_dir = get_or<std::string>(j, "out_dir", "out");
    c.step_time_warmup = get_or<int>(j, "step_time_warmup", 5);
    c.step_time_reps = get_or<int>(j, "step_time_reps", 20);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  validate_config(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

void validate_config(const ExperimentConfig& c) {
  if (c.ratios.empty() || c.ratios.front() != 0.0)
    throw ConfigError("ratios must be non-empty and start with the 0.0 baseline");
  if (!std::is_sorted(c.ratios.begin(), c.ratios.end()))
    throw ConfigError("ratios must be sorted ascending");
  for (double r : c.ratios)
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("ratios must lie in [0, 1)");
  if (c.methods.empty()) throw ConfigError("methods must be non-empty");
  if (c.seeds.empty()) throw ConfigError("seeds must be non-empty");
  if (c.reload.empty()) throw ConfigError("reload must be non-empty");
  if (c.dataset != "cifar10" && c.dataset != "synthetic")
    throw ConfigError("dataset must be 'cifar10' or 'synthetic'");
  if (!(c.train_fraction > 0.0 && c.train_fraction <= 1.0))
    throw ConfigError("train_fraction must be in (0, 1]");
  if (c.step_time_reps < 5) throw ConfigError("step_time_reps must be >= 5");
  try {
    validate_hyperparams(c.hyperparams);
    validate_layout(c.layout);
    validate_profile(c.profile);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

StepTimeResult measure_step_time(const ModelGraph& graph, int batch, int warmup, int reps) {
  if (reps < 5) throw std::invalid_argument("measure_step_time requires reps >= 5");
  if (warmup < 0) throw std::invalid_argument("warmup must be non-negative");

  Rng rng(42);
  Tensor inputs;
  inputs.shape = {batch, graph.input_shape[0], graph.input_shape[1], graph.input_shape[2]};
  inputs.data.resize(static_cast<std::size_t>(shape_product(inputs.shape)));
  for (auto& v : inputs.data) v = static_cast<float>(rng.normal());
  std::vector<int> labels(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) labels[static_cast<std::size_t>(i)] = i % graph.num_classes;

  TrainStepper stepper(graph, inputs, labels, Hyperparams{});
  for (int i = 0; i < warmup; ++i) stepper.step();

  StepTimeResult res;
  res.warmup_skipped = warmup == 0;
  res.all_ms.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    stepper.step();
    const auto t1 = std::chrono::steady_clock::now();
    res.all_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::vector<double> sorted = res.all_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  res.median_ms =
      sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  return res;
}

namespace {

struct LoadedData {
  Dataset train;
  Dataset test;
  int num_classes = 0;
};

LoadedData load_experiment_data(const ExperimentConfig& c) {
  LoadedData d;
  if (c.dataset == "cifar10") {
    Cifar10 raw = load_cifar10(c.data_dir);
    d.train = std::move(raw.train);
    d.test = std::move(raw.test);
    if (c.class_subset) {
      d.train = select_classes(d.train, *c.class_subset);
      d.test = select_classes(d.test, *c.class_subset);
    }
  } else {
    const int classes = c.class_subset ? static_cast<int>(c.class_subset->size()) : 10;
    // One pool split into train/test: the class means depend on the seed, so
    // separately seeded sets would be different tasks.
    Dataset pool = synth_dataset(kSyntheticDataSeed, 6000, classes, {32, 32, 3});
    d.train = take(pool, 5000);
    d.test = drop(pool, 5000);
  }
  if (c.train_fraction < 1.0) {
    d.train = take(d.train, static_cast<std::int64_t>(std::llround(c.train_fraction * d.train.size())));
    d.test = take(d.test, static_cast<std::int64_t>(std::llround(c.train_fraction * d.test.size())));
  }
  if (d.train.size() == 0 || d.test.size() == 0)
    throw DatasetError("experiment dataset is empty after subsetting");
  int max_label = 0;
  for (int l : d.train.labels) max_label = std::max(max_label, l);
  d.num_classes = std::max(max_label + 1, 2);
  return d;
}

RunRecord make_record(const ExperimentConfig& c, const ModelGraph& model, const TrainLog& log,
                      double test_accuracy, const std::string& run_id, const std::string& method,
                      double ratio, bool reload, std::uint64_t seed) {
  RunRecord r;
  r.run_id = run_id;
  r.method = method;
  r.scope = scope_name(c.scope);
  r.ratio = ratio;
  r.reload = reload;
  r.seed = seed;
  r.epoch = log.empty() ? 0 : log.back().epoch;
  r.split = "test";
  r.accuracy = test_accuracy;
  r.loss = log.empty() ? 0.0 : log.back().train_loss;
  r.param_count = param_count(model);
  const auto bytes = padded_bytes(model, c.layout, c.hyperparams.batch_size);
  r.padded_weight_bytes = bytes.weight_bytes;
  r.padded_total_bytes = bytes.total;
  r.est_step_ms =
      estimate_step_time(model, c.layout, c.profile, c.hyperparams.batch_size) * 1e3;
  // Step-time measurement runs serially, after training, on a quiet slice.
  r.measured_step_ms_median =
      measure_step_time(model, c.hyperparams.batch_size, c.step_time_warmup, c.step_time_reps)
          .median_ms;
  return r;
}

}  // namespace

std::vector<RunRecord> run_experiment(const ExperimentConfig& config) {
  validate_config(config);
  std::filesystem::create_directories(config.out_dir);
  LoadedData data = load_experiment_data(config);

  std::vector<RunRecord> records;
  for (std::uint64_t seed : config.seeds) {
    Hyperparams hp = config.hyperparams;
    hp.seed = seed;

    ModelGraph initial = build_preset(config.preset, data.num_classes, seed);
    TrainResult base = train(initial, data.train, data.test, hp);
    const double base_acc = evaluate(base.model, data.test);
    const std::string base_id = "s" + std::to_string(seed) + "_baseline";
    save_model(base.model, config.out_dir + "/" + base_id + ".spmg");
    records.push_back(
        make_record(config, base.model, base.log, base_acc, base_id, "baseline", 0.0, false, seed));

    for (double ratio : config.ratios) {
      if (ratio == 0.0) continue;
      for (Method method : config.methods) {
        for (bool reload : config.reload) {
          std::ostringstream id;
          id << "s" << seed << "_r" << ratio << "_" << method_name(method) << "_"
             << (reload ? "reload" : "reinit");
          try {
            ImportanceReport report = score(base.model, method);
            PrunePlan plan = make_plan(report, ratio, config.scope);
            if (plan.shortfall > 0)
              std::cerr << "[warn] " << id.str() << ": survivor constraint dropped "
                        << plan.shortfall << " removals\n";
            WeightPolicy policy =
                reload ? WeightPolicy::reload() : WeightPolicy::reinit(seed);
            ModelGraph pruned = apply_plan(base.model, plan, policy);
            TrainResult tuned = train(pruned, data.train, data.test, hp);
            const double acc = evaluate(tuned.model, data.test);
            save_model(tuned.model, config.out_dir + "/" + id.str() + ".spmg");
            records.push_back(make_record(config, tuned.model, tuned.log, acc, id.str(),
                                          method_name(method), ratio, reload, seed));
          } catch (const std::exception& e) {
            std::cerr << "[warn] sweep point " << id.str() << " failed: " << e.what() << "\n";
            RunRecord r;
            r.run_id = id.str();
            r.method = method_name(method);
            r.scope = scope_name(config.scope);
            r.ratio = ratio;
            r.reload = reload;
            r.seed = seed;
            r.split = "failed";
            records.push_back(r);
          }
        }
      }
    }
  }

  emit_csv(records, config.out_dir + "/results.csv");
  emit_svg(records, config.out_dir + "/accuracy.svg", "accuracy");
  emit_svg(records, config.out_dir + "/memory.svg", "padded_weight_bytes");
  emit_svg(records, config.out_dir + "/step_time.svg", "measured_step_ms_median");
  return records;
}

void emit_csv(const std::vector<RunRecord>& records, const std::string& path) {
  if (records.empty()) throw std::invalid_argument("no records to write");
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << kCsvHeader << "\n";
  for (const auto& r : records) {
    f << r.run_id << ',' << r.method << ',' << r.scope << ',' << fmt(r.ratio) << ','
      << (r.reload ? "true" : "false") << ',' << r.seed << ',' << r.epoch << ',' << r.split << ','
      << fmt(r.accuracy) << ',' << fmt(r.loss) << ',' << r.param_count << ','
      << r.padded_weight_bytes << ',' << r.padded_total_bytes << ',' << fmt(r.est_step_ms) << ','
      << fmt(r.measured_step_ms_median) << "\n";
  }
}

std::vector<RunRecord> parse_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line) || line != kCsvHeader)
    throw std::runtime_error("unexpected CSV header in '" + path + "'");
  std::vector<RunRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 15) throw std::runtime_error("bad CSV row: " + line);
    RunRecord r;
    r.run_id = cells[0];
    r.method = cells[1];
    r.scope = cells[2];
    r.ratio = std::stod(cells[3]);
    r.reload = cells[4] == "true";
    r.seed = std::stoull(cells[5]);
    r.epoch = std::stoi(cells[6]);
    r.split = cells[7];
    r.accuracy = std::stod(cells[8]);
    r.loss = std::stod(cells[9]);
    r.param_count = std::stoll(cells[10]);
    r.padded_weight_bytes = std::stoll(cells[11]);
    r.padded_total_bytes = std::stoll(cells[12]);
    r.est_step_ms = std::stod(cells[13]);
    r.measured_step_ms_median = std::stod(cells[14]);
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

double record_field(const RunRecord& r, const std::string& field) {
  if (field == "accuracy") return r.accuracy;
  if (field == "loss") return r.loss;
  if (field == "param_count") return static_cast<double>(r.param_count);
  if (field == "padded_weight_bytes") return static_cast<double>(r.padded_weight_bytes);
  if (field == "padded_total_bytes") return static_cast<double>(r.padded_total_bytes);
  if (field == "est_step_ms") return r.est_step_ms;
  if (field == "measured_step_ms_median") return r.measured_step_ms_median;
  throw std::invalid_argument("unknown plot field: " + field);
}

}  // namespace

void emit_svg(const std::vector<RunRecord>& records, const std::string& path,
              const std::string& field) {
  if (records.empty()) throw std::invalid_argument("no records to plot");

  // Seed-averaged value per (method, reload, ratio); baseline rows extend
  // every series at ratio 0.
  std::map<std::pair<std::string, bool>, std::map<double, std::pair<double, int>>> series;
  std::pair<double, int> baseline{0.0, 0};
  for (const auto& r : records) {
    if (r.split == "failed") continue;
    const double v = record_field(r, field);
    if (r.method == "baseline") {
      baseline.first += v;
      baseline.second += 1;
    } else {
      auto& acc = series[{r.method, r.reload}][r.ratio];
      acc.first += v;
      acc.second += 1;
    }
  }
  if (baseline.second > 0)
    for (auto& [key, pts] : series) pts[0.0] = baseline;

  double xmax = 0.0, ymax = 0.0;
  for (const auto& [key, pts] : series)
    for (const auto& [x, acc] : pts) {
      xmax = std::max(xmax, x);
      ymax = std::max(ymax, acc.first / acc.second);
    }
  if (xmax == 0.0) xmax = 1.0;
  if (ymax == 0.0) ymax = 1.0;

  const int W = 640, H = 480, ML = 70, MR = 20, MT = 30, MB = 50;
  auto px = [&](double x) { return ML + x / xmax * (W - ML - MR); };
  auto py = [&](double y) { return H - MB - y / ymax * (H - MT - MB); };
  const char* colors[] = {"#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"};

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\">\n";
  f << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  f << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\""
    << H - MB << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << H - MB
    << "\" stroke=\"black\"/>\n";
  f << "<text x=\"" << (W / 2) << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-size=\"14\">channel pruned ratio</text>\n";
  f << "<text x=\"16\" y=\"" << (H / 2)
    << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 16 " << (H / 2)
    << ")\">" << field << "</text>\n";

  int ci = 0, ly = MT + 10;
  for (const auto& [key, pts] : series) {
    const char* color = colors[ci % 6];
    std::ostringstream poly;
    for (const auto& [x, acc] : pts)
      poly << px(x) << ',' << py(acc.first / acc.second) << ' ';
    f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
      << poly.str() << "\"/>\n";
    f << "<text x=\"" << ML + 10 << "\" y=\"" << ly << "\" font-size=\"12\" fill=\"" << color
      << "\">" << key.first << (key.second ? " (reload)" : " (reinit)") << "</text>\n";
    ++ci;
    ly += 16;
  }
  f << "</svg>\n";
}

}  // namespace spm
