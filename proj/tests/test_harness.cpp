#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "spm/errors.hpp"
#include "spm/harness.hpp"
#include "spm/serialize.hpp"

using namespace spm;

namespace {

namespace fs = std::filesystem;

std::string tmp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t at = hay.find(needle); at != std::string::npos; at = hay.find(needle, at + 1))
    ++n;
  return n;
}

const char* kFullConfig = R"({
  "preset": "tiny",
  "dataset": "synthetic",
  "class_subset": [0, 1, 2],
  "train_fraction": 0.5,
  "ratios": [0.0, 0.25, 0.5],
  "methods": ["l1", "bn_gamma"],
  "scope": "global",
  "reload": [true, false],
  "seeds": [3, 4],
  "hyperparams": {"batch_size": 32, "max_epochs": 2, "learning_rate": 0.05,
                  "momentum": 0.8, "precision": "f64"},
  "layout": {"minor_multiple": 64, "second_minor_multiple": 4, "bytes_per_element": 2},
  "profile": {"flops_per_second": 1e11, "bytes_per_second": 1e10, "fixed_overhead_seconds": 0.001},
  "out_dir": "/tmp/spm_cfg_out",
  "step_time_warmup": 1,
  "step_time_reps": 6
})";

RunRecord sample_record(int i) {
  RunRecord r;
  r.run_id = "s1_r0." + std::to_string(i);
  r.method = i % 2 ? "l1" : "bn_gamma";
  r.scope = "per_layer";
  r.ratio = i / 3.0;  // not exactly representable
  r.reload = i % 2 == 0;
  r.seed = static_cast<std::uint64_t>(i) * 1000003;
  r.epoch = i;
  r.split = "test";
  r.accuracy = 0.1 + i * 0.17;
  r.loss = 2.302585092994046 / (i + 1);
  r.param_count = 12345 + i;
  r.padded_weight_bytes = 1 << (10 + i);
  r.padded_total_bytes = r.padded_weight_bytes * 3;
  r.est_step_ms = 0.001 * i + 1e-9;
  r.measured_step_ms_median = 7.25 + i;
  return r;
}

bool records_equal(const RunRecord& a, const RunRecord& b) {
  return a.run_id == b.run_id && a.method == b.method && a.scope == b.scope && a.ratio == b.ratio &&
         a.reload == b.reload && a.seed == b.seed && a.epoch == b.epoch && a.split == b.split &&
         a.accuracy == b.accuracy && a.loss == b.loss && a.param_count == b.param_count &&
         a.padded_weight_bytes == b.padded_weight_bytes &&
         a.padded_total_bytes == b.padded_total_bytes && a.est_step_ms == b.est_step_ms &&
         a.measured_step_ms_median == b.measured_step_ms_median;
}

}  // namespace

TEST_CASE("parse_config reads every field") {
  auto c = parse_config(kFullConfig);
  CHECK(c.preset == Preset::Tiny);
  CHECK(c.dataset == "synthetic");
  REQUIRE(c.class_subset.has_value());
  CHECK(*c.class_subset == std::vector<int>{0, 1, 2});
  CHECK(c.train_fraction == 0.5);
  CHECK(c.ratios == std::vector<double>{0.0, 0.25, 0.5});
  REQUIRE(c.methods.size() == 2);
  CHECK(c.methods[0] == Method::L1);
  CHECK(c.methods[1] == Method::BnGamma);
  CHECK(c.scope == Scope::Global);
  CHECK(c.reload == std::vector<bool>{true, false});
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(c.hyperparams.batch_size == 32);
  CHECK(c.hyperparams.max_epochs == 2);
  CHECK(c.hyperparams.learning_rate == 0.05f);
  CHECK(c.hyperparams.momentum == 0.8f);
  CHECK(c.hyperparams.precision == Precision::F64);
  CHECK(c.layout.minor_multiple == 64);
  CHECK(c.layout.second_minor_multiple == 4);
  CHECK(c.layout.bytes_per_element == 2);
  CHECK(c.profile.flops_per_second == 1e11);
  CHECK(c.profile.fixed_overhead_seconds == 0.001);
  CHECK(c.out_dir == "/tmp/spm_cfg_out");
  CHECK(c.step_time_warmup == 1);
  CHECK(c.step_time_reps == 6);
}

TEST_CASE("config rejection") {
  CHECK_THROWS_AS(parse_config("not json"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"methods": ["l1"], "seeds": [1]})"), ConfigError);  // no ratios
  CHECK_THROWS_AS(
      parse_config(R"({"ratios": [0.1, 0.5], "methods": ["l1"], "seeds": [1]})"),  // no baseline
      ConfigError);
  CHECK_THROWS_AS(
      parse_config(R"({"ratios": [0.0, 0.5, 0.2], "methods": ["l1"], "seeds": [1]})"),  // unsorted
      ConfigError);
  CHECK_THROWS_AS(
      parse_config(R"({"ratios": [0.0, 1.0], "methods": ["l1"], "seeds": [1]})"),  // ratio 1
      ConfigError);
  CHECK_THROWS_AS(
      parse_config(R"({"ratios": [0.0], "methods": ["magnitude"], "seeds": [1]})"),  // bad method
      ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"ratios": [0.0], "methods": ["l1"], "seeds": []})"),
                  ConfigError);
  CHECK_THROWS_AS(
      parse_config(R"({"ratios": [0.0], "methods": ["l1"], "seeds": [1], "dataset": "mnist"})"),
      ConfigError);
  CHECK_THROWS_AS(parse_config(
                      R"({"ratios": [0.0], "methods": ["l1"], "seeds": [1], "step_time_reps": 3})"),
                  ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("measure_step_time") {
  ModelGraph g;
  g.input_shape = {4, 4, 2};
  g.num_classes = 2;
  g.layers.emplace_back(test::make_conv("c", 2, 4));
  g.layers.emplace_back(test::identity_bn("b", 4));
  g.layers.emplace_back(ReLU{"r"});
  g.layers.emplace_back(MaxPool{"p"});
  g.layers.emplace_back(Flatten{"f"});
  g.layers.emplace_back(test::make_dense("d", 2 * 2 * 4, 2));
  init_weights(g, 1);

  SUBCASE("fewer than 5 reps is refused") {
    CHECK_THROWS_AS(measure_step_time(g, 4, 1, 3), std::invalid_argument);
    CHECK_THROWS_AS(measure_step_time(g, 4, -1, 10), std::invalid_argument);
  }
  SUBCASE("median sits inside the sample and warmup 0 is flagged") {
    auto res = measure_step_time(g, 4, 0, 7);
    CHECK(res.warmup_skipped);
    REQUIRE(res.all_ms.size() == 7);
    std::vector<double> sorted = res.all_ms;
    std::sort(sorted.begin(), sorted.end());
    CHECK(res.median_ms == sorted[3]);
    for (double t : res.all_ms) CHECK(t >= 0.0);
  }
  SUBCASE("even rep counts average the middle pair") {
    auto res = measure_step_time(g, 4, 2, 6);
    CHECK(!res.warmup_skipped);
    std::vector<double> sorted = res.all_ms;
    std::sort(sorted.begin(), sorted.end());
    CHECK(res.median_ms == doctest::Approx(0.5 * (sorted[2] + sorted[3])));
  }
}

TEST_CASE("csv writes the exact header and round-trips every field") {
  const std::string dir = tmp_dir("spm_csv");
  std::vector<RunRecord> records;
  for (int i = 0; i < 5; ++i) records.push_back(sample_record(i));
  records[4].split = "failed";
  const std::string path = dir + "/results.csv";
  emit_csv(records, path);

  const std::string text = read_file(path);
  CHECK(text.rfind(std::string(kCsvHeader) + "\n", 0) == 0);
  CHECK(count_occurrences(text, "\n") == 6);  // header + 5 rows

  auto parsed = parse_csv(path);
  REQUIRE(parsed.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(records_equal(parsed[i], records[i]));
}

TEST_CASE("parse_csv rejects a foreign header") {
  const std::string dir = tmp_dir("spm_csv_bad");
  std::ofstream(dir + "/bad.csv") << "a,b,c\n1,2,3\n";
  CHECK_THROWS(parse_csv(dir + "/bad.csv"));
  CHECK_THROWS(parse_csv(dir + "/missing.csv"));
}

TEST_CASE("emit_svg draws one polyline per (method, reload) series") {
  const std::string dir = tmp_dir("spm_svg");
  std::vector<RunRecord> records;
  RunRecord base = sample_record(0);
  base.method = "baseline";
  base.ratio = 0.0;
  records.push_back(base);
  for (double ratio : {0.3, 0.6})
    for (const char* method : {"l1", "bn_gamma"}) {
      RunRecord r = sample_record(1);
      r.method = method;
      r.ratio = ratio;
      r.reload = true;
      records.push_back(r);
    }
  RunRecord failed = sample_record(2);
  failed.split = "failed";
  records.push_back(failed);

  emit_svg(records, dir + "/plot.svg", "accuracy");
  const std::string svg = read_file(dir + "/plot.svg");
  CHECK(count_occurrences(svg, "<polyline") == 2);  // l1+reload, bn_gamma+reload
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("accuracy") != std::string::npos);

  CHECK_THROWS_AS(emit_svg(records, dir + "/plot2.svg", "no_such_field"), std::invalid_argument);
  CHECK_THROWS_AS(emit_svg({}, dir + "/plot3.svg", "accuracy"), std::invalid_argument);
}

TEST_CASE("run_experiment sweeps, records, and persists deterministically") {
  ExperimentConfig c;
  c.preset = Preset::Tiny;
  c.dataset = "synthetic";
  c.class_subset = std::vector<int>{0, 1};
  c.train_fraction = 0.02;  // 100 train / 20 test samples
  c.ratios = {0.0, 0.3};
  c.methods = {Method::L1, Method::BnGamma};
  c.scope = Scope::PerLayer;
  c.reload = {true, false};
  c.seeds = {1};
  c.hyperparams.batch_size = 16;
  c.hyperparams.max_epochs = 1;
  c.step_time_warmup = 0;
  c.step_time_reps = 5;
  c.out_dir = tmp_dir("spm_exp_a");

  auto records = run_experiment(c);
  // 1 baseline + ratio 0.3 x 2 methods x 2 policies
  REQUIRE(records.size() == 5);
  CHECK(records[0].method == "baseline");
  CHECK(records[0].ratio == 0.0);
  CHECK(records[0].reload == false);
  for (std::size_t i = 1; i < records.size(); ++i) {
    CHECK(records[i].ratio == 0.3);
    CHECK(records[i].split == "test");
    CHECK(records[i].param_count < records[0].param_count);
    CHECK(records[i].accuracy >= 0.0);
    CHECK(records[i].accuracy <= 1.0);
    CHECK(records[i].measured_step_ms_median > 0.0);
  }

  SUBCASE("artifacts land in out_dir and the csv matches the return value") {
    for (const char* f : {"results.csv", "accuracy.svg", "memory.svg", "step_time.svg"})
      CHECK(fs::exists(fs::path(c.out_dir) / f));
    auto parsed = parse_csv(c.out_dir + "/results.csv");
    REQUIRE(parsed.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) CHECK(records_equal(parsed[i], records[i]));
  }

  SUBCASE("saved models agree with the recorded parameter counts") {
    for (const auto& r : records) {
      auto model = load_model(c.out_dir + "/" + r.run_id + ".spmg");
      CHECK(param_count(model) == r.param_count);
      // the harness's test split: tail of the seed-1000003 pool, then the
      // train_fraction prefix
      auto test_set = take(drop(synth_dataset(1000003, 6000, 2, {32, 32, 3}), 5000), 20);
      CHECK(evaluate(model, test_set) == doctest::Approx(r.accuracy));
    }
  }

  SUBCASE("a rerun reproduces everything but the wall-clock timings") {
    ExperimentConfig c2 = c;
    c2.out_dir = tmp_dir("spm_exp_b");
    auto again = run_experiment(c2);
    REQUIRE(again.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      CHECK(again[i].run_id == records[i].run_id);
      CHECK(again[i].accuracy == records[i].accuracy);
      CHECK(again[i].loss == records[i].loss);
      CHECK(again[i].param_count == records[i].param_count);
      CHECK(again[i].padded_weight_bytes == records[i].padded_weight_bytes);
      CHECK(again[i].padded_total_bytes == records[i].padded_total_bytes);
      CHECK(again[i].est_step_ms == records[i].est_step_ms);
    }
  }
}
