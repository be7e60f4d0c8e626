#include <CLI11.hpp>
#include <iostream>
#include <json.hpp>

#include "spm/costmodel.hpp"
#include "spm/dataset.hpp"
#include "spm/engine.hpp"
#include "spm/errors.hpp"
#include "spm/harness.hpp"
#include "spm/importance.hpp"
#include "spm/serialize.hpp"
#include "spm/surgery.hpp"

namespace {

using nlohmann::ordered_json;

struct DataOpts {
  std::string dataset = "synthetic";
  std::string data_dir;
  std::vector<int> class_subset;
  double train_fraction = 1.0;
};

void add_data_flags(CLI::App* cmd, DataOpts& d) {
  cmd->add_option("--dataset", d.dataset, "cifar10 or synthetic")
      ->check(CLI::IsMember({"cifar10", "synthetic"}));
  cmd->add_option("--data-dir", d.data_dir, "directory with CIFAR-10 binary batches");
  cmd->add_option("--class-subset", d.class_subset, "restrict to these class labels");
  cmd->add_option("--train-fraction", d.train_fraction, "fraction of the data to keep");
}

struct LoadedData {
  spm::Dataset train, test;
  int num_classes = 0;
};

LoadedData load_data(const DataOpts& d) {
  LoadedData out;
  if (d.dataset == "cifar10") {
    if (d.data_dir.empty()) throw spm::ConfigError("--data-dir is required for cifar10");
    auto raw = spm::load_cifar10(d.data_dir);
    out.train = std::move(raw.train);
    out.test = std::move(raw.test);
    if (!d.class_subset.empty()) {
      out.train = spm::select_classes(out.train, d.class_subset);
      out.test = spm::select_classes(out.test, d.class_subset);
    }
  } else {
    const int classes = d.class_subset.empty() ? 10 : static_cast<int>(d.class_subset.size());
    // one pool split into train/test: the class means depend on the seed
    auto pool = spm::synth_dataset(1000003, 6000, classes, {32, 32, 3});
    out.train = spm::take(pool, 5000);
    out.test = spm::drop(pool, 5000);
  }
  if (d.train_fraction < 1.0) {
    out.train = spm::take(out.train, static_cast<std::int64_t>(d.train_fraction * out.train.size()));
    out.test = spm::take(out.test, static_cast<std::int64_t>(d.train_fraction * out.test.size()));
  }
  int max_label = 0;
  for (int l : out.train.labels) max_label = std::max(max_label, l);
  out.num_classes = std::max(max_label + 1, 2);
  return out;
}

ordered_json graph_summary(const spm::ModelGraph& g) {
  ordered_json j;
  j["input_shape"] = g.input_shape;
  j["num_classes"] = g.num_classes;
  j["param_count"] = spm::param_count(g);
  j["structure_fingerprint"] = spm::structure_fingerprint(g);
  const auto bytes = spm::padded_bytes(g, spm::LayoutConfig{}, 1);
  j["padded_weight_bytes"] = bytes.weight_bytes;
  j["layers"] = ordered_json::array();
  auto shapes = spm::infer_shapes(g, 1);
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    ordered_json jl;
    jl["kind"] = spm::layer_kind(g.layers[i]);
    jl["id"] = spm::layer_id(g.layers[i]);
    jl["output_shape"] = shapes[i];
    j["layers"].push_back(jl);
  }
  return j;
}

int run(int argc, char** argv) {
  CLI::App app{"Structured channel pruning toolkit for small CNNs"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a preset model from scratch");
  std::string preset = "tiny", out_path = "model.spmg";
  DataOpts train_data;
  spm::Hyperparams hp;
  std::uint64_t seed = 1;
  train_cmd->add_option("--preset", preset, "imagenet, cifar, or tiny");
  add_data_flags(train_cmd, train_data);
  train_cmd->add_option("--out", out_path, "output model file");
  train_cmd->add_option("--epochs", hp.max_epochs, "max epochs");
  train_cmd->add_option("--batch-size", hp.batch_size, "batch size");
  train_cmd->add_option("--lr", hp.learning_rate, "learning rate");
  train_cmd->add_option("--momentum", hp.momentum, "SGD momentum");
  train_cmd->add_option("--seed", seed, "init and shuffle seed");

  // prune
  auto* prune_cmd = app.add_subcommand("prune", "prune a trained model in place (no masks)");
  std::string model_path, prune_out = "pruned.spmg", method = "bn_gamma", scope = "per_layer";
  double ratio = 0.3;
  bool reload = true;
  std::uint64_t prune_seed = 1;
  prune_cmd->add_option("--model", model_path, "trained model file")->required();
  prune_cmd->add_option("--out", prune_out, "output model file");
  prune_cmd->add_option("--ratio", ratio, "fraction of channels to remove, in [0,1)");
  prune_cmd->add_option("--method", method)->check(CLI::IsMember({"l1", "bn_gamma"}));
  prune_cmd->add_option("--scope", scope)->check(CLI::IsMember({"per_layer", "global"}));
  prune_cmd->add_flag("--reload,!--no-reload", reload,
                      "copy surviving weights from the original model");
  prune_cmd->add_option("--seed", prune_seed, "reinit seed when --no-reload");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a model on a dataset");
  std::string eval_model;
  DataOpts eval_data;
  eval_cmd->add_option("--model", eval_model, "model file")->required();
  add_data_flags(eval_cmd, eval_data);

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "run the full experiment sweep");
  std::string config_path;
  sweep_cmd->add_option("--config", config_path, "experiment config JSON")->required();

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "print graph/importance/plan JSON");
  std::string inspect_model, inspect_method, inspect_scope = "per_layer";
  double inspect_ratio = -1.0;
  inspect_cmd->add_option("--model", inspect_model, "model file")->required();
  inspect_cmd->add_option("--method", inspect_method, "print importance report for this method")
      ->check(CLI::IsMember({"l1", "bn_gamma"}));
  inspect_cmd->add_option("--ratio", inspect_ratio, "also print the plan for this ratio");
  inspect_cmd->add_option("--scope", inspect_scope)->check(CLI::IsMember({"per_layer", "global"}));

  CLI11_PARSE(app, argc, argv);

  if (*train_cmd) {
    auto data = load_data(train_data);
    hp.seed = seed;
    auto g = spm::build_preset(spm::preset_from_string(preset), data.num_classes, seed);
    auto result = spm::train(g, data.train, data.test, hp);
    spm::save_model(result.model, out_path);
    for (const auto& rec : result.log)
      std::cout << "epoch " << rec.epoch << " loss " << rec.train_loss << " train_acc "
                << rec.train_accuracy << " val_acc " << rec.val_accuracy << "\n";
    std::cout << "saved " << out_path << "\n";
  } else if (*prune_cmd) {
    auto g = spm::load_model(model_path);
    auto report = spm::score(g, spm::method_from_string(method));
    auto plan = spm::make_plan(report, ratio, spm::scope_from_string(scope));
    auto policy = reload ? spm::WeightPolicy::reload() : spm::WeightPolicy::reinit(prune_seed);
    auto pruned = spm::apply_plan(g, plan, policy);
    spm::save_model(pruned, prune_out);
    std::cout << "params " << spm::param_count(g) << " -> " << spm::param_count(pruned)
              << ", removed " << plan.total_removals() << " channels, saved " << prune_out << "\n";
  } else if (*eval_cmd) {
    auto g = spm::load_model(eval_model);
    auto data = load_data(eval_data);
    std::cout << "accuracy " << spm::evaluate(g, data.test) << "\n";
  } else if (*sweep_cmd) {
    auto config = spm::load_config(config_path);
    auto records = spm::run_experiment(config);
    std::cout << "wrote " << records.size() << " records to " << config.out_dir
              << "/results.csv\n";
  } else if (*inspect_cmd) {
    auto g = spm::load_model(inspect_model);
    ordered_json j;
    j["graph"] = graph_summary(g);
    if (!inspect_method.empty()) {
      auto report = spm::score(g, spm::method_from_string(inspect_method));
      ordered_json scores;
      for (const auto& [id, s] : report.scores) scores[id] = s;
      j["importance"] = {{"method", inspect_method}, {"scores", scores}};
      if (inspect_ratio >= 0.0) {
        auto plan = spm::make_plan(report, inspect_ratio, spm::scope_from_string(inspect_scope));
        ordered_json removals;
        for (const auto& [id, idx] : plan.removals) removals[id] = idx;
        j["plan"] = {{"ratio", inspect_ratio},
                     {"scope", inspect_scope},
                     {"removals", removals},
                     {"shortfall", plan.shortfall}};
      }
    }
    std::cout << j.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const spm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const spm::DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
