// Command-line front end for the pruning pipeline library.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "invprune/invprune.hpp"

namespace {

using namespace invprune;

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* sub, CommonOpts& c) {
  sub->add_option("--config", c.config_path, "experiment config file")->required();
  sub->add_option("--seed", c.seed, "override the config seed");
  sub->add_option("--out", c.out, "override the output directory");
}

ExperimentConfig load_config(const CommonOpts& c) {
  ExperimentConfig cfg = ExperimentConfig::load(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  return cfg;
}

std::string g(double v) { return detail::fmt_g(v); }

void print_final(const RunResult& res) {
  std::cout << "test_accuracy = " << g(res.test_accuracy) << "\n"
            << "test_balanced_accuracy = " << g(res.test_balanced_accuracy) << "\n"
            << "consistency_unchanged = " << g(res.test_consistency.unchanged_pct) << "\n"
            << "consistency_flip = " << g(res.test_consistency.flip_pct) << "\n"
            << "kept_weights = " << res.sparsity.kept << " of " << res.sparsity.prunable
            << " (ratio " << g(res.sparsity.achieved_ratio) << ")\n";
  if (!res.manifest_path.empty()) std::cout << "manifest = " << res.manifest_path << "\n";
}

void cmd_train(const CommonOpts& common) {
  ExperimentConfig cfg = load_config(common);
  PreparedData data = prepare_data(cfg);
  std::vector<MetricsRow> rows;
  run_supernet(cfg, data, cfg.out, rows);
  write_metrics_csv(rows, cfg.out + "/metrics.csv");
  std::cout << "supernet checkpoint = " << cfg.out << "/supernet.ckpt\n"
            << "metrics = " << cfg.out << "/metrics.csv\n";
}

void cmd_prune(const CommonOpts& common, const std::string& ckpt) {
  ExperimentConfig cfg = load_config(common);
  std::string src = ckpt.empty() ? cfg.out + "/supernet.ckpt" : ckpt;
  ModelState restart = run_prune(cfg, src, cfg.out);
  SparsityReport rep = sparsity_report(restart);
  std::cout << "pruned checkpoint = " << cfg.out << "/pruned.ckpt\n"
            << "kept_weights = " << rep.kept << " of " << rep.prunable << " (ratio "
            << g(rep.achieved_ratio) << ")\n";
}

void cmd_finetune(const CommonOpts& common, const std::string& ckpt) {
  ExperimentConfig cfg = load_config(common);
  PreparedData data = prepare_data(cfg);
  std::string src = ckpt.empty() ? cfg.out + "/pruned.ckpt" : ckpt;
  std::vector<MetricsRow> rows;
  ModelState model = run_finetune(cfg, data, src, cfg.out, rows);
  write_metrics_csv(rows, cfg.out + "/metrics.csv");
  const MetricsRow& last = rows.back();
  std::cout << "finetuned checkpoint = " << cfg.out << "/finetuned.ckpt\n"
            << "test_accuracy = " << g(last.accuracy) << "\n"
            << "test_balanced_accuracy = " << g(last.balanced_accuracy) << "\n"
            << "consistency_unchanged = " << g(last.consistency_unchanged) << "\n"
            << "consistency_flip = " << g(last.consistency_flip) << "\n";
  (void)model;
}

void cmd_run(const CommonOpts& common) {
  ExperimentConfig cfg = load_config(common);
  RunResult res = run_full(cfg);
  print_final(res);
}

void cmd_ablate(const CommonOpts& common, const std::string& arm_str) {
  ExperimentConfig cfg = load_config(common);
  Arm arm = parse_arm(arm_str);
  RunResult res = run_ablation(cfg, arm);
  std::cout << "arm = " << arm_name(arm) << "\n";
  print_final(res);
}

void cmd_sweep(const CommonOpts& common) {
  ExperimentConfig cfg = load_config(common);
  std::vector<SweepRow> rows = run_sweep(cfg);
  std::cout << "rows = " << rows.size() << "\n"
            << "sweep = " << cfg.out << "/sweep.csv\n"
            << "summary = " << cfg.out << "/sweep_summary.csv\n";
}

void cmd_eval(const CommonOpts& common, const std::string& ckpt, const std::string& split,
              const std::string& metric, const std::string& transform) {
  ExperimentConfig cfg = load_config(common);
  PreparedData data = prepare_data(cfg);
  if (!transform.empty() && transform != transform_name(data))
    throw ConfigError("unknown transform '" + transform + "' for this dataset; expected " +
                      transform_name(data));
  const SplitTensors* st = nullptr;
  if (split == "train")
    st = &data.train;
  else if (split == "valid")
    st = &data.valid;
  else if (split == "test")
    st = &data.test;
  else
    throw ConfigError("unknown split '" + split + "'; expected train, valid, or test");
  ModelState model = load_checkpoint(ckpt);
  if (model.spec.layers.front().in_dim != data.input_dim)
    throw PipelineError("checkpoint input width does not match the configured dataset");

  bool want_acc = metric == "accuracy" || metric == "all";
  bool want_bal = metric == "balanced_accuracy" || metric == "all";
  bool want_cons = metric == "consistency" || metric == "all";
  if (!want_acc && !want_bal && !want_cons)
    throw ConfigError("unknown metric '" + metric +
                      "'; expected accuracy, balanced_accuracy, consistency, or all");
  if (want_acc || want_bal) {
    std::vector<int> preds = predict(model, st->x);
    if (want_acc)
      std::cout << "accuracy = " << g(accuracy(preds, st->labels)) << "\n";
    if (want_bal)
      std::cout << "balanced_accuracy = "
                << g(balanced_accuracy(preds, st->labels, data.class_count)) << "\n";
  }
  if (want_cons) {
    ConsistencyResult cons = consistency(model, st->x, data.transforms, cfg.metric_stream(),
                                         cfg.consistency_draws);
    std::cout << "transform = " << transform_name(data) << "\n"
              << "consistency_unchanged = " << g(cons.unchanged_pct) << "\n"
              << "consistency_flip = " << g(cons.flip_pct) << "\n";
  }
}

void cmd_export_histograms(const CommonOpts& common, const std::string& ckpt,
                           std::size_t bins_opt, std::size_t epoch_label,
                           const std::string& out_file, const std::string& first_layer) {
  ExperimentConfig cfg = load_config(common);
  ModelState model = load_checkpoint(ckpt);
  std::size_t bins = bins_opt ? bins_opt : cfg.histogram_bins;
  std::string path = out_file.empty() ? cfg.out + "/hist_export.csv" : out_file;
  if (out_file.empty()) std::filesystem::create_directories(cfg.out);
  write_histogram_csv(weight_histogram(model, bins, epoch_label), path);
  std::cout << "histogram = " << path << "\n";
  if (!first_layer.empty()) {
    write_matrix_csv(first_layer_magnitudes(model), first_layer);
    std::cout << "first_layer = " << first_layer << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"invariance-guided magnitude pruning pipeline"};
  app.require_subcommand(1);

  CommonOpts c_train, c_prune, c_finetune, c_run, c_ablate, c_sweep, c_eval, c_export;
  std::string prune_ckpt, finetune_ckpt, ablate_arm;
  std::string eval_ckpt, eval_split = "test", eval_metric = "all", eval_transform;
  std::string export_ckpt, export_out, export_first_layer;
  std::size_t export_bins = 0, export_epoch = 0;

  CLI::App* sub_train = app.add_subcommand("train", "train the dense supernetwork");
  add_common(sub_train, c_train);

  CLI::App* sub_prune = app.add_subcommand("prune", "prune a trained checkpoint and reset it");
  add_common(sub_prune, c_prune);
  sub_prune->add_option("--checkpoint", prune_ckpt, "trained checkpoint (default <out>/supernet.ckpt)");

  CLI::App* sub_finetune = app.add_subcommand("finetune", "fine-tune a pruned checkpoint");
  add_common(sub_finetune, c_finetune);
  sub_finetune->add_option("--checkpoint", finetune_ckpt,
                           "pruned checkpoint (default <out>/pruned.ckpt)");

  CLI::App* sub_run = app.add_subcommand("run", "full pipeline: train, prune, fine-tune");
  add_common(sub_run, c_run);

  CLI::App* sub_ablate = app.add_subcommand("ablate", "run one ablation arm");
  add_common(sub_ablate, c_ablate);
  sub_ablate
      ->add_option("--arm", ablate_arm,
                   "one of: full, no_prune, no_ilo, no_pis, omp_baseline, dense")
      ->required();

  CLI::App* sub_sweep = app.add_subcommand("sweep", "grid over arms, r, kappa, seeds");
  add_common(sub_sweep, c_sweep);

  CLI::App* sub_eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(sub_eval, c_eval);
  sub_eval->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate")->required();
  sub_eval->add_option("--split", eval_split, "train, valid, or test (default test)");
  sub_eval->add_option("--metric", eval_metric,
                       "accuracy, balanced_accuracy, consistency, or all");
  sub_eval->add_option("--transform", eval_transform,
                       "transform family for consistency (defaults to the dataset's family)");

  CLI::App* sub_export = app.add_subcommand("export-histograms",
                                            "dump weight-magnitude histograms from a checkpoint");
  add_common(sub_export, c_export);
  sub_export->add_option("--checkpoint", export_ckpt, "checkpoint to read")->required();
  sub_export->add_option("--bins", export_bins, "bin count (default from config)");
  sub_export->add_option("--epoch", export_epoch, "epoch label stored in the dump");
  sub_export->add_option("--out-file", export_out, "histogram CSV path");
  sub_export->add_option("--first-layer", export_first_layer,
                         "also write the first linear layer's |weights| grid here");

  sub_train->callback([&] { cmd_train(c_train); });
  sub_prune->callback([&] { cmd_prune(c_prune, prune_ckpt); });
  sub_finetune->callback([&] { cmd_finetune(c_finetune, finetune_ckpt); });
  sub_run->callback([&] { cmd_run(c_run); });
  sub_ablate->callback([&] { cmd_ablate(c_ablate, ablate_arm); });
  sub_sweep->callback([&] { cmd_sweep(c_sweep); });
  sub_eval->callback(
      [&] { cmd_eval(c_eval, eval_ckpt, eval_split, eval_metric, eval_transform); });
  sub_export->callback([&] {
    cmd_export_histograms(c_export, export_ckpt, export_bins, export_epoch, export_out,
                          export_first_layer);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const IngestError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
