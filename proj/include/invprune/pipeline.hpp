#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "invprune/augment.hpp"
#include "invprune/checkpoint.hpp"
#include "invprune/config.hpp"
#include "invprune/data.hpp"
#include "invprune/loss.hpp"
#include "invprune/metrics.hpp"
#include "invprune/network.hpp"
#include "invprune/optim.hpp"
#include "invprune/prune.hpp"
#include "invprune/rng.hpp"

namespace invprune {

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SplitTensors {
  Tensor x;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

struct PreparedData {
  DataKind kind = DataKind::tabular;
  std::size_t input_dim = 0;
  std::size_t class_count = 0;
  std::size_t img_c = 0, img_h = 0, img_w = 0;
  SplitTensors train, valid, test;
  TransformSet transforms;
  Scaler scaler;
  std::vector<std::string> feature_names;
};

namespace pipe_detail {

inline Tensor rows_of(const Tensor& x, const std::vector<std::size_t>& idx) {
  std::size_t f = x.cols();
  Tensor out({idx.size(), f});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < f; ++j) out.at(i, j) = x.at(idx[i], j);
  return out;
}

inline std::vector<int> labels_of(const std::vector<int>& labels,
                                  const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

inline double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

}  // namespace pipe_detail

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  cfg.validate_files();
  PreparedData out;
  out.kind = cfg.data_kind;
  if (cfg.data_kind == DataKind::tabular) {
    TabularSchema schema = TabularSchema::load(cfg.schema);
    TabularDataset ds = load_csv(cfg.dataset, schema);
    SplitIndices idx = split_dataset(ds.size(), cfg.split);
    TabularDataset tr = take(ds, idx.train);
    TabularDataset va = take(ds, idx.valid);
    TabularDataset te = take(ds, idx.test);
    standardize(tr, va, te, &out.scaler);
    out.input_dim = ds.feature_count();
    out.class_count = ds.class_count;
    out.feature_names = ds.feature_names;
    out.train = {std::move(tr.features), std::move(tr.labels)};
    out.valid = {std::move(va.features), std::move(va.labels)};
    out.test = {std::move(te.features), std::move(te.labels)};
    auto marg = std::make_shared<EmpiricalMarginal>(empirical_marginals(
        TabularDataset{out.feature_names,
                       std::vector<ColumnKind>(out.input_dim, ColumnKind::numeric), out.train.x,
                       out.train.labels, {}, out.class_count}));
    out.transforms.domain = TransformDomain::tabular;
    out.transforms.corrupt_fraction = cfg.corrupt_fraction;
    out.transforms.marginals = marg;
  } else {
    ImageDataset ds = load_image_tensor(cfg.dataset);
    Tensor all({ds.n, ds.sample_size()});
    for (std::size_t i = 0; i < ds.pixels.size(); ++i) all.values()[i] = ds.pixels[i];
    SplitIndices idx = split_dataset(ds.n, cfg.split);
    out.input_dim = ds.sample_size();
    out.class_count = ds.class_count;
    out.img_c = ds.c;
    out.img_h = ds.h;
    out.img_w = ds.w;
    out.train = {pipe_detail::rows_of(all, idx.train),
                 pipe_detail::labels_of(ds.labels, idx.train)};
    out.valid = {pipe_detail::rows_of(all, idx.valid),
                 pipe_detail::labels_of(ds.labels, idx.valid)};
    out.test = {pipe_detail::rows_of(all, idx.test), pipe_detail::labels_of(ds.labels, idx.test)};
    out.transforms.domain = TransformDomain::image;
    out.transforms.crop_lo = cfg.crop_lo;
    out.transforms.crop_hi = cfg.crop_hi;
    out.transforms.flip_p = cfg.flip_p;
    out.transforms.jitter_strength = cfg.jitter_strength;
    out.transforms.gray_p = cfg.gray_p;
    out.transforms.img_c = ds.c;
    out.transforms.img_h = ds.h;
    out.transforms.img_w = ds.w;
  }
  out.transforms.validate();
  return out;
}

inline const char* transform_name(const PreparedData& data) {
  return data.kind == DataKind::tabular ? "feature_corrupt" : "image_aug";
}

inline NetworkSpec make_network(const ExperimentConfig& cfg, const PreparedData& data) {
  switch (cfg.arch) {
    case ArchKind::mlp_tab:
      return build_mlp_tab(data.input_dim, data.class_count);
    case ArchKind::mlp_vis:
      if (data.kind != DataKind::image)
        throw PipelineError("arch mlp_vis needs image data; got tabular");
      return build_mlp_vis(cfg.alpha, data.img_h * data.img_w, data.class_count, data.img_c);
    case ArchKind::mlp_custom:
      return build_mlp(data.input_dim, cfg.hidden_dims, data.class_count);
  }
  throw PipelineError("unknown architecture");
}

// One row per (phase, epoch, split). NaN fields print as empty cells.
struct MetricsRow {
  std::string phase;
  std::size_t epoch = 0;
  std::string split;
  double lr = std::numeric_limits<double>::quiet_NaN();
  double loss_total = std::numeric_limits<double>::quiet_NaN();
  double loss_sup = std::numeric_limits<double>::quiet_NaN();
  double loss_nce = std::numeric_limits<double>::quiet_NaN();
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  double balanced_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::string transform;
  double consistency_unchanged = std::numeric_limits<double>::quiet_NaN();
  double consistency_flip = std::numeric_limits<double>::quiet_NaN();
};

inline constexpr const char* kMetricsHeader =
    "phase,epoch,split,lr,loss_total,loss_sup,loss_nce,lambda,accuracy,balanced_accuracy,"
    "transform,consistency_unchanged,consistency_flip";

inline void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write metrics file " + path);
  auto cell = [](double v) { return std::isnan(v) ? std::string() : detail::fmt_g(v); };
  out << kMetricsHeader << "\n";
  for (const MetricsRow& r : rows) {
    out << r.phase << ',' << r.epoch << ',' << r.split << ',' << cell(r.lr) << ','
        << cell(r.loss_total) << ',' << cell(r.loss_sup) << ',' << cell(r.loss_nce) << ','
        << cell(r.lambda) << ',' << cell(r.accuracy) << ',' << cell(r.balanced_accuracy) << ','
        << r.transform << ',' << cell(r.consistency_unchanged) << ','
        << cell(r.consistency_flip) << "\n";
  }
}

namespace pipe_detail {

inline void push_valid_row(ModelState& model, const PreparedData& data, const std::string& phase,
                           std::size_t epoch, double lr, std::vector<MetricsRow>& rows) {
  std::vector<int> preds = predict(model, data.valid.x);
  MetricsRow row;
  row.phase = phase;
  row.epoch = epoch;
  row.split = "valid";
  row.lr = lr;
  row.accuracy = accuracy(preds, data.valid.labels);
  row.balanced_accuracy = balanced_accuracy(preds, data.valid.labels, data.class_count);
  rows.push_back(std::move(row));
}

struct EpochLoss {
  double total = 0.0, sup = 0.0, nce = 0.0;
  std::size_t batches = 0;

  void add(const LossBreakdown& lb) {
    total += lb.total;
    sup += lb.l_sup;
    nce += lb.l_nce;
    ++batches;
  }
  double mean_total() const { return total / static_cast<double>(batches); }
};

inline void require_batches(std::size_t count, const std::string& phase) {
  if (count == 0)
    throw PipelineError(phase + ": training split smaller than one batch; lower batch_size");
}

}  // namespace pipe_detail

// Non-finite loss aborts before the optimizer touches the parameters; the
// caller-provided checkpoint keeps the last state that produced finite loss.
inline void guard_divergence(double loss, const std::string& phase, std::size_t epoch,
                             const ModelState& last_good, const std::string& ckpt_path,
                             int precision, std::uint64_t seed) {
  if (std::isfinite(loss)) return;
  if (!ckpt_path.empty()) save_checkpoint(ckpt_path, last_good, precision, {seed});
  throw PipelineError(phase + ": loss diverged at epoch " + std::to_string(epoch) +
                      "; last good checkpoint retained");
}

// Supervised-only epochs over plain reshuffled batches. Shared by the
// fine-tune phase and the dense baseline; the contrastive path is absent
// from this loop entirely.
inline void supervised_phase(ModelState& model, const PreparedData& data,
                             const ExperimentConfig& cfg, const std::string& phase,
                             std::size_t epochs, const std::string& ckpt_on_divergence,
                             std::vector<MetricsRow>& rows) {
  OptimizerConfig oc;
  oc.kind = cfg.resolved_finetune_optimizer();
  oc.lr = cfg.finetune_lr;
  oc.momentum = cfg.finetune_momentum;
  oc.weight_decay = cfg.finetune_weight_decay;
  Optimizer opt(oc, model);
  LRSchedule sched{cfg.finetune_schedule, cfg.finetune_lr, cfg.restart_budget,
                   cfg.budget_multiplier};
  const std::uint64_t batch_seed = substream(cfg.seed, "finetune");
  ModelState last_good = model;
  for (std::size_t e = 0; e < epochs; ++e) {
    double lr = sched.lr_at(static_cast<double>(e));
    auto batches = batch_iter(data.train.size(), cfg.batch_size, batch_seed, e, Mode::train);
    pipe_detail::require_batches(batches.size(), phase);
    pipe_detail::EpochLoss acc;
    for (const auto& b : batches) {
      Tensor x = pipe_detail::rows_of(data.train.x, b);
      std::vector<int> y = pipe_detail::labels_of(data.train.labels, b);
      model.zero_grads();
      ForwardTrace tr = forward(model, x, Mode::train);
      LossBreakdown lb;
      lb.l_sup = l_sup(tr.logits, y);
      lb.total = lb.l_sup;
      guard_divergence(lb.total, phase, e, last_good, ckpt_on_divergence, cfg.precision,
                       cfg.seed);
      backward(model, tr, GradSeed{l_sup_backward(tr.logits, y), std::nullopt});
      opt.step(model, lr);
      acc.add(lb);
    }
    double mean = acc.mean_total();
    last_good = model;
    MetricsRow row;
    row.phase = phase;
    row.epoch = e;
    row.split = "train";
    row.lr = lr;
    row.loss_total = mean;
    row.loss_sup = acc.sup / static_cast<double>(acc.batches);
    rows.push_back(std::move(row));
    pipe_detail::push_valid_row(model, data, phase, e, lr, rows);
  }
}

// Contrastive-regularized main training phase: kappa-scaled init, stratified
// batches so every batch mixes labels, one transform stream per epoch.
// Exports a magnitude histogram per epoch when configured.
inline ModelState run_supernet(const ExperimentConfig& cfg, const PreparedData& data,
                               const std::string& outdir, std::vector<MetricsRow>& rows) {
  namespace fs = std::filesystem;
  NetworkSpec spec = make_network(cfg, data);
  if (spec.layers.front().in_dim != data.input_dim)
    throw PipelineError("network input width " + std::to_string(spec.layers.front().in_dim) +
                        " does not match data width " + std::to_string(data.input_dim));
  ModelState model = pis_init(spec, InitSpec{cfg.init_scheme, cfg.kappa, cfg.seed});
  fs::create_directories(outdir);
  save_checkpoint(outdir + "/init.ckpt", model, cfg.precision, {cfg.seed});

  auto hist_path = [&](std::size_t e) {
    return outdir + "/hist_epoch_" + std::to_string(e) + ".csv";
  };
  if (cfg.export_histograms) {
    write_histogram_csv(weight_histogram(model, cfg.histogram_bins, 0), hist_path(0));
    write_matrix_csv(first_layer_magnitudes(model), outdir + "/first_layer_epoch_0.csv");
  }

  OptimizerConfig oc;
  oc.kind = cfg.preprune_optimizer;
  oc.lr = cfg.preprune_lr;
  oc.momentum = cfg.preprune_momentum;
  Optimizer opt(oc, model);
  const std::uint64_t batch_seed = substream(cfg.seed, "supernet");
  ModelState last_good = model;
  for (std::size_t e = 0; e < cfg.preprune_epochs; ++e) {
    auto batches = stratified_batch_iter(data.train.labels, cfg.batch_size, batch_seed, e);
    pipe_detail::require_batches(batches.size(), "supernet");
    Rng tr_rng(substream(cfg.seed, "supernet-transforms", e));
    pipe_detail::EpochLoss acc;
    for (const auto& b : batches) {
      Tensor x = pipe_detail::rows_of(data.train.x, b);
      std::vector<int> y = pipe_detail::labels_of(data.train.labels, b);
      model.zero_grads();
      LossBreakdown lb =
          ilo_loss(model, x, y, data.transforms, cfg.lambda, tr_rng, true, cfg.nce_form);
      guard_divergence(lb.total, "supernet", e, last_good, outdir + "/supernet.ckpt",
                       cfg.precision, cfg.seed);
      opt.step(model, cfg.preprune_lr);
      acc.add(lb);
    }
    double mean = acc.mean_total();
    last_good = model;
    MetricsRow row;
    row.phase = "supernet";
    row.epoch = e;
    row.split = "train";
    row.lr = cfg.preprune_lr;
    row.loss_total = mean;
    row.loss_sup = acc.sup / static_cast<double>(acc.batches);
    row.lambda = cfg.lambda;
    if (cfg.lambda > 0.0) row.loss_nce = acc.nce / static_cast<double>(acc.batches);
    rows.push_back(std::move(row));
    pipe_detail::push_valid_row(model, data, "supernet", e, cfg.preprune_lr, rows);
    if (cfg.export_histograms)
      write_histogram_csv(weight_histogram(model, cfg.histogram_bins, e + 1), hist_path(e + 1));
  }
  if (cfg.export_histograms)
    write_matrix_csv(first_layer_magnitudes(model),
                     outdir + "/first_layer_epoch_" + std::to_string(cfg.preprune_epochs) +
                         ".csv");
  save_checkpoint(outdir + "/supernet.ckpt", model, cfg.precision, {cfg.seed});
  return model;
}

// Prune + reset to the stored initial draw. Writes the masked restart state.
inline ModelState run_prune(const ExperimentConfig& cfg, const std::string& supernet_ckpt,
                            const std::string& outdir) {
  ModelState trained = load_checkpoint(supernet_ckpt);
  std::filesystem::create_directories(outdir);
  PruneMask mask = global_magnitude_prune(trained, cfg.prune_ratio);
  ModelState restart = lottery_reinit(mask, trained);
  save_checkpoint(outdir + "/pruned.ckpt", restart, cfg.precision, {cfg.seed});
  return restart;
}

// Supervised fine-tune of a masked restart checkpoint; appends the final
// test-split row including the transform-consistency columns.
inline ModelState run_finetune(const ExperimentConfig& cfg, const PreparedData& data,
                               const std::string& pruned_ckpt, const std::string& outdir,
                               std::vector<MetricsRow>& rows) {
  ModelState model = load_checkpoint(pruned_ckpt);
  if (model.spec.layers.front().in_dim != data.input_dim)
    throw PipelineError("checkpoint input width does not match the configured dataset");
  std::filesystem::create_directories(outdir);
  supervised_phase(model, data, cfg, "finetune", cfg.finetune_epochs,
                   outdir + "/finetuned.ckpt", rows);
  save_checkpoint(outdir + "/finetuned.ckpt", model, cfg.precision, {cfg.seed});

  std::vector<int> preds = predict(model, data.test.x);
  MetricsRow row;
  row.phase = "final";
  row.epoch = cfg.finetune_epochs;
  row.split = "test";
  row.accuracy = accuracy(preds, data.test.labels);
  row.balanced_accuracy = balanced_accuracy(preds, data.test.labels, data.class_count);
  row.transform = transform_name(data);
  ConsistencyResult cons =
      consistency(model, data.test.x, data.transforms, cfg.metric_stream(),
                  cfg.consistency_draws);
  row.consistency_unchanged = cons.unchanged_pct;
  row.consistency_flip = cons.flip_pct;
  rows.push_back(std::move(row));
  return model;
}

struct RunResult {
  ModelState model;
  std::vector<MetricsRow> rows;
  double test_accuracy = 0.0;
  double test_balanced_accuracy = 0.0;
  double valid_accuracy = 0.0;
  double valid_balanced_accuracy = 0.0;
  ConsistencyResult test_consistency;
  SparsityReport sparsity;
  std::string manifest_path;
};

namespace pipe_detail {

inline void finalize_result(RunResult& res, const PreparedData& data) {
  const MetricsRow& last = res.rows.back();
  res.test_accuracy = last.accuracy;
  res.test_balanced_accuracy = last.balanced_accuracy;
  res.test_consistency = {last.consistency_unchanged, last.consistency_flip};
  std::vector<int> vp = predict(res.model, data.valid.x);
  res.valid_accuracy = accuracy(vp, data.valid.labels);
  res.valid_balanced_accuracy = balanced_accuracy(vp, data.valid.labels, data.class_count);
  res.sparsity = sparsity_report(res.model);
}

}  // namespace pipe_detail

// Structured-text run record: config hash, artifact paths, per-phase wall
// clock, then the fully resolved config echoed line by line. Every listed
// file must exist when the manifest is written.
inline std::string write_manifest(
    const ExperimentConfig& cfg, const std::string& outdir,
    const std::vector<std::pair<std::string, std::string>>& files,
    const std::vector<std::pair<std::string, double>>& timings) {
  namespace fs = std::filesystem;
  for (const auto& [name, path] : files)
    if (!fs::exists(path))
      throw PipelineError("manifest lists missing file " + path + " (" + name + ")");
  std::string path = outdir + "/manifest.txt";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write manifest " + path);
  char hashbuf[24];
  std::snprintf(hashbuf, sizeof(hashbuf), "%016llx",
                static_cast<unsigned long long>(cfg.hash()));
  out << "config_hash = " << hashbuf << "\n";
  for (const auto& [name, path_] : files) out << "file." << name << " = " << path_ << "\n";
  for (const auto& [phase, secs] : timings) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.3f", secs);
    out << "wall_seconds." << phase << " = " << buf << "\n";
  }
  std::istringstream echo(cfg.resolved_text());
  std::string line;
  while (std::getline(echo, line)) out << "config." << line << "\n";
  if (!out) throw PipelineError("manifest write failed for " + path);
  return path;
}

// Full pipeline: main training phase, prune, reset, fine-tune. Each phase
// consumes the previous phase's checkpoint file, so the composed run and the
// separate CLI phases walk the same path.
inline RunResult run_full(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const std::string outdir = cfg.out;
  PreparedData data = prepare_data(cfg);
  fs::create_directories(outdir);
  RunResult res;
  double t0 = pipe_detail::now_seconds();
  run_supernet(cfg, data, outdir, res.rows);
  double t1 = pipe_detail::now_seconds();
  run_prune(cfg, outdir + "/supernet.ckpt", outdir);
  double t2 = pipe_detail::now_seconds();
  res.model = run_finetune(cfg, data, outdir + "/pruned.ckpt", outdir, res.rows);
  double t3 = pipe_detail::now_seconds();
  pipe_detail::finalize_result(res, data);
  write_metrics_csv(res.rows, outdir + "/metrics.csv");
  res.manifest_path = write_manifest(
      cfg, outdir,
      {{"init", outdir + "/init.ckpt"},
       {"supernet", outdir + "/supernet.ckpt"},
       {"pruned", outdir + "/pruned.ckpt"},
       {"finetuned", outdir + "/finetuned.ckpt"},
       {"metrics", outdir + "/metrics.csv"}},
      {{"supernet", t1 - t0}, {"prune", t2 - t1}, {"finetune", t3 - t2}});
  return res;
}

// Plain supervised reference: unscaled init, no contrastive term, no pruning.
// Runs the fine-tune recipe for the combined epoch budget so it gets at least
// as much optimization as any pruned arm.
inline RunResult run_dense(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const std::string outdir = cfg.out;
  PreparedData data = prepare_data(cfg);
  fs::create_directories(outdir);
  NetworkSpec spec = make_network(cfg, data);
  RunResult res;
  res.model = pis_init(spec, InitSpec{cfg.init_scheme, 1.0, cfg.seed});
  save_checkpoint(outdir + "/init.ckpt", res.model, cfg.precision, {cfg.seed});
  double t0 = pipe_detail::now_seconds();
  supervised_phase(res.model, data, cfg, "dense", cfg.preprune_epochs + cfg.finetune_epochs,
                   outdir + "/finetuned.ckpt", res.rows);
  save_checkpoint(outdir + "/finetuned.ckpt", res.model, cfg.precision, {cfg.seed});
  double t1 = pipe_detail::now_seconds();

  std::vector<int> preds = predict(res.model, data.test.x);
  MetricsRow row;
  row.phase = "final";
  row.epoch = cfg.preprune_epochs + cfg.finetune_epochs;
  row.split = "test";
  row.accuracy = accuracy(preds, data.test.labels);
  row.balanced_accuracy = balanced_accuracy(preds, data.test.labels, data.class_count);
  row.transform = transform_name(data);
  ConsistencyResult cons = consistency(res.model, data.test.x, data.transforms,
                                       cfg.metric_stream(), cfg.consistency_draws);
  row.consistency_unchanged = cons.unchanged_pct;
  row.consistency_flip = cons.flip_pct;
  res.rows.push_back(std::move(row));

  pipe_detail::finalize_result(res, data);
  write_metrics_csv(res.rows, outdir + "/metrics.csv");
  res.manifest_path = write_manifest(cfg, outdir,
                                     {{"init", outdir + "/init.ckpt"},
                                      {"finetuned", outdir + "/finetuned.ckpt"},
                                      {"metrics", outdir + "/metrics.csv"}},
                                     {{"dense", t1 - t0}});
  return res;
}

enum class Arm { full, no_prune, no_ilo, no_pis, omp_baseline, dense };

inline Arm parse_arm(const std::string& name) {
  if (name == "full") return Arm::full;
  if (name == "no_prune") return Arm::no_prune;
  if (name == "no_ilo") return Arm::no_ilo;
  if (name == "no_pis") return Arm::no_pis;
  if (name == "omp_baseline") return Arm::omp_baseline;
  if (name == "dense") return Arm::dense;
  throw ConfigError("unknown ablation arm '" + name + "'");
}

inline const char* arm_name(Arm arm) {
  switch (arm) {
    case Arm::full: return "full";
    case Arm::no_prune: return "no_prune";
    case Arm::no_ilo: return "no_ilo";
    case Arm::no_pis: return "no_pis";
    case Arm::omp_baseline: return "omp_baseline";
    case Arm::dense: return "dense";
  }
  return "?";
}

// Arm overrides leave every other knob untouched.
inline ExperimentConfig arm_config(ExperimentConfig cfg, Arm arm) {
  switch (arm) {
    case Arm::full:
      break;
    case Arm::no_prune:
      cfg.prune_ratio = 1.0;
      break;
    case Arm::no_ilo:
      cfg.lambda = 0.0;
      break;
    case Arm::no_pis:
      cfg.kappa = 1.0;
      break;
    case Arm::omp_baseline:
      cfg.lambda = 0.0;
      cfg.kappa = 1.0;
      break;
    case Arm::dense:
      cfg.lambda = 0.0;
      cfg.kappa = 1.0;
      cfg.prune_ratio = 1.0;
      break;
  }
  return cfg;
}

inline RunResult run_ablation(const ExperimentConfig& cfg, Arm arm) {
  ExperimentConfig ac = arm_config(cfg, arm);
  return arm == Arm::dense ? run_dense(ac) : run_full(ac);
}

struct SweepRow {
  std::string arm;
  double r = 0.0, kappa = 0.0;  // grid coordinates
  std::uint64_t seed = 0;
  double effective_r = 0.0, effective_kappa = 0.0;  // after arm pinning
  double valid_accuracy = 0.0, valid_balanced_accuracy = 0.0;
  double test_accuracy = 0.0, test_balanced_accuracy = 0.0;
  double consistency_unchanged = 0.0;
};

namespace pipe_detail {

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write sweep file " + path);
  out << "arm,r,kappa,seed,effective_r,effective_kappa,valid_accuracy,"
         "valid_balanced_accuracy,test_accuracy,test_balanced_accuracy,"
         "consistency_unchanged\n";
  for (const SweepRow& r : rows)
    out << r.arm << ',' << detail::fmt_g(r.r) << ',' << detail::fmt_g(r.kappa) << ',' << r.seed
        << ',' << detail::fmt_g(r.effective_r) << ',' << detail::fmt_g(r.effective_kappa) << ','
        << detail::fmt_g(r.valid_accuracy) << ','
        << detail::fmt_g(r.valid_balanced_accuracy) << ',' << detail::fmt_g(r.test_accuracy)
        << ',' << detail::fmt_g(r.test_balanced_accuracy) << ','
        << detail::fmt_g(r.consistency_unchanged) << "\n";
}

struct MeanStd {
  double mean = 0.0, stddev = 0.0;
};

// Sample standard deviation; a single observation reports 0.
inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd ms;
  for (double x : v) ms.mean += x;
  ms.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - ms.mean) * (x - ms.mean);
    ms.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return ms;
}

inline void write_sweep_summary(const std::vector<SweepRow>& rows, const std::string& path) {
  std::map<std::tuple<std::string, double, double>, std::vector<const SweepRow*>> groups;
  for (const SweepRow& r : rows) groups[{r.arm, r.r, r.kappa}].push_back(&r);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot write sweep summary " + path);
  out << "arm,r,kappa,seeds,valid_accuracy_mean,valid_accuracy_std,"
         "valid_balanced_accuracy_mean,valid_balanced_accuracy_std,"
         "test_balanced_accuracy_mean,test_balanced_accuracy_std,"
         "consistency_unchanged_mean,consistency_unchanged_std\n";
  for (const auto& [key, members] : groups) {
    std::vector<double> va, vb, tb, cu;
    for (const SweepRow* r : members) {
      va.push_back(r->valid_accuracy);
      vb.push_back(r->valid_balanced_accuracy);
      tb.push_back(r->test_balanced_accuracy);
      cu.push_back(r->consistency_unchanged);
    }
    MeanStd mva = mean_std(va), mvb = mean_std(vb), mtb = mean_std(tb), mcu = mean_std(cu);
    out << std::get<0>(key) << ',' << detail::fmt_g(std::get<1>(key)) << ','
        << detail::fmt_g(std::get<2>(key)) << ',' << members.size() << ','
        << detail::fmt_g(mva.mean) << ',' << detail::fmt_g(mva.stddev) << ','
        << detail::fmt_g(mvb.mean) << ',' << detail::fmt_g(mvb.stddev) << ','
        << detail::fmt_g(mtb.mean) << ',' << detail::fmt_g(mtb.stddev) << ','
        << detail::fmt_g(mcu.mean) << ',' << detail::fmt_g(mcu.stddev) << "\n";
  }
}

}  // namespace pipe_detail

// Full cross product of arms x r grid x kappa grid x seeds; one run per cell
// with an isolated output directory. Row count is always the product of the
// four axis lengths. Arms that pin a knob override the grid value for the run
// itself; the row keeps the grid coordinates and reports the effective values
// alongside.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  std::vector<SweepRow> rows;
  for (const std::string& arm_str : cfg.sweep_arms) {
    Arm arm = parse_arm(arm_str);
    for (double r : cfg.sweep_r) {
      for (double kappa : cfg.sweep_kappa) {
        for (std::uint64_t seed : cfg.sweep_seeds) {
          ExperimentConfig run_cfg = cfg;
          run_cfg.prune_ratio = r;
          run_cfg.kappa = kappa;
          run_cfg.seed = seed;
          run_cfg.out = cfg.out + "/" + arm_str + "_r" + detail::fmt_g(r) + "_k" +
                        detail::fmt_g(kappa) + "_s" + std::to_string(seed);
          ExperimentConfig eff = arm_config(run_cfg, arm);
          RunResult res = run_ablation(run_cfg, arm);
          SweepRow row;
          row.arm = arm_str;
          row.r = r;
          row.kappa = kappa;
          row.seed = seed;
          row.effective_r = eff.prune_ratio;
          row.effective_kappa = eff.kappa;
          row.valid_accuracy = res.valid_accuracy;
          row.valid_balanced_accuracy = res.valid_balanced_accuracy;
          row.test_accuracy = res.test_accuracy;
          row.test_balanced_accuracy = res.test_balanced_accuracy;
          row.consistency_unchanged = res.test_consistency.unchanged_pct;
          rows.push_back(std::move(row));
        }
      }
    }
  }
  fs::create_directories(cfg.out);
  pipe_detail::write_sweep_csv(rows, cfg.out + "/sweep.csv");
  pipe_detail::write_sweep_summary(rows, cfg.out + "/sweep_summary.csv");
  return rows;
}

}  // namespace invprune
