#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "invprune/augment.hpp"
#include "invprune/data.hpp"
#include "invprune/loss.hpp"
#include "invprune/network.hpp"
#include "invprune/optim.hpp"
#include "invprune/rng.hpp"

namespace invprune {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat `key = value` file, `#` comments, duplicate keys rejected.
struct KvFile {
  std::vector<std::pair<std::string, std::string>> entries;

  static KvFile parse_text(const std::string& text, const std::string& origin) {
    KvFile kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
      ++lineno;
      std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      std::size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + " line " + std::to_string(lineno) + ": expected key = value");
      std::string key = detail::trim(t.substr(0, eq));
      std::string val = detail::trim(t.substr(eq + 1));
      if (key.empty())
        throw ConfigError(origin + " line " + std::to_string(lineno) + ": empty key");
      if (!seen.insert(key).second)
        throw ConfigError(origin + " line " + std::to_string(lineno) + ": duplicate key '" +
                          key + "'");
      kv.entries.emplace_back(key, val);
    }
    return kv;
  }

  static KvFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path);
  }
};

enum class ArchKind { mlp_tab, mlp_vis, mlp_custom };
enum class DataKind { tabular, image };

struct ExperimentConfig {
  // data
  DataKind data_kind = DataKind::tabular;
  std::string dataset;
  std::string schema;  // tabular only
  SplitSpec split;

  // model
  ArchKind arch = ArchKind::mlp_tab;
  std::size_t alpha = 8;
  std::vector<std::size_t> hidden_dims;
  InitScheme init_scheme = InitScheme::kaiming;
  double kappa = 0.25;
  std::uint64_t seed = 1;

  // objective
  double lambda = 1.0;
  NceForm nce_form = NceForm::equation;
  double corrupt_fraction = 0.6;
  double crop_lo = 0.2, crop_hi = 1.0;
  double flip_p = 0.5;
  double jitter_strength = 0.4;
  double gray_p = 0.2;

  // training
  std::size_t batch_size = 128;
  OptimizerKind preprune_optimizer = OptimizerKind::sgd_nesterov;
  double preprune_lr = 0.001;
  double preprune_momentum = 0.9;
  std::size_t preprune_epochs = 60;
  double prune_ratio = 8.0;
  std::string finetune_optimizer = "auto";  // auto | adamw | sgd_nesterov
  double finetune_lr = 0.001;
  double finetune_weight_decay = 0.01;
  double finetune_momentum = 0.9;
  std::size_t finetune_epochs = 45;
  ScheduleKind finetune_schedule = ScheduleKind::cosine_restarts;
  double restart_budget = 15.0;
  double budget_multiplier = 2.0;

  // evaluation
  std::uint64_t metric_seed = 0;  // 0 derives from seed
  std::size_t consistency_draws = 8;

  // io
  std::string out = "run_out";
  int precision = 4;  // checkpoint scalar bytes
  bool export_histograms = true;
  std::size_t histogram_bins = 64;

  // sweep
  std::vector<double> sweep_r;
  std::vector<double> sweep_kappa;
  std::vector<std::uint64_t> sweep_seeds;
  std::vector<std::string> sweep_arms;

  static ExperimentConfig from_kv(const KvFile& kv, const std::string& origin);
  static ExperimentConfig load(const std::string& path) {
    return from_kv(KvFile::load(path), path);
  }

  void validate_files() const {
    namespace fs = std::filesystem;
    if (dataset.empty()) throw ConfigError("config: key 'dataset' is required");
    if (!fs::exists(dataset)) throw ConfigError("config: dataset file not found: " + dataset);
    if (data_kind == DataKind::tabular) {
      if (schema.empty())
        throw ConfigError("config: key 'schema' is required for tabular data");
      if (!fs::exists(schema)) throw ConfigError("config: schema file not found: " + schema);
    }
  }

  std::uint64_t metric_stream() const {
    return metric_seed ? metric_seed : substream(seed, "metrics");
  }

  OptimizerKind resolved_finetune_optimizer() const {
    if (finetune_optimizer == "adamw") return OptimizerKind::adamw;
    if (finetune_optimizer == "sgd_nesterov") return OptimizerKind::sgd_nesterov;
    // auto: tabular gets adamw, vision the momentum recipe
    return data_kind == DataKind::tabular ? OptimizerKind::adamw : OptimizerKind::sgd_nesterov;
  }

  std::string resolved_text() const;
  std::uint64_t hash() const { return fnv1a64(resolved_text()); }
};

namespace cfg_detail {

struct Parser {
  std::map<std::string, std::string> kv;
  std::set<std::string> used;
  std::string origin;

  bool has(const std::string& key) const { return kv.count(key) > 0; }

  std::string raw(const std::string& key) {
    used.insert(key);
    return kv.at(key);
  }

  std::string str(const std::string& key, const std::string& dflt) {
    if (!has(key)) return dflt;
    return raw(key);
  }

  double num(const std::string& key, double dflt, double lo, double hi) {
    if (!has(key)) return dflt;
    const std::string v = raw(key);
    try {
      std::size_t usedc = 0;
      double x = std::stod(v, &usedc);
      if (usedc != v.size()) throw std::invalid_argument(v);
      if (x < lo || x > hi)
        throw ConfigError(origin + ": key '" + key + "' = " + v + " outside [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
      return x;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError(origin + ": key '" + key + "' = '" + v + "' is not a number");
    }
  }

  std::size_t count(const std::string& key, std::size_t dflt, std::size_t lo,
                    std::size_t hi = static_cast<std::size_t>(-1)) {
    double x = num(key, static_cast<double>(dflt), 0, 1e18);
    if (x != std::floor(x))
      throw ConfigError(origin + ": key '" + key + "' must be an integer");
    auto v = static_cast<std::size_t>(x);
    if (v < lo || v > hi)
      throw ConfigError(origin + ": key '" + key + "' outside valid range");
    return v;
  }

  std::uint64_t u64(const std::string& key, std::uint64_t dflt) {
    if (!has(key)) return dflt;
    const std::string v = raw(key);
    try {
      std::size_t usedc = 0;
      std::uint64_t x = std::stoull(v, &usedc);
      if (usedc != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError(origin + ": key '" + key + "' = '" + v + "' is not an unsigned integer");
    }
  }

  bool flag(const std::string& key, bool dflt) {
    if (!has(key)) return dflt;
    std::string v = raw(key);
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError(origin + ": key '" + key + "' must be true or false");
  }

  std::vector<std::string> list(const std::string& key, const std::vector<std::string>& dflt) {
    if (!has(key)) return dflt;
    std::vector<std::string> out;
    std::string v = raw(key);
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    if (out.empty())
      throw ConfigError(origin + ": key '" + key + "' is an empty list");
    return out;
  }

  void finish() const {
    for (const auto& [k, v] : kv)
      if (!used.count(k))
        throw ConfigError(origin + ": unknown key '" + k + "'");
  }
};

inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace cfg_detail

inline ExperimentConfig ExperimentConfig::from_kv(const KvFile& kvf, const std::string& origin) {
  cfg_detail::Parser p;
  p.origin = origin;
  for (const auto& [k, v] : kvf.entries) p.kv[k] = v;

  ExperimentConfig c;
  std::string dk = p.str("data.kind", "tabular");
  if (dk == "tabular")
    c.data_kind = DataKind::tabular;
  else if (dk == "image")
    c.data_kind = DataKind::image;
  else
    throw ConfigError(origin + ": key 'data.kind' must be tabular or image");
  c.dataset = p.str("dataset", "");
  c.schema = p.str("schema", "");
  c.split.train = p.num("split.train", 0.6, 0.0, 1.0);
  c.split.valid = p.num("split.valid", 0.2, 0.0, 1.0);
  c.split.test = p.num("split.test", 0.2, 0.0, 1.0);
  c.split.seed = p.u64("split.seed", 11);
  if (std::abs(c.split.train + c.split.valid + c.split.test - 1.0) > 1e-9)
    throw ConfigError(origin + ": split fractions must sum to 1");

  std::string arch = p.str("arch", "mlp_tab");
  if (arch == "mlp_tab")
    c.arch = ArchKind::mlp_tab;
  else if (arch == "mlp_vis")
    c.arch = ArchKind::mlp_vis;
  else if (arch == "mlp_custom")
    c.arch = ArchKind::mlp_custom;
  else
    throw ConfigError(origin + ": key 'arch' must be mlp_tab, mlp_vis, or mlp_custom");
  c.alpha = p.count("arch.alpha", 8, 1);
  for (const std::string& h : p.list("arch.hidden_dims", {})) {
    try {
      c.hidden_dims.push_back(std::stoull(h));
    } catch (const std::exception&) {
      throw ConfigError(origin + ": key 'arch.hidden_dims' has non-integer entry '" + h + "'");
    }
  }
  if (c.arch == ArchKind::mlp_custom && c.hidden_dims.empty())
    throw ConfigError(origin + ": arch mlp_custom requires 'arch.hidden_dims'");

  std::string scheme = p.str("init.scheme", "kaiming");
  if (scheme == "kaiming")
    c.init_scheme = InitScheme::kaiming;
  else if (scheme == "glorot")
    c.init_scheme = InitScheme::glorot;
  else
    throw ConfigError(origin + ": key 'init.scheme' must be kaiming or glorot");
  c.kappa = p.num("init.kappa", 0.25, 1e-12, 1e6);
  c.seed = p.u64("seed", 1);

  c.lambda = p.num("objective.lambda", 1.0, 0.0, 1e6);
  std::string form = p.str("objective.nce_form", "equation");
  if (form == "equation")
    c.nce_form = NceForm::equation;
  else if (form == "standard")
    c.nce_form = NceForm::standard_infonce;
  else
    throw ConfigError(origin + ": key 'objective.nce_form' must be equation or standard");
  c.corrupt_fraction = p.num("transform.corrupt_fraction", 0.6, 0.0, 1.0);
  c.crop_lo = p.num("transform.crop_min", 0.2, 1e-9, 1.0);
  c.crop_hi = p.num("transform.crop_max", 1.0, 1e-9, 1.0);
  if (c.crop_lo > c.crop_hi)
    throw ConfigError(origin + ": transform.crop_min exceeds transform.crop_max");
  c.flip_p = p.num("transform.flip_p", 0.5, 0.0, 1.0);
  c.jitter_strength = p.num("transform.jitter_strength", 0.4, 0.0, 1.0);
  if (c.jitter_strength >= 1.0)
    throw ConfigError(origin + ": transform.jitter_strength must lie in [0,1)");
  c.gray_p = p.num("transform.grayscale_p", 0.2, 0.0, 1.0);

  c.batch_size = p.count("batch_size", 128, 2);
  std::string ppo = p.str("preprune.optimizer", "sgd_nesterov");
  if (ppo == "sgd_nesterov")
    c.preprune_optimizer = OptimizerKind::sgd_nesterov;
  else if (ppo == "adamw")
    c.preprune_optimizer = OptimizerKind::adamw;
  else
    throw ConfigError(origin + ": key 'preprune.optimizer' must be sgd_nesterov or adamw");
  c.preprune_lr = p.num("preprune.lr", 0.001, 1e-12, 10.0);
  c.preprune_momentum = p.num("preprune.momentum", 0.9, 0.0, 1.0);
  c.preprune_epochs = p.count("preprune.epochs", 60, 0);
  c.prune_ratio = p.num("prune.ratio", 8.0, 1.0, 1e9);
  c.finetune_optimizer = p.str("finetune.optimizer", "auto");
  if (c.finetune_optimizer != "auto" && c.finetune_optimizer != "adamw" &&
      c.finetune_optimizer != "sgd_nesterov")
    throw ConfigError(origin + ": key 'finetune.optimizer' must be auto, adamw, or sgd_nesterov");
  c.finetune_lr = p.num("finetune.lr", 0.001, 1e-12, 10.0);
  c.finetune_weight_decay = p.num("finetune.weight_decay", 0.01, 0.0, 1.0);
  c.finetune_momentum = p.num("finetune.momentum", 0.9, 0.0, 1.0);
  c.finetune_epochs = p.count("finetune.epochs", 45, 0);
  std::string sched = p.str("finetune.schedule", "cosine_restarts");
  if (sched == "cosine_restarts")
    c.finetune_schedule = ScheduleKind::cosine_restarts;
  else if (sched == "constant")
    c.finetune_schedule = ScheduleKind::constant;
  else
    throw ConfigError(origin + ": key 'finetune.schedule' must be cosine_restarts or constant");
  c.restart_budget = p.num("finetune.restart_budget", 15.0, 1e-9, 1e9);
  c.budget_multiplier = p.num("finetune.budget_multiplier", 2.0, 1.0, 1e9);

  c.metric_seed = p.u64("metric.seed", 0);
  c.consistency_draws = p.count("metric.consistency_draws", 8, 1);

  c.out = p.str("out", "run_out");
  std::string prec = p.str("precision", "f32");
  if (prec == "f32")
    c.precision = 4;
  else if (prec == "f64")
    c.precision = 8;
  else
    throw ConfigError(origin + ": key 'precision' must be f32 or f64");
  c.export_histograms = p.flag("export.histograms", true);
  c.histogram_bins = p.count("export.histogram_bins", 64, 1, 100000);

  for (const std::string& s : p.list("sweep.r_grid", {"2", "4", "8"}))
    c.sweep_r.push_back(std::stod(s));
  for (const std::string& s : p.list("sweep.kappa_grid", {"0.25", "0.125", "0.0625"}))
    c.sweep_kappa.push_back(std::stod(s));
  for (const std::string& s : p.list("sweep.seeds", {"1", "2", "3"}))
    c.sweep_seeds.push_back(std::stoull(s));
  c.sweep_arms = p.list("sweep.arms", {"full"});
  for (const std::string& a : c.sweep_arms)
    if (a != "full" && a != "no_prune" && a != "no_ilo" && a != "no_pis" &&
        a != "omp_baseline" && a != "dense")
      throw ConfigError(origin + ": sweep.arms entry '" + a + "' is not a known arm");
  for (double r : c.sweep_r)
    if (r < 1.0) throw ConfigError(origin + ": sweep.r_grid entries must be >= 1");
  for (double k : c.sweep_kappa)
    if (!(k > 0.0)) throw ConfigError(origin + ": sweep.kappa_grid entries must be positive");

  p.finish();
  return c;
}

inline std::string ExperimentConfig::resolved_text() const {
  using cfg_detail::fmt_num;
  std::ostringstream o;
  o << "arch = " << (arch == ArchKind::mlp_tab ? "mlp_tab"
                     : arch == ArchKind::mlp_vis ? "mlp_vis" : "mlp_custom") << "\n";
  o << "arch.alpha = " << alpha << "\n";
  if (!hidden_dims.empty()) {
    o << "arch.hidden_dims = ";
    for (std::size_t i = 0; i < hidden_dims.size(); ++i)
      o << (i ? "," : "") << hidden_dims[i];
    o << "\n";
  }
  o << "batch_size = " << batch_size << "\n";
  o << "data.kind = " << (data_kind == DataKind::tabular ? "tabular" : "image") << "\n";
  o << "dataset = " << dataset << "\n";
  o << "export.histogram_bins = " << histogram_bins << "\n";
  o << "export.histograms = " << (export_histograms ? "true" : "false") << "\n";
  o << "finetune.budget_multiplier = " << fmt_num(budget_multiplier) << "\n";
  o << "finetune.epochs = " << finetune_epochs << "\n";
  o << "finetune.lr = " << fmt_num(finetune_lr) << "\n";
  o << "finetune.momentum = " << fmt_num(finetune_momentum) << "\n";
  o << "finetune.optimizer = " << finetune_optimizer << "\n";
  o << "finetune.restart_budget = " << fmt_num(restart_budget) << "\n";
  o << "finetune.schedule = "
    << (finetune_schedule == ScheduleKind::cosine_restarts ? "cosine_restarts" : "constant")
    << "\n";
  o << "finetune.weight_decay = " << fmt_num(finetune_weight_decay) << "\n";
  o << "init.kappa = " << fmt_num(kappa) << "\n";
  o << "init.scheme = " << (init_scheme == InitScheme::kaiming ? "kaiming" : "glorot") << "\n";
  o << "metric.consistency_draws = " << consistency_draws << "\n";
  o << "metric.seed = " << metric_seed << "\n";
  o << "objective.lambda = " << fmt_num(lambda) << "\n";
  o << "objective.nce_form = " << (nce_form == NceForm::equation ? "equation" : "standard")
    << "\n";
  o << "out = " << out << "\n";
  o << "precision = " << (precision == 4 ? "f32" : "f64") << "\n";
  o << "preprune.epochs = " << preprune_epochs << "\n";
  o << "preprune.lr = " << fmt_num(preprune_lr) << "\n";
  o << "preprune.momentum = " << fmt_num(preprune_momentum) << "\n";
  o << "preprune.optimizer = "
    << (preprune_optimizer == OptimizerKind::sgd_nesterov ? "sgd_nesterov" : "adamw") << "\n";
  o << "prune.ratio = " << fmt_num(prune_ratio) << "\n";
  o << "schema = " << schema << "\n";
  o << "seed = " << seed << "\n";
  o << "split.seed = " << split.seed << "\n";
  o << "split.test = " << fmt_num(split.test) << "\n";
  o << "split.train = " << fmt_num(split.train) << "\n";
  o << "split.valid = " << fmt_num(split.valid) << "\n";
  o << "transform.corrupt_fraction = " << fmt_num(corrupt_fraction) << "\n";
  o << "transform.crop_max = " << fmt_num(crop_hi) << "\n";
  o << "transform.crop_min = " << fmt_num(crop_lo) << "\n";
  o << "transform.flip_p = " << fmt_num(flip_p) << "\n";
  o << "transform.grayscale_p = " << fmt_num(gray_p) << "\n";
  o << "transform.jitter_strength = " << fmt_num(jitter_strength) << "\n";
  return o.str();
}

}  // namespace invprune
