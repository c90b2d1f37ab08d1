// End-to-end acceptance checks. Each check prints one PASS/FAIL line and the
// binary exits nonzero if any fail. Wall-clock budgets are enforced per check.

#include "invprune/invprune.hpp"
#include "support/synth.hpp"
#include "support/tmpdir.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace invprune;

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. analytic gradients vs central finite differences

bool check_gradients(std::string& detail) {
  const double h = 1e-5;
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    Rng g(substream(1000, "gradnet", static_cast<std::uint64_t>(t)));
    std::size_t in = 3 + g.below(4);
    std::size_t depth = 1 + g.below(3);
    std::vector<std::size_t> hidden;
    for (std::size_t l = 0; l < depth; ++l) hidden.push_back(2 + g.below(7));
    std::size_t classes = 2 + g.below(2);
    ModelState model = pis_init(build_mlp(in, hidden, classes),
                                InitSpec{InitScheme::kaiming, 1.0, 7000 + static_cast<std::uint64_t>(t)});
    model.alloc_grads();

    const std::size_t b = 6;
    Tensor x({b, in});
    for (auto& v : x.values()) v = g.normal();
    Tensor xt = x;
    for (auto& v : xt.values()) v += 0.2 * g.normal();
    std::vector<int> labels(b);
    for (std::size_t i = 0; i < b; ++i) labels[i] = static_cast<int>(i % classes);

    NceForm form = (t % 2 == 0) ? NceForm::equation : NceForm::standard_infonce;
    for (double lambda : {0.0, 1.0}) {
      auto loss_value = [&]() {
        if (lambda == 0.0) {
          ForwardTrace f = forward(model, x, Mode::train);
          return l_sup(f.logits, labels);
        }
        return ilo_from_views(model, x, xt, labels, lambda, form, false).total;
      };
      model.zero_grads();
      if (lambda == 0.0) {
        ForwardTrace f = forward(model, x, Mode::train);
        backward(model, f, GradSeed{l_sup_backward(f.logits, labels), std::nullopt});
      } else {
        ilo_from_views(model, x, xt, labels, lambda, form, true);
      }
      std::vector<double> analytic;
      model.for_each_param([&](std::size_t, std::size_t, Tensor& p) {
        for (double v : p.grad()) analytic.push_back(v);
      });
      std::size_t k = 0;
      model.for_each_param([&](std::size_t, std::size_t, Tensor& p) {
        for (std::size_t c = 0; c < p.size(); ++c, ++k) {
          double saved = p.values()[c];
          p.values()[c] = saved + h;
          double up = loss_value();
          p.values()[c] = saved - h;
          double down = loss_value();
          p.values()[c] = saved;
          double fd = (up - down) / (2.0 * h);
          double rel = std::fabs(fd - analytic[k]) /
                       std::max({std::fabs(fd), std::fabs(analytic[k]), 1e-3});
          worst = std::max(worst, rel);
        }
      });
    }
  }
  detail = "20 networks, worst relative gradient error " + fmt(worst);
  return worst <= 1e-4;
}

// ---------------------------------------------------------------------------
// 2. measurement surrogate equals the training-form contrastive value

bool check_surrogate(std::string& detail) {
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    Rng g(substream(4000, "surr", static_cast<std::uint64_t>(t)));
    std::size_t in = 4 + g.below(4);
    std::size_t depth = 1 + g.below(2);
    std::vector<std::size_t> hidden;
    for (std::size_t l = 0; l < depth; ++l) hidden.push_back(3 + g.below(6));
    std::size_t classes = 2 + g.below(2);
    ModelState model = pis_init(build_mlp(in, hidden, classes),
                                InitSpec{InitScheme::kaiming, 1.0, 5000 + static_cast<std::uint64_t>(t)});

    std::size_t b = 4 + g.below(5);
    Tensor x({b, in});
    for (auto& v : x.values()) v = g.normal();
    std::vector<int> labels(b);
    for (std::size_t i = 0; i < b; ++i) labels[i] = static_cast<int>(g.below(classes));
    labels[0] = 0;
    labels[1] = 1;

    EmpiricalMarginal marg;
    marg.pools.resize(in);
    for (auto& pool : marg.pools)
      for (int d = 0; d < 12; ++d) pool.push_back(g.normal());
    TransformSet set;
    set.domain = TransformDomain::tabular;
    set.corrupt_fraction = (t % 3 == 0) ? 0.25 : (t % 3 == 1) ? 0.6 : 0.9;
    set.marginals = std::make_shared<EmpiricalMarginal>(std::move(marg));

    std::uint64_t ds = substream(6000, "draw", static_cast<std::uint64_t>(t));
    Rng ra(ds), rb(ds);
    double surrogate = invariance_objective(model, x, labels, set, ra);
    Tensor xt = transform_batch(set, x, rb);
    ForwardTrace f1 = forward(model, x, Mode::eval);
    ForwardTrace f2 = forward(model, xt, Mode::eval);
    ContrastiveBatch cb = build_contrastive_batch(f1.hidden, f2.hidden, labels);
    double train_term = l_nce(cb, NceForm::equation);
    worst = std::max(worst, std::fabs(surrogate - train_term));
  }
  detail = "100 triples, worst |surrogate - contrastive| = " + fmt(worst);
  return worst <= 1e-10;
}

// ---------------------------------------------------------------------------
// 3. global magnitude pruning vs brute-force sort oracle

bool check_prune(std::string& detail) {
  struct NetDef {
    std::size_t in;
    std::vector<std::size_t> hidden;
    std::size_t classes;
  };
  const NetDef nets[] = {
      {13, {8}, 3},          // 104 prunable
      {40, {25}, 3},         // 1000
      {125, {80}, 4},        // 10000
      {320, {250, 120}, 5},  // 110000
  };
  int cells = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    NetworkSpec spec = build_mlp(nets[n].in, nets[n].hidden, nets[n].classes);
    ModelState model =
        pis_init(spec, InitSpec{InitScheme::kaiming, 1.0, 300 + static_cast<std::uint64_t>(n)});
    std::size_t prunable = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
      if (prunable_layer(spec, i)) prunable += model.layers[i].params[0].size();

    for (double r : {2.0, 4.0, 8.0, 16.0}) {
      PruneMask mask = global_magnitude_prune(model, r);
      auto expect_kept = static_cast<std::size_t>(std::floor(static_cast<double>(prunable) / r));
      if (mask.prunable != prunable || mask.kept != expect_kept) {
        detail = "keep count mismatch at r=" + fmt(r) + ": got " + std::to_string(mask.kept) +
                 ", want " + std::to_string(expect_kept);
        return false;
      }

      struct Entry {
        double mag;
        std::size_t layer, flat;
      };
      std::vector<Entry> order;
      order.reserve(prunable);
      for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (!prunable_layer(spec, i)) continue;
        const auto& w = model.layers[i].params[0].values();
        for (std::size_t k = 0; k < w.size(); ++k) order.push_back({std::fabs(w[k]), i, k});
      }
      std::sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) {
        if (a.mag != b.mag) return a.mag > b.mag;
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.flat < b.flat;
      });
      std::vector<std::vector<std::uint8_t>> oracle(spec.layers.size());
      for (std::size_t i = 0; i < spec.layers.size(); ++i)
        if (spec.layers[i].kind == LayerKind::linear)
          oracle[i].assign(model.layers[i].params[0].size(), prunable_layer(spec, i) ? 0 : 1);
      for (std::size_t k = 0; k < expect_kept; ++k) oracle[order[k].layer][order[k].flat] = 1;
      if (oracle != mask.keep) {
        detail = "mask differs from the sort oracle at " + std::to_string(prunable) +
                 " weights, r=" + fmt(r);
        return false;
      }

      double min_kept = std::numeric_limits<double>::infinity();
      double max_dropped = 0.0;
      for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (!prunable_layer(spec, i)) continue;
        const auto& w = model.layers[i].params[0].values();
        for (std::size_t k = 0; k < w.size(); ++k) {
          double m = std::fabs(w[k]);
          if (mask.keep[i][k])
            min_kept = std::min(min_kept, m);
          else
            max_dropped = std::max(max_dropped, m);
        }
      }
      if (min_kept < max_dropped) {
        detail = "threshold property violated at r=" + fmt(r);
        return false;
      }
      ++cells;
    }
  }
  detail = std::to_string(cells) + " (network, r) cells match the sort oracle exactly";
  return true;
}

// ---------------------------------------------------------------------------
// 4. masked restart: kept weights bit-exact, dropped pinned at zero

bool check_lottery(std::string& detail) {
  NetworkSpec spec = build_mlp(20, {16, 16}, 2);
  ModelState model = pis_init(spec, InitSpec{InitScheme::kaiming, 0.25, 44});

  std::vector<std::vector<double>> theta0(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (spec.layers[i].kind == LayerKind::linear) theta0[i] = model.layers[i].params[0].values();

  Rng g(substream(44, "drift"));
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind != LayerKind::linear) continue;
    for (auto& v : model.layers[i].params[0].values()) v += 0.3 * g.normal();
  }

  PruneMask mask = global_magnitude_prune(model, 4.0);
  ModelState restart = lottery_reinit(mask, model);

  std::size_t kept_n = 0, dropped_n = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind != LayerKind::linear) continue;
    const auto& w = restart.layers[i].params[0].values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (mask.keep[i][k]) {
        if (std::memcmp(&w[k], &theta0[i][k], sizeof(double)) != 0) {
          detail = "kept weight not bit-identical to the step-0 value";
          return false;
        }
        ++kept_n;
      } else {
        if (!(w[k] == 0.0)) {
          detail = "dropped weight nonzero after restart";
          return false;
        }
        ++dropped_n;
      }
    }
  }

  Rng dg(substream(45, "data"));
  Tensor x({32, 20});
  for (auto& v : x.values()) v = dg.normal();
  std::vector<int> y(32);
  for (std::size_t i = 0; i < 32; ++i) y[i] = static_cast<int>(i % 2);

  OptimizerConfig oc;
  oc.kind = OptimizerKind::adamw;
  oc.lr = 0.01;
  Optimizer opt(oc, restart);
  for (int step = 0; step < 50; ++step) {
    restart.zero_grads();
    ForwardTrace tr = forward(restart, x, Mode::train);
    backward(restart, tr, GradSeed{l_sup_backward(tr.logits, y), std::nullopt});
    opt.step(restart, oc.lr);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      if (!prunable_layer(spec, i)) continue;
      const auto& w = restart.layers[i].params[0].values();
      for (std::size_t k = 0; k < w.size(); ++k)
        if (!mask.keep[i][k] && w[k] != 0.0) {
          detail = "dropped weight moved at update " + std::to_string(step);
          return false;
        }
    }
  }
  detail = std::to_string(kept_n) + " kept weights bit-exact, " + std::to_string(dropped_n) +
           " dropped weights zero through 50 updates";
  return true;
}

// ---------------------------------------------------------------------------
// 5. scaled-init magnitude separation

std::vector<double> prunable_mags(const ModelState& m) {
  std::vector<double> mags;
  for (std::size_t i = 0; i < m.spec.layers.size(); ++i)
    if (prunable_layer(m.spec, i))
      for (double v : m.layers[i].params[0].values()) mags.push_back(std::fabs(v));
  return mags;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return (n % 2) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct ScaleRun {
  double below_frac = 0.0;
  double median_shift = 0.0;
  std::vector<std::string> metrics_files;
};

ScaleRun run_scale_probe(const std::string& root, const std::string& csv,
                         const std::string& schema) {
  ExperimentConfig base;
  base.dataset = csv;
  base.schema = schema;
  base.arch = ArchKind::mlp_custom;
  base.hidden_dims = {64, 64, 64, 64};
  base.lambda = 0.0;
  base.batch_size = 128;
  base.preprune_epochs = 30;
  base.preprune_lr = 0.001;
  base.seed = 11;
  base.precision = 8;
  base.export_histograms = false;

  ScaleRun out;
  ModelState finals[2];
  const double kappas[2] = {0.125, 1.0};
  const std::string dirs[2] = {root + "/k0125", root + "/k1"};
  for (int j = 0; j < 2; ++j) {
    ExperimentConfig cfg = base;
    cfg.kappa = kappas[j];
    cfg.out = dirs[j];
    PreparedData data = prepare_data(cfg);
    std::vector<MetricsRow> rows;
    finals[j] = run_supernet(cfg, data, cfg.out, rows);
    write_metrics_csv(rows, cfg.out + "/metrics.csv");
    out.metrics_files.push_back(cfg.out + "/metrics.csv");
  }

  ModelState dense_init = load_checkpoint(dirs[1] + "/init.ckpt");
  double init_scale = median_of(prunable_mags(dense_init));
  double cut = 0.25 * init_scale;

  std::vector<double> small = prunable_mags(finals[0]);
  std::size_t below = 0;
  for (double m : small)
    if (m < cut) ++below;
  out.below_frac = static_cast<double>(below) / static_cast<double>(small.size());

  double final_med = median_of(prunable_mags(finals[1]));
  out.median_shift = std::fabs(final_med - init_scale) / init_scale;
  return out;
}

// ---------------------------------------------------------------------------
// 6-8. ablation battery on the invariance dataset

struct BatteryRun {
  std::map<std::string, std::array<double, 3>> bal;
  std::map<std::string, std::array<double, 3>> cons;
  std::vector<std::string> metrics_files;
};

BatteryRun run_battery(const std::string& root, const std::string& csv,
                       const std::string& schema) {
  ExperimentConfig base;
  base.dataset = csv;
  base.schema = schema;
  base.arch = ArchKind::mlp_custom;
  base.hidden_dims = {48};
  base.batch_size = 64;
  base.kappa = 0.25;
  base.lambda = 1.0;
  base.prune_ratio = 8.0;
  base.corrupt_fraction = 0.25;
  base.preprune_epochs = 30;
  base.preprune_lr = 0.005;
  base.finetune_epochs = 60;
  base.finetune_lr = 0.02;
  base.finetune_weight_decay = 0.0;
  base.precision = 8;
  base.export_histograms = false;

  BatteryRun out;
  const Arm arms[] = {Arm::full, Arm::dense, Arm::no_pis, Arm::no_ilo};
  for (Arm arm : arms) {
    const std::string an = arm_name(arm);
    for (std::uint64_t s = 1; s <= 3; ++s) {
      ExperimentConfig cfg = base;
      cfg.seed = s;
      cfg.out = root + "/" + an + "_s" + std::to_string(s);
      RunResult res = run_ablation(cfg, arm);
      out.bal[an][s - 1] = res.test_balanced_accuracy;
      out.cons[an][s - 1] = res.test_consistency.unchanged_pct;
      out.metrics_files.push_back(cfg.out + "/metrics.csv");
    }
  }
  return out;
}

double mean3(const std::array<double, 3>& a) { return (a[0] + a[1] + a[2]) / 3.0; }

// ---------------------------------------------------------------------------
// 9. small imbalanced tabular set, full pipeline

struct SanityRun {
  double bal = 0.0;
  bool manifest_ok = false;
  std::string missing;
  std::string metrics_file;
};

SanityRun run_sanity(const std::string& root, const std::string& csv,
                     const std::string& schema) {
  ExperimentConfig cfg;
  cfg.dataset = csv;
  cfg.schema = schema;
  cfg.arch = ArchKind::mlp_custom;
  cfg.hidden_dims = {32, 32};
  cfg.batch_size = 64;
  cfg.preprune_epochs = 30;
  cfg.finetune_epochs = 30;
  cfg.seed = 3;
  cfg.precision = 8;
  cfg.export_histograms = false;
  cfg.out = root + "/blood";

  RunResult res = run_full(cfg);
  SanityRun out;
  out.bal = res.test_balanced_accuracy;
  out.metrics_file = cfg.out + "/metrics.csv";

  const std::string man = slurp(res.manifest_path);
  const char* needles[] = {"config_hash = ",         "file.init = ",
                           "file.supernet = ",       "file.pruned = ",
                           "file.finetuned = ",      "file.metrics = ",
                           "wall_seconds.supernet =", "wall_seconds.prune =",
                           "wall_seconds.finetune =", "config.seed = "};
  out.manifest_ok = true;
  for (const char* n : needles) {
    if (man.find(n) == std::string::npos) {
      out.manifest_ok = false;
      out.missing = n;
      break;
    }
  }
  return out;
}

}  // namespace

int main() {
  testutil::TempDir tmp;
  const std::string root = tmp.str();

  const std::string scale_csv = root + "/scale.csv";
  const std::string scale_schema = root + "/scale.schema";
  {
    synth::InvarianceSpec s;
    s.n = 2000;
    s.features = 20;
    s.informative = 5;
    s.classes = 2;
    s.label_noise = 0.05;
    s.seed = 29;
    synth::write_invariance_csv(scale_csv, scale_schema, s);
  }

  const std::string inv_csv = root + "/invariance.csv";
  const std::string inv_schema = root + "/invariance.schema";
  {
    synth::InvarianceSpec s;
    s.n = 2000;
    s.features = 30;
    s.informative = 5;
    s.classes = 2;
    s.label_noise = 0.15;
    s.seed = 31;
    synth::write_invariance_csv(inv_csv, inv_schema, s);
  }

  const std::string blood_csv = root + "/blood.csv";
  const std::string blood_schema = root + "/blood.schema";
  synth::write_blood_csv(blood_csv, blood_schema, 748, 13);

  int failures = 0;
  auto report = [&](int idx, bool ok, double secs, const std::string& detail) {
    std::printf("[criterion %d] %s  (%.1f s)  %s\n", idx, ok ? "PASS" : "FAIL", secs,
                detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  };
  auto timed = [&](int idx, double limit, auto&& fn) {
    double t0 = now_s();
    std::string detail;
    bool ok = false;
    try {
      ok = fn(detail);
    } catch (const std::exception& e) {
      ok = false;
      detail = std::string("exception: ") + e.what();
    }
    double dt = now_s() - t0;
    if (ok && dt > limit) {
      ok = false;
      detail += " [exceeded " + fmt(limit) + " s budget]";
    }
    report(idx, ok, dt, detail);
  };

  timed(1, 60.0, check_gradients);
  timed(2, 60.0, check_surrogate);
  timed(3, 60.0, check_prune);
  timed(4, 60.0, check_lottery);

  ScaleRun scale1;
  timed(5, 300.0, [&](std::string& d) {
    scale1 = run_scale_probe(root + "/c5a", scale_csv, scale_schema);
    d = "fraction below cut " + fmt(scale1.below_frac) + " (need >= 0.6), dense median shift " +
        fmt(scale1.median_shift) + " (need < 0.25)";
    return scale1.below_frac >= 0.60 && scale1.median_shift < 0.25;
  });

  BatteryRun bat1;
  bool bat_ok = false;
  std::string bat_err;
  double bat_secs = 0.0;
  {
    double t0 = now_s();
    try {
      bat1 = run_battery(root + "/c6a", inv_csv, inv_schema);
      bat_ok = true;
    } catch (const std::exception& e) {
      bat_err = std::string("exception: ") + e.what();
    }
    bat_secs = now_s() - t0;
  }
  {
    bool ok = bat_ok;
    std::string d = bat_err;
    if (bat_ok) {
      double gap = mean3(bat1.bal["full"]) - mean3(bat1.bal["dense"]);
      d = "balanced-accuracy gap over dense " + fmt(gap) + " pts (need >= 2)";
      ok = gap >= 2.0;
    }
    if (ok && bat_secs > 600.0) {
      ok = false;
      d += " [exceeded 600 s budget]";
    }
    report(6, ok, bat_secs, d);
  }
  {
    bool ok = bat_ok;
    std::string d = bat_err;
    if (bat_ok) {
      double gap = mean3(bat1.cons["full"]) - mean3(bat1.cons["dense"]);
      d = "consistency gap over dense " + fmt(gap) + " pts (need >= 5)";
      ok = gap >= 5.0;
    }
    if (ok && bat_secs > 600.0) {
      ok = false;
      d += " [exceeded 600 s budget]";
    }
    report(7, ok, bat_secs, d);
  }
  {
    bool ok = bat_ok;
    std::string d = bat_err;
    if (bat_ok) {
      int beats_pis = 0, beats_ilo = 0;
      for (int s = 0; s < 3; ++s) {
        if (bat1.bal["full"][s] >= bat1.bal["no_pis"][s]) ++beats_pis;
        if (bat1.bal["full"][s] >= bat1.bal["no_ilo"][s]) ++beats_ilo;
      }
      d = "full >= no_pis in " + std::to_string(beats_pis) + "/3 seeds, full >= no_ilo in " +
          std::to_string(beats_ilo) + "/3 seeds (need >= 2 each)";
      ok = beats_pis >= 2 && beats_ilo >= 2;
    }
    if (ok && bat_secs > 900.0) {
      ok = false;
      d += " [exceeded 900 s budget]";
    }
    report(8, ok, bat_secs, d);
  }

  SanityRun blood1;
  timed(9, 600.0, [&](std::string& d) {
    blood1 = run_sanity(root + "/c9a", blood_csv, blood_schema);
    d = "balanced accuracy " + fmt(blood1.bal) + "% (need > 55), manifest " +
        (blood1.manifest_ok ? "complete" : "missing " + blood1.missing);
    return blood1.bal > 55.0 && blood1.manifest_ok;
  });

  timed(10, 2700.0, [&](std::string& d) {
    ScaleRun scale2 = run_scale_probe(root + "/c5b", scale_csv, scale_schema);
    BatteryRun bat2 = run_battery(root + "/c6b", inv_csv, inv_schema);
    SanityRun blood2 = run_sanity(root + "/c9b", blood_csv, blood_schema);

    std::vector<std::string> first = scale1.metrics_files;
    first.insert(first.end(), bat1.metrics_files.begin(), bat1.metrics_files.end());
    first.push_back(blood1.metrics_file);
    std::vector<std::string> second = scale2.metrics_files;
    second.insert(second.end(), bat2.metrics_files.begin(), bat2.metrics_files.end());
    second.push_back(blood2.metrics_file);

    if (first.size() != second.size() || first.empty()) {
      d = "rerun produced a different artifact count";
      return false;
    }
    for (std::size_t i = 0; i < first.size(); ++i) {
      std::string a = slurp(first[i]);
      std::string b = slurp(second[i]);
      if (a.empty()) {
        d = "missing or empty metrics file: " + first[i];
        return false;
      }
      if (a != b) {
        d = "metrics differ between reruns: " + first[i];
        return false;
      }
    }
    d = std::to_string(first.size()) + " metrics files byte-identical across identical-seed reruns";
    return true;
  });

  std::printf("%s\n", failures == 0 ? "acceptance: all criteria pass"
                                    : "acceptance: criteria failing");
  return failures == 0 ? 0 : 1;
}
