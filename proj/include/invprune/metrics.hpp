#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "invprune/augment.hpp"
#include "invprune/network.hpp"
#include "invprune/prune.hpp"
#include "invprune/tensor.hpp"

namespace invprune {

inline std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out;
  out.reserve(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;  // ties keep the lowest index
    out.push_back(static_cast<int>(best));
  }
  return out;
}

inline std::vector<int> predict(ModelState& model, const Tensor& x) {
  ForwardTrace tr = forward(model, x, Mode::eval);
  return argmax_rows(tr.logits);
}

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size() || preds.empty())
    throw std::invalid_argument("accuracy: prediction/label length mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++hit;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(preds.size());
}

// Mean per-class recall in percent. Classes absent from the labels are
// excluded from the mean, so the value is invariant to relabeling.
inline double balanced_accuracy(const std::vector<int>& preds, const std::vector<int>& labels,
                                std::size_t class_count) {
  if (preds.size() != labels.size() || preds.empty())
    throw std::invalid_argument("balanced_accuracy: prediction/label length mismatch");
  std::vector<std::size_t> total(class_count, 0), hit(class_count, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= class_count)
      throw std::invalid_argument("balanced_accuracy: label outside class range");
    ++total[static_cast<std::size_t>(y)];
    if (preds[i] == y) ++hit[static_cast<std::size_t>(y)];
  }
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < class_count; ++c) {
    if (total[c] == 0) continue;
    ++present;
    sum += static_cast<double>(hit[c]) / static_cast<double>(total[c]);
  }
  if (present == 0) throw std::invalid_argument("balanced_accuracy: no labels present");
  return 100.0 * sum / static_cast<double>(present);
}

struct ConsistencyResult {
  double unchanged_pct = 0.0;
  double flip_pct = 0.0;
};

// Fraction of predictions that survive k independent transform draws per
// sample, in percent. Draw order is sample-major (all k draws for sample 0,
// then sample 1, ...), eval-mode forward passes throughout.
inline ConsistencyResult consistency(ModelState& model, const Tensor& x,
                                     const TransformSet& transforms, std::uint64_t seed,
                                     std::size_t k) {
  if (k == 0) throw std::invalid_argument("consistency: need at least one draw");
  transforms.validate();
  std::size_t n = x.rows(), f = x.cols();
  if (n == 0) throw std::invalid_argument("consistency: empty evaluation set");
  std::vector<int> base = predict(model, x);
  Rng rng(substream(seed, "consistency"));
  Tensor views({n * k, f});
  for (std::size_t i = 0; i < n; ++i) {
    Tensor row({1, f});
    for (std::size_t j = 0; j < f; ++j) row.at(0, j) = x.at(i, j);
    for (std::size_t t = 0; t < k; ++t) {
      Tensor v = transform_batch(transforms, row, rng);
      for (std::size_t j = 0; j < f; ++j) views.at(i * k + t, j) = v.at(0, j);
    }
  }
  std::vector<int> transformed = predict(model, views);
  std::size_t unchanged = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < k; ++t)
      if (transformed[i * k + t] == base[i]) ++unchanged;
  ConsistencyResult res;
  res.unchanged_pct = 100.0 * static_cast<double>(unchanged) / static_cast<double>(n * k);
  res.flip_pct = 100.0 - res.unchanged_pct;
  return res;
}

struct HistogramDump {
  std::size_t epoch = 0;
  std::vector<double> edges;        // bins + 1 ascending edges
  std::vector<std::size_t> counts;  // bins entries; sums to the prunable count
};

constexpr double kHistogramFloor = 1e-8;

// Log-spaced magnitude histogram over all prunable (encoder linear) weights.
// Values below the floor are clamped into the first bin; the maximum lands in
// the last. max_override fixes the upper edge so histograms from different
// models share a bin grid.
inline HistogramDump weight_histogram(const ModelState& model, std::size_t bins,
                                      std::size_t epoch = 0, double max_override = 0.0) {
  if (bins == 0) throw std::invalid_argument("weight_histogram: need at least one bin");
  std::vector<double> mags;
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    if (!prunable_layer(model.spec, i)) continue;
    for (double v : model.layers[i].params[0].values()) mags.push_back(std::abs(v));
  }
  if (mags.empty()) throw std::invalid_argument("weight_histogram: no prunable weights");
  double maxv = max_override;
  if (maxv <= 0.0)
    for (double m : mags) maxv = std::max(maxv, m);
  if (maxv <= kHistogramFloor) maxv = kHistogramFloor * 10.0;

  HistogramDump dump;
  dump.epoch = epoch;
  double lo = std::log10(kHistogramFloor), hi = std::log10(maxv);
  double step = (hi - lo) / static_cast<double>(bins);
  dump.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b)
    dump.edges[b] = std::pow(10.0, lo + step * static_cast<double>(b));
  dump.counts.assign(bins, 0);
  for (double m : mags) {
    double clamped = std::max(m, kHistogramFloor);
    auto idx = static_cast<long>(std::floor((std::log10(clamped) - lo) / step));
    idx = std::max(0L, std::min(static_cast<long>(bins) - 1, idx));
    ++dump.counts[static_cast<std::size_t>(idx)];
  }
  return dump;
}

// |weights| of the first linear layer as a (rows = units, cols = inputs) grid.
inline Tensor first_layer_magnitudes(const ModelState& model) {
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    if (model.spec.layers[i].kind != LayerKind::linear) continue;
    const Tensor& w = model.layers[i].params[0];
    Tensor out(w.shape());
    for (std::size_t k = 0; k < w.size(); ++k) out.at(k) = std::abs(w.at(k));
    return out;
  }
  throw std::invalid_argument("first_layer_magnitudes: network has no linear layer");
}

namespace detail {

inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace detail

inline void write_histogram_csv(const HistogramDump& dump, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_histogram_csv: cannot write " + path);
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < dump.counts.size(); ++b)
    out << detail::fmt_g(dump.edges[b]) << "," << detail::fmt_g(dump.edges[b + 1]) << ","
        << dump.counts[b] << "\n";
}

inline HistogramDump read_histogram_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_histogram_csv: cannot open " + path);
  std::string line;
  std::getline(in, line);
  HistogramDump dump;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t c1 = line.find(','), c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw std::runtime_error("read_histogram_csv: malformed row in " + path);
    double lo = std::stod(line.substr(0, c1));
    double hi = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    if (dump.edges.empty()) dump.edges.push_back(lo);
    dump.edges.push_back(hi);
    dump.counts.push_back(static_cast<std::size_t>(std::stoull(line.substr(c2 + 1))));
  }
  return dump;
}

inline void write_matrix_csv(const Tensor& m, const std::string& path) {
  if (m.rank() != 2) throw std::invalid_argument("write_matrix_csv: need a 2-d tensor");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_matrix_csv: cannot write " + path);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out << ",";
      out << detail::fmt_g(m.at(i, j));
    }
    out << "\n";
  }
}

}  // namespace invprune
