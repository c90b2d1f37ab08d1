#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "invprune/mask.hpp"
#include "invprune/network.hpp"

namespace invprune {

struct InitSpec {
  InitScheme scheme = InitScheme::kaiming;
  double kappa = 1.0;
  std::uint64_t seed = 0;
};

// Scaled initialization: linear weights and biases are kappa * the base draw;
// batchnorm affine parameters stay at their defaults. The stored theta0
// snapshot holds the scaled values.
inline ModelState pis_init(const NetworkSpec& spec, const InitSpec& init) {
  if (!(init.kappa > 0.0)) throw std::invalid_argument("pis_init: kappa must be positive");
  ModelState model = init.scheme == InitScheme::kaiming ? kaiming_init(spec, init.seed)
                                                        : glorot_init(spec, init.seed);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (spec.layers[i].kind != LayerKind::linear) continue;
    for (Tensor& p : model.layers[i].params)
      for (double& v : p.values()) v *= init.kappa;
  }
  model.init_snapshot = model.layers;
  return model;
}

inline bool prunable_layer(const NetworkSpec& spec, std::size_t index) {
  return index < spec.encoder_end && spec.layers[index].kind == LayerKind::linear;
}

// Global one-shot magnitude ranking over all encoder linear weights. Keeps
// the floor(prunable / r) largest |theta|; ties at the threshold break by
// (layer index, flat index) ascending. Decoder weights, biases, and
// batchnorm parameters are untouched and uncounted.
inline PruneMask global_magnitude_prune(const ModelState& model, double r) {
  if (!(r >= 1.0)) throw std::invalid_argument("global_magnitude_prune: r must be >= 1");
  const NetworkSpec& spec = model.spec;

  struct Entry {
    double mag;
    std::uint32_t layer;
    std::uint64_t flat;
  };
  std::vector<Entry> entries;
  std::size_t prunable = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (!prunable_layer(spec, i)) continue;
    const Tensor& w = model.layers[i].params[0];
    prunable += w.size();
    for (std::size_t k = 0; k < w.size(); ++k)
      entries.push_back({std::abs(w.at(k)), static_cast<std::uint32_t>(i), k});
  }
  if (prunable == 0)
    throw std::invalid_argument("global_magnitude_prune: network has no prunable weights");
  std::size_t kept = static_cast<std::size_t>(
      std::floor(static_cast<double>(prunable) / r));
  if (kept == 0)
    throw std::invalid_argument("global_magnitude_prune: r = " + std::to_string(r) +
                                " exceeds the prunable count " + std::to_string(prunable));

  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.mag != b.mag) return a.mag > b.mag;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.flat < b.flat;
  });

  PruneMask mask;
  mask.requested_r = r;
  mask.prunable = prunable;
  mask.kept = kept;
  mask.keep.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind != LayerKind::linear) continue;
    std::size_t sz = model.layers[i].params[0].size();
    // decoder linear layers keep everything
    mask.keep[i].assign(sz, prunable_layer(spec, i) ? 0 : 1);
  }
  for (std::size_t t = 0; t < kept; ++t) mask.keep[entries[t].layer][entries[t].flat] = 1;
  return mask;
}

namespace detail {

inline void check_mask_shape(const ModelState& model, const PruneMask& mask) {
  if (mask.keep.size() != model.spec.layers.size())
    throw std::invalid_argument("mask layer count does not match network");
  for (std::size_t i = 0; i < mask.keep.size(); ++i) {
    bool is_linear = model.spec.layers[i].kind == LayerKind::linear;
    std::size_t expect = is_linear ? model.layers[i].params[0].size() : 0;
    if (mask.keep[i].size() != expect)
      throw std::invalid_argument("mask entry " + std::to_string(i) +
                                  " does not match layer weight count");
  }
}

}  // namespace detail

// theta_P(0) = mask * theta(0): kept weights revert to the stored snapshot
// bit for bit, dropped weights become exactly 0. Batchnorm affine parameters
// revert with the snapshot; running statistics reset to (0, 1). The caller
// builds a fresh optimizer, so no stale moments survive the reset.
inline ModelState lottery_reinit(const PruneMask& mask, const ModelState& trained) {
  if (trained.init_snapshot.empty())
    throw std::logic_error("lottery_reinit: model carries no initialization snapshot");
  detail::check_mask_shape(trained, mask);
  ModelState out;
  out.spec = trained.spec;
  out.layers = trained.init_snapshot;
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    if (out.spec.layers[i].kind == LayerKind::batchnorm) {
      out.layers[i].buffers[0].fill(0.0);
      out.layers[i].buffers[1].fill(1.0);
    }
    if (out.spec.layers[i].kind != LayerKind::linear) continue;
    Tensor& w = out.layers[i].params[0];
    const auto& keep = mask.keep[i];
    for (std::size_t k = 0; k < w.size(); ++k)
      if (!keep[k]) w.at(k) = 0.0;
  }
  out.init_snapshot = out.layers;
  out.mask = mask;
  out.mode = Mode::train;
  out.alloc_grads();
  return out;
}

// Zeroes dropped weights in place and attaches the mask so subsequent
// backward passes zero their gradients.
inline void apply_mask(ModelState& model, const PruneMask& mask) {
  detail::check_mask_shape(model, mask);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (model.spec.layers[i].kind != LayerKind::linear) continue;
    Tensor& w = model.layers[i].params[0];
    const auto& keep = mask.keep[i];
    for (std::size_t k = 0; k < w.size(); ++k)
      if (!keep[k]) w.at(k) = 0.0;
  }
  model.mask = mask;
}

struct SparsityReport {
  std::size_t prunable = 0;
  std::size_t kept = 0;
  double achieved_ratio = 1.0;
};

inline SparsityReport sparsity_report(const ModelState& model) {
  SparsityReport rep;
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    if (!prunable_layer(model.spec, i)) continue;
    std::size_t sz = model.layers[i].params[0].size();
    rep.prunable += sz;
    if (model.mask && !model.mask->keep[i].empty()) {
      for (std::uint8_t k : model.mask->keep[i]) rep.kept += k ? 1 : 0;
    } else {
      rep.kept += sz;
    }
  }
  rep.achieved_ratio = rep.kept
                           ? static_cast<double>(rep.prunable) / static_cast<double>(rep.kept)
                           : std::numeric_limits<double>::infinity();
  return rep;
}

}  // namespace invprune
