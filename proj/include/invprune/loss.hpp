#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "invprune/augment.hpp"
#include "invprune/network.hpp"
#include "invprune/tensor.hpp"

namespace invprune {

// Mean negative log softmax probability of the true class, stabilized by the
// per-row max before exponentiation.
inline double l_sup(const Tensor& logits, const std::vector<int>& labels) {
  std::size_t bsz = logits.rows(), c = logits.cols();
  if (bsz != labels.size())
    throw std::invalid_argument("l_sup: " + std::to_string(labels.size()) + " labels for batch " +
                                std::to_string(bsz));
  double total = 0.0;
  for (std::size_t i = 0; i < bsz; ++i) {
    int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw std::invalid_argument("l_sup: label " + std::to_string(y) + " outside " +
                                  std::to_string(c) + " classes");
    double m = logits.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, logits.at(i, j));
    double lse = 0.0;
    for (std::size_t j = 0; j < c; ++j) lse += std::exp(logits.at(i, j) - m);
    total += m + std::log(lse) - logits.at(i, static_cast<std::size_t>(y));
  }
  return total / static_cast<double>(bsz);
}

// d l_sup / d logits = (softmax - onehot) / B
inline Tensor l_sup_backward(const Tensor& logits, const std::vector<int>& labels) {
  std::size_t bsz = logits.rows(), c = logits.cols();
  Tensor d({bsz, c});
  for (std::size_t i = 0; i < bsz; ++i) {
    double m = logits.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, logits.at(i, j));
    double lse = 0.0;
    for (std::size_t j = 0; j < c; ++j) lse += std::exp(logits.at(i, j) - m);
    for (std::size_t j = 0; j < c; ++j)
      d.at(i, j) = std::exp(logits.at(i, j) - m) / lse / static_cast<double>(bsz);
    d.at(i, static_cast<std::size_t>(labels[i])) -= 1.0 / static_cast<double>(bsz);
  }
  return d;
}

namespace diag {
inline std::atomic<std::uint64_t> degenerate_cosine_count{0};
inline std::atomic<std::uint64_t> contrastive_batch_count{0};
}  // namespace diag

// Cosine similarity; a zero vector on either side yields 0 and bumps the
// degenerate-input counter.
inline double cosine_sim(const double* u, const double* v, std::size_t d) {
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    uu += u[k] * u[k];
    vv += v[k] * v[k];
    uv += u[k] * v[k];
  }
  if (uu == 0.0 || vv == 0.0) {
    diag::degenerate_cosine_count.fetch_add(1, std::memory_order_relaxed);
    return 0.0;
  }
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

inline double cosine_sim(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine_sim: length mismatch");
  return cosine_sim(u.data(), v.data(), u.size());
}

// Anchor embeddings paired with transformed candidate embeddings. The
// positive for anchor i is candidates[positive[i]]; negatives[i] index
// same-batch candidates whose labels differ from the anchor's.
struct ContrastiveBatch {
  Tensor anchors;     // B x d
  Tensor candidates;  // M x d
  std::vector<int> anchor_labels;
  std::vector<int> candidate_labels;
  std::vector<std::size_t> positive;
  std::vector<std::vector<std::size_t>> negatives;

  std::size_t anchor_count() const { return positive.size(); }

  void validate() const {
    std::size_t b = anchors.rows();
    if (positive.size() != b || negatives.size() != b || anchor_labels.size() != b)
      throw std::invalid_argument("ContrastiveBatch: anchor bookkeeping length mismatch");
    if (candidate_labels.size() != candidates.rows())
      throw std::invalid_argument("ContrastiveBatch: candidate label length mismatch");
    if (anchors.cols() != candidates.cols())
      throw std::invalid_argument("ContrastiveBatch: embedding width mismatch");
    for (std::size_t i = 0; i < b; ++i) {
      if (positive[i] >= candidates.rows())
        throw std::invalid_argument("ContrastiveBatch: positive index outside candidates");
      if (candidate_labels[positive[i]] != anchor_labels[i])
        throw std::invalid_argument("ContrastiveBatch: positive label differs from anchor " +
                                    std::to_string(i));
      if (negatives[i].empty())
        throw std::invalid_argument("ContrastiveBatch: anchor " + std::to_string(i) +
                                    " has no negatives; batches must mix labels");
      for (std::size_t j : negatives[i]) {
        if (j >= candidates.rows())
          throw std::invalid_argument("ContrastiveBatch: negative index outside candidates");
        if (candidate_labels[j] == anchor_labels[i])
          throw std::invalid_argument("ContrastiveBatch: negative shares anchor label at " +
                                      std::to_string(i));
      }
    }
  }
};

// Pairs row i of the plain batch with row i of the transformed batch; every
// transformed row with a different label serves as a negative.
inline ContrastiveBatch build_contrastive_batch(const Tensor& anchors, const Tensor& candidates,
                                                const std::vector<int>& labels) {
  diag::contrastive_batch_count.fetch_add(1, std::memory_order_relaxed);
  std::size_t b = anchors.rows();
  if (candidates.rows() != b || labels.size() != b)
    throw std::invalid_argument("build_contrastive_batch: row count mismatch");
  ContrastiveBatch cb;
  cb.anchors = anchors;
  cb.candidates = candidates;
  cb.anchor_labels = labels;
  cb.candidate_labels = labels;
  cb.positive.resize(b);
  cb.negatives.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    cb.positive[i] = i;
    for (std::size_t j = 0; j < b; ++j)
      if (labels[j] != labels[i]) cb.negatives[i].push_back(j);
  }
  cb.validate();
  return cb;
}

enum class NceForm {
  equation,          // denominator sums negatives only; no temperature
  standard_infonce,  // denominator includes the positive term
};

// Per anchor: -sim(a, pos) + logsumexp over the denominator sims, averaged.
// Under the equation form the positive is excluded from the denominator, so
// the loss is unbounded below.
inline double l_nce(const ContrastiveBatch& cb, NceForm form = NceForm::equation) {
  cb.validate();
  std::size_t b = cb.anchor_count(), d = cb.anchors.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* a = cb.anchors.data() + i * d;
    double s_pos = cosine_sim(a, cb.candidates.data() + cb.positive[i] * d, d);
    double m = form == NceForm::standard_infonce ? s_pos : -2.0;
    std::vector<double> sims;
    sims.reserve(cb.negatives[i].size());
    for (std::size_t j : cb.negatives[i]) {
      double s = cosine_sim(a, cb.candidates.data() + j * d, d);
      sims.push_back(s);
      m = std::max(m, s);
    }
    double lse = 0.0;
    for (double s : sims) lse += std::exp(s - m);
    if (form == NceForm::standard_infonce) lse += std::exp(s_pos - m);
    total += -s_pos + m + std::log(lse);
  }
  return total / static_cast<double>(b);
}

namespace detail {

// d cos(u,v)/du = (v/|v| - cos * u/|u|) / |u|; zero subgradient at |u| = 0.
inline void cosine_backward(const double* u, const double* v, std::size_t d, double coeff,
                            double* du, double* dv) {
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    uu += u[k] * u[k];
    vv += v[k] * v[k];
    uv += u[k] * v[k];
  }
  if (uu == 0.0 || vv == 0.0) return;
  double nu = std::sqrt(uu), nv = std::sqrt(vv);
  double cos = uv / (nu * nv);
  for (std::size_t k = 0; k < d; ++k) {
    du[k] += coeff * (v[k] / (nu * nv) - cos * u[k] / uu);
    dv[k] += coeff * (u[k] / (nu * nv) - cos * v[k] / vv);
  }
}

}  // namespace detail

// Accumulates scale * d l_nce into danchors / dcandidates (shapes must match
// cb.anchors / cb.candidates).
inline void l_nce_backward(const ContrastiveBatch& cb, NceForm form, double scale,
                           Tensor& danchors, Tensor& dcandidates) {
  std::size_t b = cb.anchor_count(), d = cb.anchors.cols();
  if (danchors.shape() != cb.anchors.shape() || dcandidates.shape() != cb.candidates.shape())
    throw std::invalid_argument("l_nce_backward: gradient shape mismatch");
  double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double* a = cb.anchors.data() + i * d;
    double* da = danchors.data() + i * d;
    double s_pos = cosine_sim(a, cb.candidates.data() + cb.positive[i] * d, d);
    std::vector<double> sims;
    sims.reserve(cb.negatives[i].size());
    double m = form == NceForm::standard_infonce ? s_pos : -2.0;
    for (std::size_t j : cb.negatives[i]) {
      double s = cosine_sim(a, cb.candidates.data() + j * d, d);
      sims.push_back(s);
      m = std::max(m, s);
    }
    double lse = 0.0;
    for (double s : sims) lse += std::exp(s - m);
    if (form == NceForm::standard_infonce) lse += std::exp(s_pos - m);

    double dpos = -scale * inv_b;
    if (form == NceForm::standard_infonce) dpos += scale * inv_b * std::exp(s_pos - m) / lse;
    detail::cosine_backward(a, cb.candidates.data() + cb.positive[i] * d, d, dpos, da,
                            dcandidates.data() + cb.positive[i] * d);
    for (std::size_t t = 0; t < cb.negatives[i].size(); ++t) {
      std::size_t j = cb.negatives[i][t];
      double w = scale * inv_b * std::exp(sims[t] - m) / lse;
      detail::cosine_backward(a, cb.candidates.data() + j * d, d, w, da,
                              dcandidates.data() + j * d);
    }
  }
}

struct LossBreakdown {
  double l_sup = 0.0;
  double l_nce = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

namespace detail {

inline void require_multilabel(const std::vector<int>& labels) {
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] != labels[0]) return;
  throw std::invalid_argument(
      "ilo_loss: single-class batch leaves no negatives; use stratified batching");
}

}  // namespace detail

// Joint objective on a batch whose transformed views are already materialized.
// Gradients, when requested, flow through the supervised term and through
// both sides of every cosine similarity.
inline LossBreakdown ilo_from_views(ModelState& model, const Tensor& batch,
                                    const Tensor& transformed, const std::vector<int>& labels,
                                    double lambda, NceForm form, bool with_grads) {
  detail::require_multilabel(labels);
  ForwardTrace f1 = forward(model, batch, Mode::train);
  ForwardTrace f2 = forward(model, transformed, Mode::train);
  LossBreakdown out;
  out.lambda = lambda;
  out.l_sup = l_sup(f1.logits, labels);
  ContrastiveBatch cb = build_contrastive_batch(f1.hidden, f2.hidden, labels);
  out.l_nce = l_nce(cb, form);
  out.total = out.l_sup + lambda * out.l_nce;
  if (with_grads) {
    Tensor dlogits = l_sup_backward(f1.logits, labels);
    Tensor danchors(cb.anchors.shape());
    Tensor dcandidates(cb.candidates.shape());
    l_nce_backward(cb, form, lambda, danchors, dcandidates);
    backward(model, f1, GradSeed{std::move(dlogits), std::move(danchors)});
    backward(model, f2, GradSeed{std::nullopt, std::move(dcandidates)});
  }
  return out;
}

// lambda = 0 reduces to plain supervised training: no transforms are drawn
// and no contrastive pairing is built.
inline LossBreakdown ilo_loss(ModelState& model, const Tensor& batch,
                              const std::vector<int>& labels, const TransformSet& transforms,
                              double lambda, Rng& rng, bool with_grads = false,
                              NceForm form = NceForm::equation) {
  if (lambda < 0.0) throw std::invalid_argument("ilo_loss: lambda must be non-negative");
  if (lambda == 0.0) {
    ForwardTrace f1 = forward(model, batch, Mode::train);
    LossBreakdown out;
    out.l_sup = l_sup(f1.logits, labels);
    out.total = out.l_sup;
    if (with_grads)
      backward(model, f1, GradSeed{l_sup_backward(f1.logits, labels), std::nullopt});
    return out;
  }
  Tensor transformed = transform_batch(transforms, batch, rng);
  return ilo_from_views(model, batch, transformed, labels, lambda, form, with_grads);
}

// Measurement counterpart of the contrastive term: identical draw and pairing
// structure, evaluated in eval mode through the plain exponential ratio
// exp(sim(a,pos)) / sum_neg exp(sim(a,neg)). Sims live in [-1,1], so the
// ratio needs no stabilization and the value must match l_nce on the same
// draws to near machine precision.
inline double invariance_objective(ModelState& model, const Tensor& batch,
                                   const std::vector<int>& labels,
                                   const TransformSet& transforms, Rng& rng) {
  detail::require_multilabel(labels);
  Tensor transformed = transform_batch(transforms, batch, rng);
  ForwardTrace f1 = forward(model, batch, Mode::eval);
  ForwardTrace f2 = forward(model, transformed, Mode::eval);
  const Tensor& anchors = f1.hidden;
  const Tensor& cands = f2.hidden;
  std::size_t b = anchors.rows(), d = anchors.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* a = anchors.data() + i * d;
    double psi_pos = std::exp(cosine_sim(a, cands.data() + i * d, d));
    double denom = 0.0;
    std::size_t negs = 0;
    for (std::size_t j = 0; j < b; ++j) {
      if (labels[j] == labels[i]) continue;
      denom += std::exp(cosine_sim(a, cands.data() + j * d, d));
      ++negs;
    }
    if (negs == 0)
      throw std::invalid_argument("invariance_objective: anchor without negatives");
    total += -std::log(psi_pos / denom);
  }
  return total / static_cast<double>(b);
}

}  // namespace invprune
