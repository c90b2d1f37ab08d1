#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "invprune/data.hpp"
#include "invprune/rng.hpp"
#include "invprune/tensor.hpp"

namespace invprune {

struct Image {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<double> px;  // c*h*w row-major

  Image() = default;
  Image(std::size_t c_, std::size_t h_, std::size_t w_, double fill = 0.0)
      : c(c_), h(h_), w(w_), px(c_ * h_ * w_, fill) {}

  double& at(std::size_t ch, std::size_t y, std::size_t x) { return px[(ch * h + y) * w + x]; }
  double at(std::size_t ch, std::size_t y, std::size_t x) const {
    return px[(ch * h + y) * w + x];
  }
};

namespace detail {

// Corner-aligned bilinear sampling; out == in is exactly the identity.
inline Image bilinear_resize(const Image& img, std::size_t oh, std::size_t ow) {
  Image out(img.c, oh, ow);
  for (std::size_t ch = 0; ch < img.c; ++ch)
    for (std::size_t y = 0; y < oh; ++y) {
      double sy = oh > 1 ? static_cast<double>(y) * static_cast<double>(img.h - 1) /
                               static_cast<double>(oh - 1)
                         : 0.0;
      std::size_t y0 = static_cast<std::size_t>(sy);
      std::size_t y1 = std::min(y0 + 1, img.h - 1);
      double fy = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < ow; ++x) {
        double sx = ow > 1 ? static_cast<double>(x) * static_cast<double>(img.w - 1) /
                                 static_cast<double>(ow - 1)
                           : 0.0;
        std::size_t x0 = static_cast<std::size_t>(sx);
        std::size_t x1 = std::min(x0 + 1, img.w - 1);
        double fx = sx - static_cast<double>(x0);
        double top = (1.0 - fx) * img.at(ch, y0, x0) + fx * img.at(ch, y0, x1);
        double bot = (1.0 - fx) * img.at(ch, y1, x0) + fx * img.at(ch, y1, x1);
        out.at(ch, y, x) = (1.0 - fy) * top + fy * bot;
      }
    }
  return out;
}

constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;

}  // namespace detail

// Square crop of the given side at (top, left), resized back to the source
// size. side == full size with offset 0 is the identity.
inline Image resize_crop_at(const Image& img, std::size_t side, std::size_t top,
                            std::size_t left) {
  if (img.h != img.w) throw std::invalid_argument("resize_crop: image must be square");
  if (side < 1) throw std::invalid_argument("resize_crop: crop smaller than one pixel");
  if (side > img.h || top + side > img.h || left + side > img.w)
    throw std::invalid_argument("resize_crop: crop window outside image");
  Image crop(img.c, side, side);
  for (std::size_t ch = 0; ch < img.c; ++ch)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x)
        crop.at(ch, y, x) = img.at(ch, top + y, left + x);
  return detail::bilinear_resize(crop, img.h, img.w);
}

inline Image resize_crop(const Image& img, double scale_lo, double scale_hi, Rng& rng) {
  if (!(scale_lo > 0.0) || scale_lo > scale_hi || scale_hi > 1.0)
    throw std::invalid_argument("resize_crop: scale range must satisfy 0 < lo <= hi <= 1");
  double area = rng.uniform(scale_lo, scale_hi);
  std::size_t side =
      static_cast<std::size_t>(std::floor(static_cast<double>(img.h) * std::sqrt(area)));
  if (side < 1) throw std::invalid_argument("resize_crop: sampled crop smaller than one pixel");
  side = std::min(side, img.h);
  std::size_t top = rng.below(img.h - side + 1);
  std::size_t left = rng.below(img.w - side + 1);
  return resize_crop_at(img, side, top, left);
}

inline Image flip_image(const Image& img) {
  Image out(img.c, img.h, img.w);
  for (std::size_t ch = 0; ch < img.c; ++ch)
    for (std::size_t y = 0; y < img.h; ++y)
      for (std::size_t x = 0; x < img.w; ++x) out.at(ch, y, x) = img.at(ch, y, img.w - 1 - x);
  return out;
}

inline Image horizontal_flip(const Image& img, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("horizontal_flip: p outside [0,1]");
  return rng.uniform() < p ? flip_image(img) : img;
}

inline Image to_grayscale(const Image& img) {
  if (img.c == 1) return img;
  if (img.c != 3) throw std::invalid_argument("grayscale: needs 1 or 3 channels");
  Image out(img.c, img.h, img.w);
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x) {
      double luma = detail::kLumaR * img.at(0, y, x) + detail::kLumaG * img.at(1, y, x) +
                    detail::kLumaB * img.at(2, y, x);
      for (std::size_t ch = 0; ch < 3; ++ch) out.at(ch, y, x) = luma;
    }
  return out;
}

inline Image grayscale(const Image& img, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("grayscale: p outside [0,1]");
  return rng.uniform() < p ? to_grayscale(img) : img;
}

// brightness, contrast, saturation multipliers applied in that order; the
// contrast pivot is the image's mean luma, the saturation blend target the
// per-pixel luma. Output clamped to [0,1] once at the end.
inline Image apply_color_jitter(const Image& img, double brightness, double contrast,
                                double saturation) {
  if (img.c != 3 && img.c != 1)
    throw std::invalid_argument("color_jitter: needs 1 or 3 channels");
  Image out = img;
  for (auto& v : out.px) v *= brightness;
  double pivot = 0.0;
  if (img.c == 3) {
    for (std::size_t y = 0; y < img.h; ++y)
      for (std::size_t x = 0; x < img.w; ++x)
        pivot += detail::kLumaR * out.at(0, y, x) + detail::kLumaG * out.at(1, y, x) +
                 detail::kLumaB * out.at(2, y, x);
    pivot /= static_cast<double>(img.h * img.w);
  } else {
    for (double v : out.px) pivot += v;
    pivot /= static_cast<double>(out.px.size());
  }
  for (auto& v : out.px) v = (v - pivot) * contrast + pivot;
  if (img.c == 3) {
    for (std::size_t y = 0; y < img.h; ++y)
      for (std::size_t x = 0; x < img.w; ++x) {
        double luma = detail::kLumaR * out.at(0, y, x) + detail::kLumaG * out.at(1, y, x) +
                      detail::kLumaB * out.at(2, y, x);
        for (std::size_t ch = 0; ch < 3; ++ch)
          out.at(ch, y, x) = luma + (out.at(ch, y, x) - luma) * saturation;
      }
  }
  for (auto& v : out.px) v = std::min(1.0, std::max(0.0, v));
  return out;
}

inline Image color_jitter(const Image& img, double strength, Rng& rng) {
  if (strength < 0.0 || strength >= 1.0)
    throw std::invalid_argument("color_jitter: strength must lie in [0,1)");
  double b = rng.uniform(1.0 - strength, 1.0 + strength);
  double c = rng.uniform(1.0 - strength, 1.0 + strength);
  double s = rng.uniform(1.0 - strength, 1.0 + strength);
  return apply_color_jitter(img, b, c, s);
}

// Resamples ceil(fraction * F) distinct columns from their empirical pools.
inline std::vector<double> feature_corrupt(const std::vector<double>& row, double fraction,
                                           const EmpiricalMarginal& marginals, Rng& rng) {
  if (fraction < 0.0 || fraction > 1.0)
    throw std::invalid_argument("feature_corrupt: fraction outside [0,1]");
  if (row.size() != marginals.column_count())
    throw std::invalid_argument("feature_corrupt: row width " + std::to_string(row.size()) +
                                " vs " + std::to_string(marginals.column_count()) + " pools");
  std::size_t f = row.size();
  std::size_t k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(f)));
  std::vector<double> out = row;
  if (k == 0) return out;
  std::vector<std::size_t> cols = sample_distinct(f, k, rng);
  for (std::size_t col : cols) {
    const auto& pool = marginals.pools[col];
    out[col] = pool[rng.below(pool.size())];
  }
  return out;
}

enum class TransformDomain { image, tabular };

// Family of label-preserving input transforms. sample_transform freezes one
// concrete member g; g applied twice to the same input gives the same output.
struct TransformSet {
  TransformDomain domain = TransformDomain::tabular;

  // image members
  double crop_lo = 0.2, crop_hi = 1.0;
  double flip_p = 0.5;
  double jitter_strength = 0.4;
  double gray_p = 0.2;
  std::size_t img_c = 0, img_h = 0, img_w = 0;

  // tabular member
  double corrupt_fraction = 0.6;
  std::shared_ptr<const EmpiricalMarginal> marginals;

  void validate() const {
    if (domain == TransformDomain::image) {
      if (!(crop_lo > 0.0) || crop_lo > crop_hi || crop_hi > 1.0)
        throw std::invalid_argument("TransformSet: crop scale range invalid");
      if (flip_p < 0.0 || flip_p > 1.0 || gray_p < 0.0 || gray_p > 1.0)
        throw std::invalid_argument("TransformSet: probability outside [0,1]");
      if (jitter_strength < 0.0 || jitter_strength >= 1.0)
        throw std::invalid_argument("TransformSet: jitter strength must lie in [0,1)");
      if (img_c == 0 || img_h == 0 || img_w == 0)
        throw std::invalid_argument("TransformSet: image shape unset");
      if (img_h != img_w) throw std::invalid_argument("TransformSet: images must be square");
    } else {
      if (corrupt_fraction < 0.0 || corrupt_fraction > 1.0)
        throw std::invalid_argument("TransformSet: corrupt fraction outside [0,1]");
      if (!marginals) throw std::invalid_argument("TransformSet: marginals unset");
    }
  }
};

// One frozen transform draw. Image crops store the area fraction and a
// fractional position so the same g maps any same-shape input
// deterministically.
struct TransformParams {
  TransformDomain domain = TransformDomain::tabular;

  double crop_area = 1.0;
  double pos_u = 0.0, pos_v = 0.0;
  bool flip = false;
  double jb = 1.0, jc = 1.0, js = 1.0;
  bool gray = false;

  std::vector<std::size_t> columns;
  std::vector<double> replacement;
};

inline TransformParams sample_transform(const TransformSet& set, Rng& rng) {
  set.validate();
  TransformParams g;
  g.domain = set.domain;
  if (set.domain == TransformDomain::image) {
    g.crop_area = rng.uniform(set.crop_lo, set.crop_hi);
    g.pos_u = rng.uniform();
    g.pos_v = rng.uniform();
    g.flip = rng.uniform() < set.flip_p;
    if (set.jitter_strength > 0.0) {
      g.jb = rng.uniform(1.0 - set.jitter_strength, 1.0 + set.jitter_strength);
      g.jc = rng.uniform(1.0 - set.jitter_strength, 1.0 + set.jitter_strength);
      g.js = rng.uniform(1.0 - set.jitter_strength, 1.0 + set.jitter_strength);
    }
    g.gray = rng.uniform() < set.gray_p;
  } else {
    const EmpiricalMarginal& m = *set.marginals;
    std::size_t f = m.column_count();
    std::size_t k =
        static_cast<std::size_t>(std::ceil(set.corrupt_fraction * static_cast<double>(f)));
    if (k > 0) {
      g.columns = sample_distinct(f, k, rng);
      for (std::size_t col : g.columns) {
        const auto& pool = m.pools[col];
        g.replacement.push_back(pool[rng.below(pool.size())]);
      }
    }
  }
  return g;
}

inline Image apply_transform(const TransformParams& g, const Image& img) {
  if (g.domain != TransformDomain::image)
    throw std::invalid_argument("apply_transform: tabular transform given an image");
  std::size_t side =
      static_cast<std::size_t>(std::floor(static_cast<double>(img.h) * std::sqrt(g.crop_area)));
  if (side < 1)
    throw std::invalid_argument("apply_transform: crop smaller than one pixel");
  side = std::min(side, img.h);
  std::size_t top = static_cast<std::size_t>(g.pos_u * static_cast<double>(img.h - side + 1));
  std::size_t left = static_cast<std::size_t>(g.pos_v * static_cast<double>(img.w - side + 1));
  top = std::min(top, img.h - side);
  left = std::min(left, img.w - side);
  Image out = resize_crop_at(img, side, top, left);
  if (g.flip) out = flip_image(out);
  if (g.jb != 1.0 || g.jc != 1.0 || g.js != 1.0)
    out = apply_color_jitter(out, g.jb, g.jc, g.js);
  if (g.gray) out = to_grayscale(out);
  return out;
}

inline std::vector<double> apply_transform_row(const TransformParams& g,
                                               const std::vector<double>& row) {
  if (g.domain != TransformDomain::tabular)
    throw std::invalid_argument("apply_transform_row: image transform given a feature row");
  std::vector<double> out = row;
  for (std::size_t i = 0; i < g.columns.size(); ++i) {
    if (g.columns[i] >= out.size())
      throw std::invalid_argument("apply_transform_row: column index outside row");
    out[g.columns[i]] = g.replacement[i];
  }
  return out;
}

// One freshly sampled g per row, drawn in row order.
inline Tensor transform_batch(const TransformSet& set, const Tensor& batch, Rng& rng) {
  set.validate();
  Tensor out(batch.shape());
  std::size_t bsz = batch.rows(), f = batch.cols();
  if (set.domain == TransformDomain::tabular) {
    std::vector<double> row(f);
    for (std::size_t i = 0; i < bsz; ++i) {
      for (std::size_t j = 0; j < f; ++j) row[j] = batch.at(i, j);
      TransformParams g = sample_transform(set, rng);
      std::vector<double> tr = apply_transform_row(g, row);
      for (std::size_t j = 0; j < f; ++j) out.at(i, j) = tr[j];
    }
  } else {
    if (f != set.img_c * set.img_h * set.img_w)
      throw std::invalid_argument("transform_batch: row width does not match image shape");
    for (std::size_t i = 0; i < bsz; ++i) {
      Image img(set.img_c, set.img_h, set.img_w);
      for (std::size_t j = 0; j < f; ++j) img.px[j] = batch.at(i, j);
      TransformParams g = sample_transform(set, rng);
      Image tr = apply_transform(g, img);
      for (std::size_t j = 0; j < f; ++j) out.at(i, j) = tr.px[j];
    }
  }
  return out;
}

}  // namespace invprune
