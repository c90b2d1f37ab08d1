#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "invprune/mask.hpp"
#include "invprune/rng.hpp"
#include "invprune/tensor.hpp"

namespace invprune {

enum class LayerKind { linear, batchnorm, relu };
enum class Mode { train, eval };

constexpr double kBatchnormEps = 1e-5;
constexpr double kBatchnormMomentum = 0.1;

struct LayerSpec {
  LayerKind kind = LayerKind::linear;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;  // linear only; equals in_dim otherwise
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::linear: return "linear";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
  }
  return "?";
}

// Flat layer sequence. Layers [0, encoder_end) form the encoder; the decoder
// is the remainder (a single classification linear in every built network).
struct NetworkSpec {
  std::vector<LayerSpec> layers;
  std::size_t encoder_end = 0;
  std::size_t output_classes = 0;

  std::size_t input_dim() const {
    if (layers.empty()) throw std::logic_error("NetworkSpec: empty network");
    return layers.front().in_dim;
  }

  // width of the activation entering layer `index`
  std::size_t width_before(std::size_t index) const {
    std::size_t w = input_dim();
    for (std::size_t i = 0; i < index && i < layers.size(); ++i)
      if (layers[i].kind == LayerKind::linear) w = layers[i].out_dim;
    return w;
  }

  std::size_t hidden_dim() const { return width_before(encoder_end); }

  std::size_t linear_count() const {
    std::size_t n = 0;
    for (const auto& l : layers)
      if (l.kind == LayerKind::linear) ++n;
    return n;
  }

  void validate() const {
    if (layers.empty()) throw std::invalid_argument("NetworkSpec: no layers");
    if (layers.back().kind != LayerKind::linear)
      throw std::invalid_argument("NetworkSpec: final layer must be linear");
    if (encoder_end >= layers.size())
      throw std::invalid_argument("NetworkSpec: encoder_end leaves no decoder");
    std::size_t w = layers.front().in_dim;
    if (w == 0) throw std::invalid_argument("NetworkSpec: zero input width");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.in_dim != w)
        throw std::invalid_argument("NetworkSpec: layer " + std::to_string(i) + " (" +
                                    layer_kind_name(l.kind) + ") expects width " +
                                    std::to_string(l.in_dim) + ", gets " + std::to_string(w));
      if (l.kind == LayerKind::linear) {
        if (l.out_dim == 0)
          throw std::invalid_argument("NetworkSpec: layer " + std::to_string(i) +
                                      " has zero output width");
        w = l.out_dim;
      }
    }
    if (output_classes != layers.back().out_dim)
      throw std::invalid_argument("NetworkSpec: output_classes does not match final layer");
  }
};

// batchnorm + ReLU precede every linear layer, including the first
inline NetworkSpec build_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                             std::size_t classes) {
  if (input_dim == 0) throw std::invalid_argument("build_mlp: zero input width");
  if (classes < 2) throw std::invalid_argument("build_mlp: need at least 2 classes");
  NetworkSpec spec;
  std::size_t cur = input_dim;
  auto block = [&](std::size_t out) {
    spec.layers.push_back({LayerKind::batchnorm, cur, cur});
    spec.layers.push_back({LayerKind::relu, cur, cur});
    spec.layers.push_back({LayerKind::linear, cur, out});
    cur = out;
  };
  for (std::size_t h : hidden) {
    if (h == 0) throw std::invalid_argument("build_mlp: zero hidden width");
    block(h);
  }
  block(classes);
  spec.encoder_end = spec.layers.size() - 1;
  spec.output_classes = classes;
  spec.validate();
  return spec;
}

// Width schedule drops by halves from alpha*s^2 to alpha*s^2/16, then a
// 64*alpha embedding layer. input_pixels is s^2; the first linear consumes
// channels*s^2 flattened values.
inline NetworkSpec build_mlp_vis(std::size_t alpha, std::size_t input_pixels,
                                 std::size_t classes, std::size_t channels = 3) {
  if (alpha == 0 || input_pixels == 0)
    throw std::invalid_argument("build_mlp_vis: alpha and input_pixels must be positive");
  std::size_t base = alpha * input_pixels;
  struct Div { std::size_t d; const char* layer; };
  for (Div dv : {Div{2, "hidden layer 2 (alpha*s^2/2)"}, Div{4, "hidden layer 4 (alpha*s^2/4)"},
                 Div{8, "hidden layer 6 (alpha*s^2/8)"}, Div{16, "hidden layer 8 (alpha*s^2/16)"}})
    if (base % dv.d != 0)
      throw std::invalid_argument(std::string("build_mlp_vis: alpha*s^2 = ") +
                                  std::to_string(base) + " does not divide evenly at " + dv.layer);
  std::vector<std::size_t> hidden = {base,     base / 2, base / 2, base / 4, base / 4,
                                     base / 8, base / 8, base / 16, 64 * alpha};
  return build_mlp(channels * input_pixels, hidden, classes);
}

inline NetworkSpec build_mlp_tab(std::size_t input_features, std::size_t classes) {
  if (input_features == 0)
    throw std::invalid_argument("build_mlp_tab: zero input features");
  return build_mlp(input_features, std::vector<std::size_t>(9, 512), classes);
}

// Parameters and buffers for one layer.
//   linear:    params = {weight[out x in], bias[out]}
//   batchnorm: params = {gamma, beta}, buffers = {running_mean, running_var}
struct LayerState {
  std::vector<Tensor> params;
  std::vector<Tensor> buffers;
};

struct ModelState {
  NetworkSpec spec;
  std::vector<LayerState> layers;
  std::vector<LayerState> init_snapshot;
  std::optional<PruneMask> mask;
  Mode mode = Mode::train;

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (std::size_t i = 0; i < layers.size(); ++i)
      for (std::size_t p = 0; p < layers[i].params.size(); ++p)
        fn(i, p, layers[i].params[p]);
  }

  void alloc_grads() {
    for_each_param([](std::size_t, std::size_t, Tensor& t) { t.alloc_grad(); });
  }
  void zero_grads() {
    for_each_param([](std::size_t, std::size_t, Tensor& t) {
      if (t.has_grad()) t.zero_grad();
    });
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers)
      for (const auto& p : l.params) n += p.size();
    return n;
  }
};

inline std::string param_name(const ModelState& model, std::size_t layer, std::size_t pidx) {
  const char* kind = layer_kind_name(model.spec.layers[layer].kind);
  const char* which =
      model.spec.layers[layer].kind == LayerKind::linear
          ? (pidx == 0 ? "weight" : "bias")
          : (pidx == 0 ? "gamma" : "beta");
  return "layer " + std::to_string(layer) + " " + kind + " " + which;
}

enum class InitScheme { kaiming, glorot };

namespace detail {

inline ModelState init_model(const NetworkSpec& spec, InitScheme scheme, std::uint64_t seed) {
  spec.validate();
  ModelState model;
  model.spec = spec;
  Rng rng(substream(seed, "init"));
  for (const auto& l : spec.layers) {
    LayerState st;
    if (l.kind == LayerKind::linear) {
      double var = scheme == InitScheme::kaiming
                       ? 2.0 / static_cast<double>(l.in_dim)
                       : 2.0 / static_cast<double>(l.in_dim + l.out_dim);
      double sd = std::sqrt(var);
      Tensor w({l.out_dim, l.in_dim});
      for (auto& v : w.values()) v = rng.normal(0.0, sd);
      st.params.push_back(std::move(w));
      st.params.emplace_back(Shape{l.out_dim}, 0.0);
    } else if (l.kind == LayerKind::batchnorm) {
      st.params.emplace_back(Shape{l.in_dim}, 1.0);  // gamma
      st.params.emplace_back(Shape{l.in_dim}, 0.0);  // beta
      st.buffers.emplace_back(Shape{l.in_dim}, 0.0);  // running mean
      st.buffers.emplace_back(Shape{l.in_dim}, 1.0);  // running var
    }
    model.layers.push_back(std::move(st));
  }
  model.init_snapshot = model.layers;
  model.alloc_grads();
  return model;
}

}  // namespace detail

inline ModelState kaiming_init(const NetworkSpec& spec, std::uint64_t seed) {
  return detail::init_model(spec, InitScheme::kaiming, seed);
}

inline ModelState glorot_init(const NetworkSpec& spec, std::uint64_t seed) {
  return detail::init_model(spec, InitScheme::glorot, seed);
}

struct ForwardTrace {
  Mode mode = Mode::train;
  std::vector<Tensor> inputs;                 // activation entering each layer
  std::vector<Tensor> bn_xhat;                // per layer; empty unless batchnorm
  std::vector<std::vector<double>> bn_invstd;
  Tensor hidden;                              // encoder output
  Tensor logits;
  std::size_t batch = 0;
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline Tensor linear_forward(const LayerState& st, const Tensor& x) {
  const Tensor& w = st.params[0];
  const Tensor& b = st.params[1];
  std::size_t bsz = x.rows(), in = x.cols(), out = w.dim(0);
  Tensor y({bsz, out});
  Eigen::Map<const RowMat> X(x.data(), bsz, in);
  Eigen::Map<const RowMat> W(w.data(), out, in);
  Eigen::Map<RowMat> Y(y.data(), bsz, out);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), out);
  return y;
}

inline Tensor bn_forward(LayerState& st, const Tensor& x, Mode mode, Tensor* xhat_out,
                         std::vector<double>* invstd_out) {
  std::size_t bsz = x.rows(), d = x.cols();
  const Tensor& gamma = st.params[0];
  const Tensor& beta = st.params[1];
  Tensor y({bsz, d});
  if (mode == Mode::train) {
    Tensor& rm = st.buffers[0];
    Tensor& rv = st.buffers[1];
    Tensor xhat({bsz, d});
    std::vector<double> invstd(d);
    double n = static_cast<double>(bsz);
    for (std::size_t j = 0; j < d; ++j) {
      double mu = 0.0;
      for (std::size_t i = 0; i < bsz; ++i) mu += x.at(i, j);
      mu /= n;
      double var = 0.0;
      for (std::size_t i = 0; i < bsz; ++i) {
        double c = x.at(i, j) - mu;
        var += c * c;
      }
      var /= n;
      double is = 1.0 / std::sqrt(var + kBatchnormEps);
      invstd[j] = is;
      for (std::size_t i = 0; i < bsz; ++i) {
        double xh = (x.at(i, j) - mu) * is;
        xhat.at(i, j) = xh;
        y.at(i, j) = gamma.at(j) * xh + beta.at(j);
      }
      // running stats track the unbiased variance estimate
      rm.at(j) = (1.0 - kBatchnormMomentum) * rm.at(j) + kBatchnormMomentum * mu;
      rv.at(j) = (1.0 - kBatchnormMomentum) * rv.at(j) +
                 kBatchnormMomentum * var * n / (n - 1.0);
    }
    if (xhat_out) *xhat_out = std::move(xhat);
    if (invstd_out) *invstd_out = std::move(invstd);
  } else {
    const Tensor& rm = st.buffers[0];
    const Tensor& rv = st.buffers[1];
    for (std::size_t j = 0; j < d; ++j) {
      double is = 1.0 / std::sqrt(rv.at(j) + kBatchnormEps);
      for (std::size_t i = 0; i < bsz; ++i)
        y.at(i, j) = gamma.at(j) * (x.at(i, j) - rm.at(j)) * is + beta.at(j);
    }
  }
  return y;
}

inline Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values())
    if (v < 0.0) v = 0.0;
  return y;
}

}  // namespace detail

inline ForwardTrace forward(ModelState& model, const Tensor& batch, Mode mode) {
  const NetworkSpec& spec = model.spec;
  if (batch.rank() != 2 || batch.cols() != spec.input_dim())
    throw std::invalid_argument("forward: batch shape " + shape_str(batch.shape()) +
                                " incompatible with input width " +
                                std::to_string(spec.input_dim()));
  if (batch.rows() == 0) throw std::invalid_argument("forward: empty batch");
  if (mode == Mode::train && batch.rows() == 1)
    for (const auto& l : spec.layers)
      if (l.kind == LayerKind::batchnorm)
        throw std::invalid_argument(
            "forward: batch size 1 in train mode leaves batchnorm variance undefined");

  ForwardTrace tr;
  tr.mode = mode;
  tr.batch = batch.rows();
  tr.bn_xhat.resize(spec.layers.size());
  tr.bn_invstd.resize(spec.layers.size());
  Tensor cur = batch;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    tr.inputs.push_back(cur);
    if (i == spec.encoder_end) tr.hidden = cur;
    switch (spec.layers[i].kind) {
      case LayerKind::linear:
        cur = detail::linear_forward(model.layers[i], cur);
        break;
      case LayerKind::batchnorm:
        cur = detail::bn_forward(model.layers[i], cur, mode,
                                 mode == Mode::train ? &tr.bn_xhat[i] : nullptr,
                                 mode == Mode::train ? &tr.bn_invstd[i] : nullptr);
        break;
      case LayerKind::relu:
        cur = detail::relu_forward(cur);
        break;
    }
  }
  if (spec.encoder_end == spec.layers.size()) tr.hidden = cur;
  tr.logits = std::move(cur);
  return tr;
}

struct GradSeed {
  std::optional<Tensor> dlogits;
  std::optional<Tensor> dhidden;
};

namespace detail {

inline Tensor linear_backward(ModelState& model, std::size_t li, const Tensor& x,
                              const Tensor& dy) {
  LayerState& st = model.layers[li];
  Tensor& w = st.params[0];
  Tensor& b = st.params[1];
  std::size_t bsz = x.rows(), in = x.cols(), out = w.dim(0);
  Eigen::Map<const RowMat> X(x.data(), bsz, in);
  Eigen::Map<const RowMat> DY(dy.data(), bsz, out);
  Eigen::Map<const RowMat> W(w.data(), out, in);
  Eigen::Map<RowMat> DW(w.grad().data(), out, in);
  DW.noalias() += DY.transpose() * X;
  Eigen::Map<Eigen::RowVectorXd> DB(b.grad().data(), out);
  DB += DY.colwise().sum();
  Tensor dx({bsz, in});
  Eigen::Map<RowMat> DX(dx.data(), bsz, in);
  DX.noalias() = DY * W;
  if (model.mask && li < model.mask->keep.size() && !model.mask->keep[li].empty()) {
    const auto& keep = model.mask->keep[li];
    auto& g = w.grad();
    for (std::size_t k = 0; k < keep.size(); ++k)
      if (!keep[k]) g[k] = 0.0;
  }
  return dx;
}

inline Tensor bn_backward(ModelState& model, std::size_t li, const ForwardTrace& tr,
                          const Tensor& dy) {
  LayerState& st = model.layers[li];
  Tensor& gamma = st.params[0];
  Tensor& beta = st.params[1];
  const Tensor& xhat = tr.bn_xhat[li];
  const std::vector<double>& invstd = tr.bn_invstd[li];
  std::size_t bsz = dy.rows(), d = dy.cols();
  double n = static_cast<double>(bsz);
  Tensor dx({bsz, d});
  for (std::size_t j = 0; j < d; ++j) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < bsz; ++i) {
      sum_dy += dy.at(i, j);
      sum_dy_xhat += dy.at(i, j) * xhat.at(i, j);
    }
    gamma.grad()[j] += sum_dy_xhat;
    beta.grad()[j] += sum_dy;
    double scale = gamma.at(j) * invstd[j];
    for (std::size_t i = 0; i < bsz; ++i)
      dx.at(i, j) = scale * (dy.at(i, j) - sum_dy / n - xhat.at(i, j) * sum_dy_xhat / n);
  }
  return dx;
}

inline Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t k = 0; k < dx.size(); ++k)
    if (x.at(k) <= 0.0) dx.at(k) = 0.0;
  return dx;
}

inline Tensor layer_backward(ModelState& model, std::size_t li, const ForwardTrace& tr,
                             const Tensor& dy) {
  switch (model.spec.layers[li].kind) {
    case LayerKind::linear:
      return linear_backward(model, li, tr.inputs[li], dy);
    case LayerKind::batchnorm:
      return bn_backward(model, li, tr, dy);
    case LayerKind::relu:
      return relu_backward(tr.inputs[li], dy);
  }
  throw std::logic_error("layer_backward: unknown layer kind");
}

}  // namespace detail

// Accumulates parameter gradients from a train-mode trace. dlogits seeds the
// full network; dhidden seeds the encoder output (both may be given, the
// decoder-propagated gradient and dhidden add at the boundary). Masked weight
// positions always receive gradient 0.
inline void backward(ModelState& model, const ForwardTrace& tr, const GradSeed& seed) {
  if (tr.mode != Mode::train)
    throw std::logic_error("backward: requires a forward trace recorded in train mode");
  if (!seed.dlogits && !seed.dhidden)
    throw std::invalid_argument("backward: no gradient seed given");
  const std::size_t L = model.spec.layers.size();
  const std::size_t boundary = model.spec.encoder_end;
  model.alloc_grads();

  Tensor dcur;
  if (seed.dlogits) {
    if (seed.dlogits->shape() != tr.logits.shape())
      throw std::invalid_argument("backward: dlogits shape mismatch");
    dcur = *seed.dlogits;
    for (std::size_t i = L; i-- > boundary;)
      dcur = detail::layer_backward(model, i, tr, dcur);
    if (seed.dhidden) {
      if (seed.dhidden->shape() != dcur.shape())
        throw std::invalid_argument("backward: dhidden shape mismatch");
      for (std::size_t k = 0; k < dcur.size(); ++k) dcur.at(k) += seed.dhidden->at(k);
    }
  } else {
    if (seed.dhidden->shape() != tr.hidden.shape())
      throw std::invalid_argument("backward: dhidden shape mismatch");
    dcur = *seed.dhidden;
  }
  for (std::size_t i = boundary; i-- > 0;)
    dcur = detail::layer_backward(model, i, tr, dcur);
}

}  // namespace invprune
