#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "invprune/loss.hpp"
#include "invprune/network.hpp"
#include "invprune/rng.hpp"
#include "invprune/tensor.hpp"

using namespace invprune;

TEST_CASE("tensor shape bookkeeping", "[tensor_network]") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.rank() == 2);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 1.5);
  t.at(0, 1) = -4.0;
  CHECK(t.at(1) == -4.0);
  CHECK_THROWS_AS(t.at(2, 0), std::out_of_range);
  CHECK_THROWS_AS(t.at(0, 3), std::out_of_range);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0, 2.0, 3.0}), std::invalid_argument);

  CHECK_FALSE(t.has_grad());
  CHECK_THROWS_AS(t.grad(), std::logic_error);
  t.alloc_grad();
  REQUIRE(t.has_grad());
  t.grad()[0] = 9.0;
  t.zero_grad();
  CHECK(t.grad()[0] == 0.0);
  t.fill(2.0);
  CHECK(t.at(1, 1) == 2.0);
}

TEST_CASE("mlp builder interleaves norm, relu, linear", "[tensor_network]") {
  NetworkSpec spec = build_mlp(4, {8, 6}, 3);
  REQUIRE(spec.layers.size() == 9);
  for (std::size_t i = 0; i < 9; i += 3) {
    CHECK(spec.layers[i].kind == LayerKind::batchnorm);
    CHECK(spec.layers[i + 1].kind == LayerKind::relu);
    CHECK(spec.layers[i + 2].kind == LayerKind::linear);
  }
  CHECK(spec.encoder_end == 8);
  CHECK(spec.output_classes == 3);
  CHECK(spec.input_dim() == 4);
  CHECK(spec.hidden_dim() == 6);
  CHECK(spec.linear_count() == 3);

  ModelState model = kaiming_init(spec, 1);
  CHECK(model.param_count() == 151);  // 8 + 40 + 16 + 54 + 12 + 21

  CHECK_THROWS_AS(build_mlp(0, {4}, 2), std::invalid_argument);
  CHECK_THROWS_AS(build_mlp(4, {0}, 2), std::invalid_argument);
  CHECK_THROWS_AS(build_mlp(4, {4}, 1), std::invalid_argument);
}

TEST_CASE("vision mlp halves widths down to the embedding", "[tensor_network]") {
  NetworkSpec spec = build_mlp_vis(16, 1024, 10, 3);
  std::vector<std::size_t> widths;
  for (const auto& l : spec.layers)
    if (l.kind == LayerKind::linear) widths.push_back(l.out_dim);
  std::vector<std::size_t> expect = {16384, 8192, 8192, 4096, 4096,
                                     2048,  2048, 1024, 1024, 10};
  CHECK(widths == expect);
  CHECK(spec.input_dim() == 3072);
  CHECK(spec.hidden_dim() == 1024);

  CHECK_THROWS_AS(build_mlp_vis(1, 24, 2), std::invalid_argument);
  CHECK_THROWS_AS(build_mlp_vis(0, 1024, 2), std::invalid_argument);
}

TEST_CASE("tabular mlp stacks nine blocks of 512", "[tensor_network]") {
  NetworkSpec spec = build_mlp_tab(30, 2);
  CHECK(spec.linear_count() == 10);
  CHECK(spec.hidden_dim() == 512);
  CHECK(spec.input_dim() == 30);
  CHECK_THROWS_AS(build_mlp_tab(0, 2), std::invalid_argument);
}

TEST_CASE("spec validation rejects inconsistent wiring", "[tensor_network]") {
  NetworkSpec spec = build_mlp(4, {8}, 2);
  spec.encoder_end = spec.layers.size();
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

  NetworkSpec bad = build_mlp(4, {8}, 2);
  bad.layers[3].in_dim = 5;  // batchnorm fed width 8
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  NetworkSpec wrongc = build_mlp(4, {8}, 2);
  wrongc.output_classes = 3;
  CHECK_THROWS_AS(wrongc.validate(), std::invalid_argument);
}

TEST_CASE("initializers scale with fan-in and snapshot the draw", "[tensor_network]") {
  NetworkSpec spec = build_mlp(100, {50}, 2);
  ModelState k = kaiming_init(spec, 3);
  ModelState g = glorot_init(spec, 3);

  auto stddev_of = [](const Tensor& w) {
    double sq = 0.0;
    for (double v : w.values()) sq += v * v;
    return std::sqrt(sq / static_cast<double>(w.size()));
  };
  // layer 2 linear: fan_in 100, fan_out 50
  double sk = stddev_of(k.layers[2].params[0]);
  double sg = stddev_of(g.layers[2].params[0]);
  CHECK(std::abs(sk - std::sqrt(2.0 / 100.0)) < 0.02);
  CHECK(std::abs(sg - std::sqrt(2.0 / 150.0)) < 0.02);

  for (double b : k.layers[2].params[1].values()) CHECK(b == 0.0);
  for (double gm : k.layers[0].params[0].values()) CHECK(gm == 1.0);
  for (double bt : k.layers[0].params[1].values()) CHECK(bt == 0.0);

  REQUIRE(k.init_snapshot.size() == k.layers.size());
  CHECK(k.init_snapshot[2].params[0].values() == k.layers[2].params[0].values());

  ModelState k2 = kaiming_init(spec, 3);
  CHECK(k2.layers[2].params[0].values() == k.layers[2].params[0].values());
  ModelState k3 = kaiming_init(spec, 4);
  CHECK(k3.layers[2].params[0].values() != k.layers[2].params[0].values());
}

TEST_CASE("linear layer computes x W^T + b", "[tensor_network]") {
  LayerState st;
  st.params.push_back(Tensor({2, 2}, std::vector<double>{1.0, 2.0, 3.0, 4.0}));
  st.params.push_back(Tensor({2}, std::vector<double>{1.0, -1.0}));
  Tensor x({1, 2}, std::vector<double>{1.0, 1.0});
  Tensor y = detail::linear_forward(st, x);
  CHECK(y.at(0, 0) == 4.0);
  CHECK(y.at(0, 1) == 6.0);
}

TEST_CASE("batchnorm normalizes with batch stats and tracks running buffers",
          "[tensor_network]") {
  NetworkSpec spec = build_mlp(1, {}, 2);
  ModelState model = kaiming_init(spec, 1);
  Tensor x({3, 1}, std::vector<double>{1.0, 2.0, 3.0});
  ForwardTrace tr = forward(model, x, Mode::train);

  // activation entering the relu is the normalized column
  double invstd = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  const Tensor& bn_out = tr.inputs[1];
  CHECK(bn_out.at(0, 0) == Catch::Approx(-invstd).epsilon(1e-12));
  CHECK(bn_out.at(1, 0) == Catch::Approx(0.0).margin(1e-12));
  CHECK(bn_out.at(2, 0) == Catch::Approx(invstd).epsilon(1e-12));

  // momentum 0.1 against the fresh (0, 1) buffers; variance tracked unbiased
  CHECK(model.layers[0].buffers[0].at(0) == Catch::Approx(0.2).epsilon(1e-12));
  CHECK(model.layers[0].buffers[1].at(0) == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("batchnorm eval path reads the running buffers", "[tensor_network]") {
  NetworkSpec spec = build_mlp(1, {}, 2);
  ModelState model = kaiming_init(spec, 1);
  Tensor x({2, 1}, std::vector<double>{4.0, -4.0});
  ForwardTrace tr = forward(model, x, Mode::eval);
  double scale = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(tr.inputs[1].at(0, 0) == Catch::Approx(4.0 * scale).epsilon(1e-12));
  CHECK(tr.inputs[1].at(1, 0) == Catch::Approx(-4.0 * scale).epsilon(1e-12));
  // eval passes must not move the buffers
  CHECK(model.layers[0].buffers[0].at(0) == 0.0);
  CHECK(model.layers[0].buffers[1].at(0) == 1.0);
}

TEST_CASE("forward rejects malformed batches", "[tensor_network]") {
  NetworkSpec spec = build_mlp(4, {8}, 2);
  ModelState model = kaiming_init(spec, 1);
  Tensor wrong({2, 3});
  CHECK_THROWS_AS(forward(model, wrong, Mode::train), std::invalid_argument);
  Tensor empty({0, 4});
  CHECK_THROWS_AS(forward(model, empty, Mode::train), std::invalid_argument);
  Tensor single({1, 4}, 0.5);
  CHECK_THROWS_AS(forward(model, single, Mode::train), std::invalid_argument);
  CHECK_NOTHROW(forward(model, single, Mode::eval));
}

TEST_CASE("trace records the encoder boundary", "[tensor_network]") {
  NetworkSpec spec = build_mlp(3, {5}, 2);
  ModelState model = kaiming_init(spec, 2);
  Rng rng(8);
  Tensor x({4, 3});
  for (auto& v : x.values()) v = rng.normal();
  ForwardTrace tr = forward(model, x, Mode::train);
  CHECK(tr.hidden.rows() == 4);
  CHECK(tr.hidden.cols() == 5);  // width entering the final linear
  CHECK(tr.logits.rows() == 4);
  CHECK(tr.logits.cols() == 2);
  // hidden is exactly the decoder input
  CHECK(tr.hidden.values() == tr.inputs[spec.encoder_end].values());
}

namespace {

std::vector<double> collect_grads(ModelState& model) {
  std::vector<double> out;
  model.for_each_param([&](std::size_t, std::size_t, Tensor& t) {
    for (double g : t.grad()) out.push_back(g);
  });
  return out;
}

}  // namespace

TEST_CASE("analytic gradients match finite differences", "[tensor_network]") {
  NetworkSpec spec = build_mlp(3, {4}, 2);
  ModelState model = kaiming_init(spec, 5);
  Rng rng(21);
  Tensor x({5, 3});
  for (auto& v : x.values()) v = rng.normal();
  std::vector<int> y = {0, 1, 0, 1, 1};

  model.zero_grads();
  ForwardTrace tr = forward(model, x, Mode::train);
  backward(model, tr, GradSeed{l_sup_backward(tr.logits, y), std::nullopt});

  auto loss_now = [&]() {
    ForwardTrace t = forward(model, x, Mode::train);
    return l_sup(t.logits, y);
  };
  double worst = 0.0;
  model.for_each_param([&](std::size_t li, std::size_t pi, Tensor& t) {
    for (std::size_t k = 0; k < t.size(); ++k) {
      double keep = t.at(k);
      double h = 1e-6 * std::max(1.0, std::abs(keep));
      t.at(k) = keep + h;
      double up = loss_now();
      t.at(k) = keep - h;
      double dn = loss_now();
      t.at(k) = keep;
      double fd = (up - dn) / (2.0 * h);
      double an = model.layers[li].params[pi].grad()[k];
      double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
      worst = std::max(worst, rel);
    }
  });
  CHECK(worst < 1e-6);
}

TEST_CASE("hidden-seeded backward leaves the decoder untouched", "[tensor_network]") {
  NetworkSpec spec = build_mlp(3, {4}, 2);
  ModelState model = kaiming_init(spec, 6);
  Rng rng(22);
  Tensor x({4, 3});
  for (auto& v : x.values()) v = rng.normal();

  model.zero_grads();
  ForwardTrace tr = forward(model, x, Mode::train);
  Tensor dh(tr.hidden.shape(), 1.0);
  backward(model, tr, GradSeed{std::nullopt, dh});

  const std::size_t dec = spec.layers.size() - 1;
  for (double g : model.layers[dec].params[0].grad()) CHECK(g == 0.0);
  for (double g : model.layers[dec].params[1].grad()) CHECK(g == 0.0);
  double enc_mass = 0.0;
  for (double g : model.layers[2].params[0].grad()) enc_mass += std::abs(g);
  CHECK(enc_mass > 0.0);
}

TEST_CASE("dual-seeded backward adds at the encoder boundary", "[tensor_network]") {
  NetworkSpec spec = build_mlp(3, {4}, 2);
  ModelState model = kaiming_init(spec, 7);
  Rng rng(23);
  Tensor x({4, 3});
  for (auto& v : x.values()) v = rng.normal();
  std::vector<int> y = {0, 1, 1, 0};

  ForwardTrace tr = forward(model, x, Mode::train);
  Tensor dl = l_sup_backward(tr.logits, y);
  Tensor dh(tr.hidden.shape());
  for (auto& v : dh.values()) v = rng.normal();

  model.zero_grads();
  backward(model, tr, GradSeed{dl, std::nullopt});
  std::vector<double> g_logits = collect_grads(model);
  model.zero_grads();
  backward(model, tr, GradSeed{std::nullopt, dh});
  std::vector<double> g_hidden = collect_grads(model);
  model.zero_grads();
  backward(model, tr, GradSeed{dl, dh});
  std::vector<double> g_both = collect_grads(model);

  REQUIRE(g_both.size() == g_logits.size());
  for (std::size_t i = 0; i < g_both.size(); ++i)
    CHECK(g_both[i] == Catch::Approx(g_logits[i] + g_hidden[i]).margin(1e-12));
}

TEST_CASE("backward rejects mismatched seeds and eval traces", "[tensor_network]") {
  NetworkSpec spec = build_mlp(3, {4}, 2);
  ModelState model = kaiming_init(spec, 8);
  Tensor x({4, 3}, 0.5);
  ForwardTrace tr = forward(model, x, Mode::train);
  CHECK_THROWS_AS(backward(model, tr, GradSeed{}), std::invalid_argument);
  Tensor wrong({4, 3}, 1.0);
  CHECK_THROWS_AS(backward(model, tr, GradSeed{wrong, std::nullopt}), std::invalid_argument);
  ForwardTrace ev = forward(model, x, Mode::eval);
  Tensor dl(ev.logits.shape(), 1.0);
  CHECK_THROWS_AS(backward(model, ev, GradSeed{dl, std::nullopt}), std::logic_error);
}
