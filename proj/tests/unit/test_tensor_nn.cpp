#include <cmath>
#include <string>

#include "doctest.h"
#include "pfedlvm/nn.hpp"
#include "pfedlvm/wire.hpp"
#include "support.hpp"

using namespace pfedlvm;
using testing::numeric_grad;
using testing::random_tensor;
using testing::rel_error;

namespace {

std::string error_text(auto&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("dense with zero weights broadcasts the bias") {
  ModelParams m = zero_model({LayerSpec::dense(3, 2)});
  m.biases[0] = Tensor({2}, {0.5, -1.25});
  Rng rng(1);
  const Tensor out = infer(m, random_tensor({4, 3}, rng));
  REQUIRE(out.shape() == Shape{4, 2});
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(out[r * 2] == 0.5);
    CHECK(out[r * 2 + 1] == -1.25);
  }
}

TEST_CASE("center-only conv kernel is the identity") {
  ModelParams m = zero_model({LayerSpec::conv3x3(1, 1)});
  m.weights[0][4] = 1.0;
  Rng rng(2);
  const Tensor x = random_tensor({2, 1, 5, 4}, rng);
  CHECK(infer(m, x).identical(x));
}

TEST_CASE("conv matches a brute-force loop") {
  Rng rng(3);
  const Tensor x = random_tensor({2, 3, 5, 6}, rng);
  const Tensor w = random_tensor({4, 3, 3, 3}, rng);
  const Tensor b = random_tensor({4}, rng);
  const Tensor y = conv3x3_forward(x, w, b);
  const Tensor ref = testing::ref_conv(x, w, b);
  double worst = 0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 6; ++j) worst = std::max(worst, std::abs(y.at4(n, o, i, j) - ref.at4(n, o, i, j)));
  CHECK(worst < 1e-12);
}

TEST_CASE("seeded two-layer net equals a straight-line oracle") {
  const ModelParams m = init_model({LayerSpec::dense(3, 5), LayerSpec::relu(5), LayerSpec::dense(5, 2)}, 42);
  Rng rng(4);
  const Tensor x = random_tensor({3, 3}, rng);
  const Tensor out = infer(m, x);
  const Tensor &w0 = m.weights[0], &b0 = m.biases[0], &w2 = m.weights[2], &b2 = m.biases[2];
  for (std::size_t r = 0; r < 3; ++r) {
    double h[5];
    for (std::size_t k = 0; k < 5; ++k) {
      double a = b0[k];
      for (std::size_t i = 0; i < 3; ++i) a += w0[k * 3 + i] * x[r * 3 + i];
      h[k] = a > 0 ? a : 0;
    }
    for (std::size_t o = 0; o < 2; ++o) {
      double a = b2[o];
      for (std::size_t k = 0; k < 5; ++k) a += w2[o * 5 + k] * h[k];
      CHECK(out[r * 2 + o] == doctest::Approx(a).epsilon(1e-14));
    }
  }
}

TEST_CASE("mse loss") {
  SUBCASE("identical inputs") {
    Rng rng(5);
    const Tensor p = random_tensor({3, 4}, rng);
    const LossResult r = mse_loss(p, p);
    CHECK(r.loss == 0.0);
    for (double g : r.grad.data()) CHECK(g == 0.0);
  }
  SUBCASE("hand example") {
    const LossResult r = mse_loss(Tensor({2}, {1, 3}), Tensor({2}, {0, 1}));
    CHECK(r.loss == 2.5);
    CHECK(r.grad[0] == 1.0);
    CHECK(r.grad[1] == 2.0);
  }
  SUBCASE("finite differences and symmetry") {
    Rng rng(6);
    Tensor p = random_tensor({3, 4}, rng);
    const Tensor t = random_tensor({3, 4}, rng);
    const LossResult r = mse_loss(p, t);
    CHECK(r.loss == mse_loss(t, p).loss);
    CHECK(r.loss >= 0);
    const auto num = numeric_grad(p, [&] { return mse_loss(p, t).loss; });
    CHECK(rel_error(r.grad.storage(), num) < 1e-8);
  }
  CHECK_THROWS_AS(mse_loss(Tensor({2}), Tensor({3})), ConfigError);
}

TEST_CASE("cross entropy") {
  SUBCASE("uniform logits give ln C") {
    const LossResult r = cross_entropy_loss(Tensor({1, 4, 2, 2}), Tensor({1, 2, 2}, {0, 1, 2, 3}));
    CHECK(r.loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  }
  SUBCASE("saturated correct class") {
    Tensor logits({1, 4, 1, 1});
    logits[2] = 50.0;
    CHECK(cross_entropy_loss(logits, Tensor({1, 1, 1}, 2.0)).loss < 1e-20);
  }
  SUBCASE("finite differences") {
    Rng rng(7);
    Tensor logits = random_tensor({2, 4, 3, 3}, rng, 2.0);
    Tensor labels({2, 3, 3});
    for (auto& v : labels.storage()) v = static_cast<double>(rng.below(4));
    const LossResult r = cross_entropy_loss(logits, labels);
    const auto num = numeric_grad(logits, [&] { return cross_entropy_loss(logits, labels).loss; });
    CHECK(rel_error(r.grad.storage(), num) < 1e-6);
  }
  SUBCASE("out-of-range label names the pixel") {
    Tensor labels({1, 2, 2});
    labels[3] = 4.0;
    const std::string msg = error_text([&] { cross_entropy_loss(Tensor({1, 4, 2, 2}), labels); });
    CHECK(msg.find("label") != std::string::npos);
    CHECK(msg.find("n=0, h=1, w=1") != std::string::npos);
  }
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(8);
  const ModelParams base = init_model({LayerSpec::conv3x3(2, 3), LayerSpec::relu(3), LayerSpec::dense(3, 2)}, 9);
  Tensor x = random_tensor({2, 2, 4, 3}, rng);
  const Tensor target = random_tensor({2, 2, 4, 3}, rng);
  ModelParams m = base;
  const auto loss = [&] { return mse_loss(infer(m, x), target).loss; };
  const ForwardResult fw = forward(m, x);
  const BackwardResult bw = backward(m, fw.cache, mse_loss(fw.output, target).grad);
  CHECK(rel_error(bw.input_grad.storage(), numeric_grad(x, loss)) < 1e-6);
  auto params = m.mutable_parameters();
  for (std::size_t t = 0; t < params.size(); ++t) {
    CAPTURE(t);
    CHECK(rel_error(bw.grads.tensors[t].storage(), numeric_grad(*params[t], loss)) < 1e-6);
  }
}

TEST_CASE("pool and upsample backward are adjoints") {
  Rng rng(10);
  const Tensor x = random_tensor({2, 3, 4, 6}, rng);
  const Tensor dy = random_tensor({2, 3, 2, 3}, rng);
  const Tensor up = random_tensor({2, 3, 4, 6}, rng);
  auto dot = [](const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
  };
  CHECK(dot(avg_pool2(x), dy) == doctest::Approx(dot(x, avg_pool2_backward(dy))).epsilon(1e-12));
  CHECK(dot(upsample2_nearest(dy), up) == doctest::Approx(dot(dy, upsample2_nearest_backward(up))).epsilon(1e-12));
  CHECK_THROWS_AS(avg_pool2(Tensor({1, 1, 3, 4})), ConfigError);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient without decay leaves parameters unchanged") {
    ModelParams m = init_model({LayerSpec::dense(2, 2)}, 11);
    const ModelParams before = m;
    AdamState s = AdamState::for_model(m, AdamConfig{.weight_decay = 0.0});
    adam_step(m, Gradients::zeros_like(m), s);
    CHECK(m.identical(before));
  }
  SUBCASE("single scalar step by hand") {
    ModelParams m = zero_model({LayerSpec::dense(1, 1)});
    m.weights[0][0] = 1.0;
    AdamState s = AdamState::for_model(m);
    Gradients g = Gradients::zeros_like(m);
    g.tensors[0][0] = 1.0;
    adam_step(m, g, s);
    // g' = g + 1e-4*w; after bias correction m_hat = g', v_hat = g'^2.
    const double gp = 1.0 + 1e-4;
    CHECK(m.weights[0][0] == doctest::Approx(1.0 - 3e-4 * gp / (std::sqrt(gp * gp) + 1e-8)).epsilon(1e-15));
    CHECK(s.step_count == 1);
    adam_step(m, g, s);
    CHECK(s.step_count == 2);
    CHECK(s.first_moment[0].shape() == m.weights[0].shape());
  }
  SUBCASE("frozen model is a contract violation") {
    ModelParams m = init_model({LayerSpec::dense(2, 2)}, 12, false);
    AdamState s = AdamState::for_model(m);
    CHECK_THROWS_AS(adam_step(m, Gradients::zeros_like(m), s), ContractError);
    CHECK(s.step_count == 0);
  }
}

TEST_CASE("serialized byte size") {
  CHECK(serialized_byte_size(Tensor({2, 2})) == 32);
  CHECK(serialized_byte_size(Tensor({8, 8, 8})) == 4096);
  Rng rng(13);
  for (int k = 0; k < 10; ++k) {
    const Tensor t = random_tensor({1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(3)}, rng);
    CHECK(serialized_byte_size(t) == encode_payload(t).size());
  }
}

TEST_CASE("conv keeps spatial dims") {
  const ModelParams m = init_model({LayerSpec::conv3x3(2, 3)}, 14);
  Rng rng(15);
  for (std::size_t h = 1; h <= 5; ++h)
    for (std::size_t w = 1; w <= 5; ++w) {
      const Tensor y = infer(m, random_tensor({1, 2, h, w}, rng));
      CHECK(y.shape() == Shape{1, 3, h, w});
    }
}

TEST_CASE("frozen forward is deterministic and keeps no activations") {
  const ModelParams m = init_model({LayerSpec::conv3x3(3, 4), LayerSpec::relu(4)}, 16, false);
  Rng rng(17);
  const Tensor x = random_tensor({2, 3, 4, 4}, rng);
  const ForwardResult a = forward(m, x), b = forward(m, x);
  CHECK(a.output.identical(b.output));
  CHECK(a.cache.inputs.empty());
  CHECK(a.output.all_finite());
}

TEST_CASE("shape mismatch names the layer") {
  const ModelParams m = init_model({LayerSpec::dense(3, 4), LayerSpec::relu(4), LayerSpec::dense(5, 2)}, 18);
  const std::string msg = error_text([&] { infer(m, Tensor({1, 3})); });
  CHECK(msg.find("layer 2") != std::string::npos);
  CHECK_THROWS_AS(infer(m, Tensor({1, 2})), ConfigError);
}

TEST_CASE("flatten and load round-trip") {
  ModelParams m = init_model({LayerSpec::conv3x3(2, 3), LayerSpec::relu(3), LayerSpec::dense(3, 2)}, 19);
  const Tensor flat = flatten_parameters(m);
  CHECK(flat.numel() == m.parameter_count());
  CHECK(model_byte_size(m) == 8 * m.parameter_count());
  ModelParams z = zero_model(m.layers);
  load_flat_parameters(z, flat);
  CHECK(z.identical(m));
  CHECK_THROWS_AS(load_flat_parameters(z, Tensor({3})), ConfigError);
}
