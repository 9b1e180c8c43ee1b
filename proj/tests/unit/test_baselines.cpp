#include <cmath>

#include "doctest.h"
#include "pfedlvm/baselines.hpp"
#include "pfedlvm/commcost.hpp"
#include "support.hpp"

using namespace pfedlvm;

namespace {

std::vector<std::vector<LabeledImage>> datasets(const std::vector<std::size_t>& sizes) {
  SceneConfig s;
  s.image_size = 8;
  std::vector<std::vector<LabeledImage>> out;
  for (std::size_t v = 0; v < sizes.size(); ++v) out.push_back(generate_vehicle_dataset(s, v, sizes[v]));
  return out;
}

FLConfig small_fl() {
  FLConfig c;
  c.batch_size = 4;
  c.epochs = 4;
  c.sigma = 2;
  c.model = {3, 5, 2, 4};
  c.seed = 9;
  return c;
}

ModelParams scalar_model(double w) {
  ModelParams m = zero_model({LayerSpec::dense(1, 1)});
  m.weights[0][0] = w;
  return m;
}

}  // namespace

TEST_CASE("proximal gradient") {
  SUBCASE("hand arithmetic") {
    const ModelParams local = scalar_model(1.5), global = scalar_model(0.25);
    Gradients g = Gradients::zeros_like(local);
    g.tensors[0][0] = 0.5;
    add_proximal_gradient(g, local, global, 0.01);
    CHECK(g.tensors[0][0] == doctest::Approx(0.5 + 0.01 * 1.25).epsilon(1e-15));
    CHECK(g.tensors[1][0] == 0.0);
  }
  SUBCASE("no pull at the global point") {
    const ModelParams m = init_model({LayerSpec::dense(3, 2)}, 1);
    Gradients g = Gradients::zeros_like(m);
    g.tensors[0][2] = 0.7;
    const Gradients before = g;
    add_proximal_gradient(g, m, m, 0.5);
    for (std::size_t t = 0; t < g.tensors.size(); ++t) CHECK(g.tensors[t].identical(before.tensors[t]));
  }
}

TEST_CASE("aggregate") {
  SUBCASE("identical models") {
    const ModelParams m = init_model({LayerSpec::conv3x3(2, 3), LayerSpec::relu(3), LayerSpec::dense(3, 2)}, 2);
    CHECK(aggregate({&m, &m, &m}, {848.0 / 2975, 1046.0 / 2975, 1081.0 / 2975}).identical(m));
  }
  SUBCASE("two scalars") {
    const ModelParams a = scalar_model(0.0), b = scalar_model(2.0);
    CHECK(aggregate({&a, &b}, {0.5, 0.5}).weights[0][0] == 1.0);
  }
  SUBCASE("weighted mean oracle and permutation invariance") {
    const std::vector<LayerSpec> layers{LayerSpec::conv3x3(2, 3), LayerSpec::relu(3), LayerSpec::dense(3, 2)};
    const ModelParams m0 = init_model(layers, 3), m1 = init_model(layers, 4), m2 = init_model(layers, 5);
    const std::vector<double> w{848.0 / 2975, 1046.0 / 2975, 1081.0 / 2975};
    const ModelParams out = aggregate({&m0, &m1, &m2}, w);
    const ModelParams perm = aggregate({&m2, &m0, &m1}, {w[2], w[0], w[1]});
    const auto po = out.parameters(), pp = perm.parameters();
    const auto p0 = m0.parameters(), p1 = m1.parameters(), p2 = m2.parameters();
    for (std::size_t t = 0; t < po.size(); ++t)
      for (std::size_t i = 0; i < po[t]->numel(); ++i) {
        const double ref = w[0] * (*p0[t])[i] + w[1] * (*p1[t])[i] + w[2] * (*p2[t])[i];
        CHECK((*po[t])[i] == doctest::Approx(ref).epsilon(1e-14));
        CHECK((*pp[t])[i] == doctest::Approx((*po[t])[i]).epsilon(1e-14));
      }
  }
  SUBCASE("structural mismatch") {
    const ModelParams a = init_model({LayerSpec::dense(2, 2)}, 1), b = init_model({LayerSpec::dense(2, 3)}, 1);
    CHECK_THROWS_AS(aggregate({&a, &b}, {0.5, 0.5}), ContractError);
    CHECK_THROWS_AS(aggregate({&a}, {0.5, 0.5}), ConfigError);
  }
}

TEST_CASE("schedule") {
  FedBaseline fl(small_fl(), datasets({10, 13, 6}));
  CHECK(fl.s_max() == 13);
  CHECK(fl.total_rounds() == 2);
  CHECK(fl.local_steps() == 2 * (13 / 4));
  CHECK(fl.weights()[1] == doctest::Approx(13.0 / 29));
  FLConfig c = small_fl();
  c.epochs = 1;
  CHECK(FedBaseline(c, datasets({8})).total_rounds() == 0);
}

TEST_CASE("FedProx with mu=0 equals FedAvg bitwise") {
  FLConfig avg = small_fl();
  FLConfig prox = small_fl();
  prox.mu = 0.0;
  FedBaseline a(avg, datasets({9, 12})), b(prox, datasets({9, 12}));
  CHECK(a.run_training() == b.run_training());
  CHECK(a.global_model().params.identical(b.global_model().params));

  prox.mu = 0.01;
  FedBaseline c(prox, datasets({9, 12}));
  c.run_training();
  CHECK_FALSE(c.global_model().params.identical(a.global_model().params));
}

TEST_CASE("FedAvg with one vehicle equals centralized training") {
  FLConfig c = small_fl();
  auto data = datasets({11});
  FedBaseline fl(c, data);
  BaselineNet model = fl.global_model();
  fl.run_training();

  AdamState opt = AdamState::for_model(model.params, c.adam);
  VehicleState stream;
  stream.dataset = data[0];
  const std::size_t steps = fl.total_rounds() * fl.local_steps();
  for (std::size_t s = 0; s < steps; ++s) {
    const Batch b = next_batch(stream, c.batch_size);
    const ForwardResult fw = forward(model.params, b.images);
    const BackwardResult bw = backward(model.params, fw.cache, cross_entropy_loss(fw.output, b.labels).grad);
    adam_step(model.params, bw.grads, opt);
  }
  CHECK(fl.global_model().params.identical(model.params));
}

TEST_CASE("parameter bytes reconcile with Eq. 8") {
  FLConfig c = small_fl();
  c.epochs = 5;
  FedBaseline fl(c, datasets({8, 6, 7}));
  const auto traces = fl.run_training();
  std::size_t total = 0;
  const std::size_t m_b = model_byte_size(fl.global_model().params);
  for (const auto& t : traces) {
    CHECK(t.uploaded_bytes + t.downloaded_bytes == 2 * 3 * m_b);
    total += t.uploaded_bytes + t.downloaded_bytes;
  }
  CommParams p{8, 5, 4, 1, m_b, 2, 3};
  CHECK(total == m_fl(p));
  CHECK(fl.log().total_payload_bytes() == m_fl(p));
  CHECK(fl.log().count() == 2 * 3 * traces.size());
}

TEST_CASE("deterministic across worker counts") {
  FLConfig c = small_fl();
  FedBaseline ref(c, datasets({9, 12, 5}));
  const auto rt = ref.run_training();
  for (std::size_t workers : {2u, 4u}) {
    c.workers = workers;
    FedBaseline fl(c, datasets({9, 12, 5}));
    CHECK(fl.run_training() == rt);
    CHECK(fl.global_model().params.identical(ref.global_model().params));
  }
}

TEST_CASE("config validation") {
  FLConfig c = small_fl();
  c.sigma = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_fl();
  c.mu = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(FedBaseline(small_fl(), datasets({2, 3})), ConfigError);
  c = small_fl();
  c.weights = {1.0};
  CHECK_THROWS_AS(FedBaseline(c, datasets({8, 8})), ConfigError);
}

TEST_CASE("predict returns masks") {
  FedBaseline fl(small_fl(), datasets({8}));
  const Tensor m = fl.predict(stack_images(datasets({2})[0]));
  CHECK(m.shape() == Shape{2, 8, 8});
}
