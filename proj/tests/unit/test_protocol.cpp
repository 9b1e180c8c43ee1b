#include <cmath>
#include <limits>

#include "doctest.h"
#include "pfedlvm/commcost.hpp"
#include "pfedlvm/protocol.hpp"

using namespace pfedlvm;

namespace {

SceneConfig small_scene() {
  SceneConfig s;
  s.image_size = 8;
  return s;
}

ProtocolConfig small_config(LayerSelection sel = LayerSelection::Middle1) {
  ProtocolConfig c;
  c.batch_size = 4;
  c.epochs = 1;
  c.selection = sel;
  c.compressor = {3, 4, 4};
  c.backbone = {4, 4, 1.0};
  c.head_hidden = 5;
  c.seed = 3;
  return c;
}

std::vector<std::vector<LabeledImage>> datasets(const std::vector<std::size_t>& sizes, const SceneConfig& s = small_scene()) {
  std::vector<std::vector<LabeledImage>> out;
  for (std::size_t v = 0; v < sizes.size(); ++v) out.push_back(generate_vehicle_dataset(s, v, sizes[v]));
  return out;
}

VehicleState indexed_vehicle(std::size_t size) {
  VehicleState v;
  for (std::size_t i = 0; i < size; ++i) {
    LabeledImage it{Tensor({3, 2, 2}, static_cast<double>(i)), Tensor({2, 2})};
    v.dataset.push_back(it);
  }
  return v;
}

}  // namespace

TEST_CASE("next_batch windows") {
  SUBCASE("batch equals dataset") {
    VehicleState v = indexed_vehicle(8);
    for (int call = 0; call < 3; ++call) {
      const Batch b = next_batch(v, 8);
      CHECK(b.indices == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
      CHECK(b.images.at4(5, 0, 0, 0) == 5.0);
    }
    CHECK(v.cursor == 0);
  }
  SUBCASE("wraparound") {
    VehicleState v = indexed_vehicle(12);
    CHECK(next_batch(v, 8).indices == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(next_batch(v, 8).indices == std::vector<std::size_t>{8, 9, 10, 11, 0, 1, 2, 3});
    CHECK(next_batch(v, 8).indices == std::vector<std::size_t>{4, 5, 6, 7, 8, 9, 10, 11});
    CHECK(v.cursor == 0);
  }
}

TEST_CASE("one round matches a hand-assembled exchange point") {
  for (LayerSelection sel : {LayerSelection::Middle1, LayerSelection::Middle4Concat}) {
    CAPTURE(to_string(sel));
    PfedSimulation sim(small_config(sel), datasets({6, 9}));
    std::vector<VehicleState> vs = sim.vehicles();
    const BackboneModel backbone = sim.server().backbone;

    std::vector<Batch> batches;
    std::vector<CompressorPass> passes;
    std::vector<Tensor> uploads;
    for (auto& v : vs) {
      batches.push_back(next_batch(v, 4));
      passes.push_back(compressor_forward(v.compressor, batches.back().images));
      uploads.push_back(passes.back().output);
    }
    const Tensor shared = extract_shared(backbone, sel, concat_batch(uploads));
    std::vector<double> mse_ref, ce_ref;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const Tensor slice = slice_batch(shared, 4 * i, 4 * i + 4);
      const LossResult mse = mse_loss(passes[i].output, compressor_target(slice, sel, 4));
      const HeadPass hp = head_forward(vs[i].head, slice);
      const LossResult ce = cross_entropy_loss(hp.logits, batches[i].labels);
      adam_step(vs[i].compressor.params, compressor_backward(vs[i].compressor, passes[i], mse.grad), vs[i].compressor_opt);
      adam_step(vs[i].head.params, head_backward(vs[i].head, hp, ce.grad), vs[i].head_opt);
      mse_ref.push_back(mse.loss);
      ce_ref.push_back(ce.loss);
    }

    const RoundTrace t = sim.step();
    CHECK(t.compressor_loss == mse_ref);
    CHECK(t.head_loss == ce_ref);
    for (std::size_t i = 0; i < vs.size(); ++i) {
      CHECK(sim.vehicles()[i].compressor.params.identical(vs[i].compressor.params));
      CHECK(sim.vehicles()[i].head.params.identical(vs[i].head.params));
      CHECK(sim.vehicles()[i].cursor == vs[i].cursor);
    }
    CHECK(sim.server().backbone.params.identical(backbone.params));
  }
}

TEST_CASE("single vehicle receives the whole shared tensor") {
  ServerState server;
  server.backbone = BackboneModel::create({4, 4, 1.0}, 1);
  server.selection = LayerSelection::Last;
  Tensor feats({2, 4, 3, 3}, 0.3);
  server_receive(server, make_message(MessageKind::CompressedFeatures, 0, 0, feats, Provenance::Feature));
  const auto down = server_extract(server, {0}, false);
  REQUIRE(down.size() == 1);
  CHECK(down[0].payload.identical(extract_shared(server.backbone, LayerSelection::Last, feats)));
  CHECK(down[0].kind == MessageKind::SharedFeatures);
  CHECK(server.pending.empty());
}

TEST_CASE("barrier rejects out-of-round, duplicate and early extraction") {
  ServerState server;
  server.backbone = BackboneModel::create({4, 4, 1.0}, 1);
  server.round_index = 3;
  const Tensor f({1, 4, 2, 2}, 0.1);
  CHECK_THROWS_AS(server_receive(server, make_message(MessageKind::CompressedFeatures, 2, 0, f, Provenance::Feature)),
                  ContractError);
  CHECK_THROWS_AS(server_receive(server, make_message(MessageKind::ParameterUp, 3, 0, f, Provenance::Parameter)),
                  ContractError);
  server_receive(server, make_message(MessageKind::CompressedFeatures, 3, 0, f, Provenance::Feature));
  CHECK_THROWS_AS(server_receive(server, make_message(MessageKind::CompressedFeatures, 3, 0, f, Provenance::Feature)),
                  ContractError);
  CHECK_THROWS_AS(server_extract(server, {0, 1}, false), ContractError);
  server_receive(server, make_message(MessageKind::CompressedFeatures, 3, 1, f, Provenance::Feature));
  const auto down = server_extract(server, {0, 1}, false);
  CHECK(down.size() == 2);
  for (const auto& d : down) CHECK(d.round_index == 3);
}

TEST_CASE("round structure and byte counts") {
  PfedSimulation sim(small_config(), datasets({5, 8, 6}));
  const RoundTrace t = sim.step();
  CHECK(t.messages == 6);
  CHECK(sim.log().count() == 6);
  const std::size_t f_b = serialized_byte_size(Tensor({4, 4, 4, 4}));
  CHECK(sim.upload_feature_bytes() == f_b);
  CHECK(t.uploaded_bytes == 3 * f_b);
  CHECK(t.downloaded_bytes == 3 * f_b);
  for (double l : t.compressor_loss) CHECK(std::isfinite(l));
  CHECK(sim.retention().vehicle_peak == space_units(3, f_b).vehicle_side);
  CHECK(sim.retention().server_peak == space_units(3, f_b).server_side);
}

TEST_CASE("round counts and Eq. 7 reconciliation") {
  {
    ProtocolConfig c = small_config();
    c.batch_size = 8;
    PfedSimulation sim(c, datasets({16, 10}));
    CHECK(sim.total_rounds() == 2);
    CHECK(sim.run_training().size() == 2);
  }
  {
    ProtocolConfig c = small_config();
    c.batch_size = 8;
    c.epochs = 2;
    PfedSimulation sim(c, datasets({100, 40}));
    CHECK(sim.total_rounds() == 24);
  }
  ProtocolConfig c = small_config();
  c.epochs = 2;
  PfedSimulation sim(c, datasets({13, 7, 9}));
  const auto traces = sim.run_training();
  CHECK(traces.size() == 2 * (13 / 4));
  std::size_t up = 0, down = 0;
  for (const auto& t : traces) {
    up += t.uploaded_bytes;
    down += t.downloaded_bytes;
  }
  CommParams p{13, 2, 4, sim.upload_feature_bytes(), 1, 1, 3};
  CHECK(up == m_pfl(p) / 2);
  CHECK(up + down == m_pfl(p));
  CHECK(sim.log().total_payload_bytes() == m_pfl(p));
}

TEST_CASE("concat selection downloads are K times larger") {
  PfedSimulation sim(small_config(LayerSelection::Middle4Concat), datasets({8, 8}));
  CHECK(sim.download_feature_bytes() == 4 * sim.upload_feature_bytes());
  const RoundTrace t = sim.step();
  CHECK(t.downloaded_bytes == 4 * t.uploaded_bytes);
}

TEST_CASE("broadcast_full sends the whole tensor") {
  ProtocolConfig c = small_config();
  c.broadcast_full = true;
  PfedSimulation sim(c, datasets({8, 8, 8}));
  const RoundTrace t = sim.step();
  CHECK(t.downloaded_bytes == 3 * t.uploaded_bytes);
  for (double l : t.head_loss) CHECK(std::isfinite(l));
}

TEST_CASE("parameter privacy audit is clean") {
  ProtocolConfig c = small_config();
  c.keep_message_bytes = true;
  PfedSimulation sim(c, datasets({8, 8}));
  sim.run(3);
  std::vector<const ModelParams*> models{&sim.server().backbone.params};
  for (const auto& v : sim.vehicles()) {
    models.push_back(&v.compressor.params);
    models.push_back(&v.head.params);
  }
  const PrivacyAudit audit = audit_parameter_privacy(sim.log(), models);
  CHECK(audit.messages == 12);
  CHECK(audit.clean());
}

TEST_CASE("bitwise determinism across worker counts") {
  std::vector<RoundTrace> reference;
  std::vector<ModelParams> heads;
  for (std::size_t workers : {1u, 2u, 4u}) {
    ProtocolConfig c = small_config(LayerSelection::Middle4Concat);
    c.workers = workers;
    PfedSimulation sim(c, datasets({9, 6, 11}));
    const auto traces = sim.run(4);
    if (workers == 1) {
      reference = traces;
      for (const auto& v : sim.vehicles()) heads.push_back(v.head.params);
    } else {
      CHECK(traces == reference);
      for (std::size_t i = 0; i < 3; ++i) CHECK(sim.vehicles()[i].head.params.identical(heads[i]));
    }
  }
}

TEST_CASE("modeled round time follows Eq. 10") {
  ProtocolConfig c = small_config();
  TimeParams tp;
  tp.vehicles = {{0.5, 0.25, 0.125, 0.25, 1.0, 0.5}, {0.25, 1.0, 0.5, 0.25, 0.75, 0.25}};
  tp.t_s = 0.375;
  c.time_model = tp;
  PfedSimulation sim(c, datasets({8, 8}));
  CHECK(sim.step().modeled_time == round_time(tp));
}

TEST_CASE("errors") {
  CHECK_THROWS_AS(PfedSimulation(small_config(), {}), ConfigError);
  ProtocolConfig c = small_config();
  c.compressor.feature_channels = 5;
  CHECK_THROWS_AS(PfedSimulation(c, datasets({8})), ConfigError);
  CHECK_THROWS_AS(PfedSimulation(small_config(), datasets({3})), ConfigError);

  auto data = datasets({4});
  data[0][2].image[0] = std::numeric_limits<double>::quiet_NaN();
  PfedSimulation sim(small_config(), data);
  try {
    sim.step();
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("round 0") != std::string::npos);
  }
}

TEST_CASE("losses descend on the default task") {
  int improved = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SceneConfig scene;
    scene.seed = seed;
    ProtocolConfig c;
    c.seed = seed;
    c.epochs = 10;
    PfedSimulation sim(c, datasets({57, 70, 73}, scene));
    const auto traces = sim.run_training();
    const std::size_t tenth = std::max<std::size_t>(1, traces.size() / 10);
    auto mean = [&](std::size_t from, std::size_t to, bool head) {
      double s = 0;
      for (std::size_t r = from; r < to; ++r)
        for (std::size_t v = 0; v < 3; ++v) s += head ? traces[r].head_loss[v] : traces[r].compressor_loss[v];
      return s;
    };
    const std::size_t n = traces.size();
    const bool ok = mean(n - tenth, n, false) < mean(0, tenth, false) && mean(n - tenth, n, true) < mean(0, tenth, true);
    improved += ok ? 1 : 0;
  }
  CHECK(improved >= 2);
}
