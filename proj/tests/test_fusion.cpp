#include <gtest/gtest.h>

#include <filesystem>

#include "stnet/error.hpp"
#include "stnet/executor.hpp"
#include "stnet/fusion.hpp"
#include "stnet/stnet_model.hpp"

using namespace stnet;
using kernels::Mode;

namespace {

const ModalityDims kDims{{"rgb", 32}, {"flow_a", 32}, {"flow_b", 32}, {"audio", 16}};

ModalityBundle random_bundle(const ModalityDims& dims, RngStream& rng, std::int64_t t0 = 5) {
  ModalityBundle b;
  std::int64_t t = t0;
  for (const auto& [m, d] : dims) {
    Tensor<float> s({t++, d});
    for (auto& v : s.data()) v = static_cast<float>(rng.normal());
    b.sequences.emplace(m, std::move(s));
  }
  return b;
}

void jitter(ParamSet<double>& p, std::uint64_t seed) {
  RngStream rng(seed, 99);
  for (auto& [name, e] : p.entries()) {
    if (e.trainable) {
      for (auto& v : e.value.data()) v += 0.2 * rng.normal();
    }
  }
}

std::int64_t txn_count(std::int64_t c, const TxnBlockCfg& cfg) {
  std::int64_t total = 0;
  if (cfg.bottleneck_channels > 0) {
    total += c * cfg.bottleneck_channels + 3 * cfg.bottleneck_channels;
    c = cfg.bottleneck_channels;
  }
  for (const auto& u : cfg.units) {
    const std::int64_t g = u.groups_mode == GroupsMode::Depthwise ? c : 1;
    total += c * (c / g) * u.kernel_size + c + 2 * (c * u.out_channels + u.out_channels) + 2 * u.out_channels;
    c = u.out_channels;
  }
  return total;
}

ModelGraph txn_only(std::int64_t c, const TxnBlockCfg& cfg) {
  ModelGraph g("txn_only");
  LayerSpec in;
  in.name = "x";
  in.kind = LayerKind::Input;
  in.rank = 3;
  in.in_channels = c;
  in.out_channels = c;
  g.add(in);
  g.set_output(add_txn(g, "txn", "x", c, cfg));
  return g;
}

}  // namespace

TEST(Txn, OutputDimIndependentOfLength) {
  TxnBlockCfg cfg;
  cfg.units = {{24, 3, GroupsMode::Depthwise}, {40, 5, GroupsMode::Full}};
  const auto g = txn_only(12, cfg);
  auto p = init_params<double>(g, 1);
  jitter(p, 1);
  RngStream rng(1);
  for (std::int64_t t : {1, 7, 25, 64}) {
    Tensor<double> x({2, 12, t});
    for (auto& v : x.data()) v = rng.normal();
    EXPECT_EQ(predict(g, p, {{"x", x}}, Mode::Eval).shape(), (Shape{2, 40}));
  }
  EXPECT_THROW(Tensor<double>({2, 12, 0}), ValidationError);
}

TEST(Txn, DepthwiseTemporalMeanExample) {
  TxnBlockCfg cfg;
  cfg.bottleneck_channels = 0;
  cfg.units = {{1, 3, GroupsMode::Depthwise}};
  const auto g = txn_only(1, cfg);
  auto p = init_params<double>(g, 0);
  Tape<double> tape;
  const auto run = run_graph(g, p, {{"x", Tensor<double>({1, 1, 3}, {3, 6, 9})}}, Mode::Eval, tape);
  const auto& y = run.nodes.at("txn.unit1.temporal").value();
  EXPECT_NEAR(y[0], 3.0, 1e-12);
  EXPECT_NEAR(y[1], 6.0, 1e-12);
  EXPECT_NEAR(y[2], 5.0, 1e-12);
}

TEST(Txn, LengthOneSeesOnlyTheCentreTap) {
  TxnBlockCfg cfg;
  cfg.bottleneck_channels = 0;
  cfg.units = {{4, 3, GroupsMode::Depthwise}};
  const auto g = txn_only(3, cfg);
  auto p = init_params<double>(g, 2);
  jitter(p, 2);
  RngStream rng(2);
  Tensor<double> x({1, 3, 1});
  for (auto& v : x.data()) v = rng.normal();
  Tape<double> tape;
  const auto run = run_graph(g, p, {{"x", x}}, Mode::Eval, tape);
  const auto& y = run.nodes.at("txn.unit1.temporal").value();
  const auto& w = p.at("txn.unit1.temporal.weight");
  const auto& b = p.at("txn.unit1.temporal.bias");
  for (std::int64_t c = 0; c < 3; ++c) EXPECT_NEAR(y[c], w[c * 3 + 1] * x[c] + b[c], 1e-14);
}

TEST(Txn, ConfigValidation) {
  TxnBlockCfg cfg;
  cfg.units = {{8, 4, GroupsMode::Depthwise}};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.units = {};
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Itxn, StructureAndCounts) {
  TxnBlockCfg cfg;
  const auto g = build_itxn(kDims, cfg, 4);
  EXPECT_EQ(g.layer("early.concat").out_channels, 112);
  EXPECT_EQ(g.layer("fc").in_channels, 5 * 32);
  std::int64_t want = txn_count(112, cfg) + 160 * 4 + 4;
  for (const auto& [m, d] : kDims) want += txn_count(d, cfg);
  EXPECT_EQ(g.param_count(), want);

  const auto single = build_itxn({{"rgb", 32}}, cfg, 3);
  EXPECT_EQ(single.layer("fc").in_channels, 2 * 32);
  EXPECT_THROW(build_itxn({}, cfg, 3), ValidationError);
  EXPECT_EQ(build_single_txn("audio", 16, cfg, 4).param_count(), txn_count(16, cfg) + 32 * 4 + 4);
}

TEST(Itxn, BranchIsolation) {
  const auto g = build_itxn(kDims, TxnBlockCfg{}, 4);
  auto p = init_params<double>(g, 3);
  jitter(p, 3);
  RngStream rng(3);
  const auto b = random_bundle(kDims, rng);
  auto zeroed = b;
  zeroed.sequences.at("flow_a").fill(0.f);
  Tape<double> t1, t2;
  const auto r1 = run_graph(g, p, bundle_inputs<double>(g, {&b}), Mode::Eval, t1);
  const auto r2 = run_graph(g, p, bundle_inputs<double>(g, {&zeroed}), Mode::Eval, t2);
  for (const auto& l : g.layers()) {
    const bool same = bitwise_equal(r1.nodes.at(l.name).value(), r2.nodes.at(l.name).value());
    const bool touched = l.name.starts_with("late.flow_a") || l.name.starts_with("early") ||
                         l.name == "flow_a" || l.name.starts_with("fusion") || l.name == "fc";
    if (!touched) {
      EXPECT_TRUE(same) << l.name;
    }
  }
  EXPECT_FALSE(bitwise_equal(r1.nodes.at("late.flow_a.pool").value(), r2.nodes.at("late.flow_a.pool").value()));
  EXPECT_FALSE(bitwise_equal(r1.nodes.at("early.pool").value(), r2.nodes.at("early.pool").value()));
}

TEST(Itxn, DuplicateBundleGivesIdenticalLogits) {
  const auto g = build_itxn(kDims, TxnBlockCfg{}, 4);
  auto p = init_params<double>(g, 4);
  jitter(p, 4);
  RngStream rng(4);
  const auto b = random_bundle(kDims, rng);
  const auto y = predict_eval(g, p, bundle_inputs<double>(g, {&b, &b}));
  for (std::int64_t k = 0; k < 4; ++k) EXPECT_EQ(y[k], y[4 + k]);
  EXPECT_TRUE(bitwise_equal(itxn_forward(g, p, b, Mode::Eval), itxn_forward(g, p, b, Mode::Eval)));
}

TEST(Itxn, MissingModalityIsNamed) {
  const auto g = build_itxn(kDims, TxnBlockCfg{}, 4);
  RngStream rng(5);
  auto b = random_bundle(kDims, rng);
  b.sequences.erase("audio");
  try {
    bundle_inputs<double>(g, {&b});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("audio"), std::string::npos);
  }
}

TEST(Itxn, GradientsReachEveryBranch) {
  const auto g = build_itxn(kDims, TxnBlockCfg{}, 4);
  int failures = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = init_params<double>(g, seed);
    jitter(p, seed);
    RngStream rng(seed, 6);
    std::vector<ModalityBundle> bs;
    for (int i = 0; i < 4; ++i) bs.push_back(random_bundle(kDims, rng, 6));
    std::vector<const ModalityBundle*> ptrs;
    for (const auto& b : bs) ptrs.push_back(&b);
    const std::vector<int> labels{0, 1, 2, 3};
    const auto r = evaluate_loss(g, p, bundle_inputs<double>(g, ptrs), labels, Mode::Train, true);
    for (const auto& [name, grad] : r.grads) {
      bool nonzero = false;
      for (auto v : grad.data()) nonzero = nonzero || v != 0.0;
      if (!nonzero) {
        ++failures;
        ADD_FAILURE() << "seed " << seed << ": no gradient reaches " << name;
      }
    }
  }
  EXPECT_EQ(failures, 0);
}

TEST(Resample, Examples) {
  Tensor<double> s({4, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
  EXPECT_EQ(resample_sequence(s, 2).storage(), (std::vector<double>{0, 1, 4, 5}));
  EXPECT_TRUE(bitwise_equal(resample_sequence(s, 4), s));
  Tensor<double> one({1, 3}, {1, 2, 3});
  EXPECT_EQ(resample_sequence(one, 3).storage(), (std::vector<double>{1, 2, 3, 1, 2, 3, 1, 2, 3}));
  for (std::int64_t tm = 1; tm < 12; ++tm)
    for (std::int64_t target = 1; target < 20; ++target) {
      const auto idx = kernels::nearest_resample_index(tm, target);
      for (std::int64_t t = 0; t < target; ++t) EXPECT_EQ(idx[static_cast<std::size_t>(t)], (t * tm) / target);
    }
}

TEST(Bundle, RoundTrip) {
  RngStream rng(7);
  const auto b = random_bundle(kDims, rng);
  const auto dir = std::filesystem::temp_directory_path() / "stnet_test_bundle";
  std::filesystem::remove_all(dir);
  save_bundle(b, dir);
  const auto back = load_bundle(dir);
  ASSERT_EQ(back.sequences.size(), b.sequences.size());
  for (const auto& [m, s] : b.sequences) EXPECT_TRUE(bitwise_equal(back.sequences.at(m), s)) << m;
  std::filesystem::remove_all(dir);
}
