#include <gtest/gtest.h>

#include <algorithm>

#include "stnet/error.hpp"
#include "stnet/executor.hpp"
#include "stnet/stnet_model.hpp"

using namespace stnet;
using kernels::Mode;

namespace {

SuperImageBatch<double> random_batch(std::int64_t b, std::int64_t t, std::int64_t n, std::int64_t hw, RngStream& rng) {
  SuperImageBatch<double> batch;
  batch.clips = Tensor<double>({b, t, 3 * n, hw, hw});
  for (auto& v : batch.clips.data()) v = rng.uniform();
  batch.labels.assign(static_cast<std::size_t>(b), 0);
  batch.segments = t;
  batch.frames_per_segment = n;
  return batch;
}

// Perturbs every trainable parameter so no init symmetry remains.
void jitter(ParamSet<double>& p, std::uint64_t seed) {
  RngStream rng(seed, 99);
  for (auto& [name, e] : p.entries()) {
    if (e.trainable) {
      for (auto& v : e.value.data()) v += 0.2 * rng.normal();
    }
  }
}

Tensor<double> permute_segments(const Tensor<double>& clips, const std::vector<std::int64_t>& perm) {
  Tensor<double> out(clips.shape());
  const std::int64_t t = clips.dim(1), seg = clips.numel() / (clips.dim(0) * t);
  for (std::int64_t b = 0; b < clips.dim(0); ++b)
    for (std::int64_t i = 0; i < t; ++i)
      std::copy_n(clips.ptr() + (b * t + perm[static_cast<std::size_t>(i)]) * seg, seg, out.ptr() + (b * t + i) * seg);
  return out;
}

// Closed-form trainable parameter count of the toy StNet.
std::int64_t closed_form_count(const StNetCfg& cfg) {
  const auto& bb = cfg.backbone;
  const std::int64_t k = bb.stem.kernel;
  std::int64_t total = 3 * cfg.n * bb.stem.channels * k * k + 2 * bb.stem.channels;
  std::int64_t c_in = bb.stem.channels;
  for (std::size_t s = 0; s < bb.stages.size(); ++s) {
    const auto& st = bb.stages[s];
    for (int b = 0; b < st.blocks; ++b) {
      const std::int64_t ci = b == 0 ? c_in : st.channels, co = st.channels;
      total += ci * co * 9 + 2 * co + co * co * 9 + 2 * co;
      if (b == 0 && (ci != co || st.stride != 1)) total += ci * co + 2 * co;
    }
    c_in = st.channels;
    if (std::find(cfg.temporal_after.begin(), cfg.temporal_after.end(), static_cast<int>(s + 1)) !=
        cfg.temporal_after.end()) {
      total += 3 * c_in * c_in + c_in + 2 * c_in;
    }
  }
  std::int64_t c = c_in;
  if (cfg.txn.bottleneck_channels > 0) {
    total += c * cfg.txn.bottleneck_channels + cfg.txn.bottleneck_channels + 2 * cfg.txn.bottleneck_channels;
    c = cfg.txn.bottleneck_channels;
  }
  for (const auto& u : cfg.txn.units) {
    const std::int64_t g = u.groups_mode == GroupsMode::Depthwise ? c : 1;
    total += c * (c / g) * u.kernel_size + c;                   // temporal
    total += c * u.out_channels + u.out_channels;               // pointwise
    total += 2 * u.out_channels;                                // bn
    total += c * u.out_channels + u.out_channels;               // projection
    c = u.out_channels;
  }
  return total + c * cfg.num_classes + cfg.num_classes;
}

}  // namespace

TEST(BuildStNet, DefaultStructure) {
  StNetCfg cfg;
  cfg.num_classes = 10;
  const auto g = build_stnet(cfg);
  EXPECT_EQ(g.layer("clips").in_channels, 15);
  EXPECT_EQ(g.layer("conv1").in_channels, 15);
  const auto tb = temporal_blocks(g);
  ASSERT_EQ(tb.size(), 2u);
  EXPECT_EQ(tb[0].insert_after_stage, 3);
  EXPECT_EQ(tb[0].out_channels, 64);
  EXPECT_EQ(tb[1].insert_after_stage, 4);
  EXPECT_EQ(tb[1].out_channels, 128);
  const auto& conv = g.layer("temporal3.conv");
  EXPECT_EQ(conv.rank, 3);
  EXPECT_EQ(conv.kernel, (std::vector<int>{3, 1, 1}));
  EXPECT_EQ(conv.groups, 1);
  EXPECT_EQ(conv.out_channels, conv.in_channels);
}

TEST(BuildStNet, ParameterCountsAreClosedForm) {
  StNetCfg cfg;
  const auto g = build_stnet(cfg);
  const auto d = describe_json(g);
  std::int64_t temporal3 = -1;
  for (const auto& b : d.at("blocks")) {
    if (b.at("block") == "temporal3") temporal3 = b.at("param_count").get<std::int64_t>();
  }
  EXPECT_EQ(temporal3, 3 * 64 * 64 + 64 + 2 * 64);
  EXPECT_EQ(temporal3, 12480);
  EXPECT_EQ(g.param_count(), closed_form_count(cfg));
  EXPECT_NE(describe_text(g).find("12480"), std::string::npos);

  cfg.backbone.stages = {{2, 8, 1}, {1, 16, 2}, {2, 24, 2}, {1, 32, 1}, {1, 40, 2}};
  cfg.temporal_after = {3, 5};
  cfg.txn.bottleneck_channels = 0;
  cfg.txn.units = {{24, 5, GroupsMode::Full}, {16, 3, GroupsMode::Depthwise}};
  cfg.n = 3;
  cfg.num_classes = 7;
  EXPECT_EQ(build_stnet(cfg).param_count(), closed_form_count(cfg));
}

TEST(BuildStNet, Errors) {
  StNetCfg cfg;
  cfg.backbone.stages.pop_back();
  EXPECT_THROW(build_stnet(cfg), ValidationError);
  StNetCfg ok;
  const auto g = build_stnet(ok);
  auto p = init_params<double>(g, 1);
  RngStream rng(1);
  auto batch = random_batch(1, 2, 4, 16, rng);
  try {
    forward_stnet(g, p, batch, Mode::Eval);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("3N=15"), std::string::npos);
  }
  ParamSet<double> base;
  base.add("conv1.weight", Tensor<double>({16, 3, 5, 5}));
  EXPECT_THROW(init_params<double>(g, 1, &base), ShapeError);
}

TEST(InitRules, ExactValues) {
  const auto g = build_stnet(StNetCfg{});
  const auto p = init_params<double>(g, 3);
  for (const auto& l : g.layers()) {
    if (l.kind == LayerKind::Conv && l.rank != 2 && l.kernel[0] > 1) {
      const double want = 1.0 / (3.0 * static_cast<double>(l.in_channels));
      for (auto v : p.at(l.name + ".weight").data()) ASSERT_EQ(v, want) << l.name;
      for (auto v : p.at(l.name + ".bias").data()) ASSERT_EQ(v, 0.0) << l.name;
    }
    if (l.kind == LayerKind::Conv && l.rank == 1 && l.kernel[0] == 1) {
      const auto& w = p.at(l.name + ".weight");
      EXPECT_NE(w[0], w[1]) << l.name;
    }
    if (l.kind == LayerKind::BatchNorm) {
      for (auto v : p.at(l.name + ".gamma").data()) ASSERT_EQ(v, 1.0);
      for (auto v : p.at(l.name + ".beta").data()) ASSERT_EQ(v, 0.0);
      for (auto v : p.at(l.name + ".running_mean").data()) ASSERT_EQ(v, 0.0);
      for (auto v : p.at(l.name + ".running_var").data()) ASSERT_EQ(v, 1.0);
    }
  }
  EXPECT_EQ(p.at("temporal3.conv.weight")[0], 1.0 / 192.0);
  EXPECT_EQ(p.at("temporal4.conv.weight")[0], 1.0 / 384.0);
  // Conv1 is an inflated 3-channel kernel: every frame copy is equal.
  const auto& w = p.at("conv1.weight");
  for (std::int64_t o = 0; o < 16; ++o)
    for (std::int64_t j = 1; j < 5; ++j)
      for (std::int64_t q = 0; q < 27; ++q) ASSERT_EQ(w[(o * 15 + 3 * j) * 9 + q], w[o * 15 * 9 + q]);
}

TEST(InitRules, Base2dIsCopiedAndInflated) {
  const auto g = build_stnet(StNetCfg{});
  const auto ref = init_params<double>(g, 4);
  ParamSet<double> base;
  Tensor<double> stem({16, 3, 3, 3});
  RngStream rng(4);
  for (auto& v : stem.data()) v = rng.normal();
  base.add("conv1.weight", stem);
  base.add("res2.1.conv_a.weight", Tensor<double>(ref.at("res2.1.conv_a.weight").shape(), 0.5));
  base.add("res2.1.bn_a.gamma", Tensor<double>({32}, 2.0));
  const auto p = init_params<double>(g, 4, &base);
  EXPECT_TRUE(bitwise_equal(p.at("conv1.weight"), inflate_conv1_weights(stem, 5)));
  for (auto v : p.at("res2.1.conv_a.weight").data()) EXPECT_EQ(v, 0.5);
  for (auto v : p.at("res2.1.bn_a.gamma").data()) EXPECT_EQ(v, 2.0);
  EXPECT_TRUE(bitwise_equal(p.at("res3.1.conv_a.weight"), ref.at("res3.1.conv_a.weight")));
}

TEST(InitRules, TemporalChannelsIdenticalAndBnIdentityAtInit) {
  const auto g = build_stnet(StNetCfg{});
  auto p = init_params<double>(g, 5);
  RngStream rng(5);
  const auto batch = random_batch(2, 3, 5, 32, rng);
  Tape<double> tape;
  const auto run = run_graph(g, p, {{"clips", batch.clips}}, Mode::Eval, tape);
  for (const char* name : {"temporal3.conv", "temporal4.conv"}) {
    const auto& y = run.nodes.at(name).value();
    const std::int64_t C = y.dim(1), P = y.numel() / (y.dim(0) * C);
    for (std::int64_t b = 0; b < y.dim(0); ++b)
      for (std::int64_t c = 1; c < C; ++c)
        for (std::int64_t q = 0; q < P; ++q) ASSERT_EQ(y[(b * C + c) * P + q], y[b * C * P + q]) << name;
  }
  for (const auto& l : g.layers()) {
    if (l.kind != LayerKind::BatchNorm) continue;
    EXPECT_TRUE(bitwise_equal(run.nodes.at(l.name).value(), run.nodes.at(l.inputs[0]).value())) << l.name;
  }
}

TEST(InitRules, TemporalMeanExample) {
  ModelGraph g("one");
  LayerSpec in;
  in.name = "x";
  in.kind = LayerKind::Input;
  in.rank = 5;
  in.in_channels = 1;
  in.out_channels = 1;
  g.add(in);
  LayerSpec c;
  c.name = "t.conv";
  c.kind = LayerKind::Conv;
  c.inputs = {"x"};
  c.rank = 3;
  c.in_channels = 1;
  c.out_channels = 1;
  c.kernel = {3, 1, 1};
  c.padding = {1, 0, 0};
  c.bias = true;
  c.role = "temporal";
  g.add(c);
  g.set_output("t.conv");
  auto p = init_params<double>(g, 0);
  const auto y = predict(g, p, {{"x", Tensor<double>({1, 1, 3, 1, 1}, {3, 6, 9})}}, Mode::Eval);
  EXPECT_NEAR(y[0], 3.0, 1e-12);
  EXPECT_NEAR(y[1], 6.0, 1e-12);
  EXPECT_NEAR(y[2], 5.0, 1e-12);
}

TEST(ForwardStNet, AnyTWithoutRebuild) {
  StNetCfg cfg;
  cfg.num_classes = 6;
  const auto g = build_stnet(cfg);
  auto p = init_params<double>(g, 6);
  RngStream rng(6);
  for (std::int64_t t : {7, 25, 1}) {
    const auto y = forward_stnet(g, p, random_batch(2, t, 5, 16, rng), Mode::Eval);
    EXPECT_EQ(y.shape(), (Shape{2, 6}));
  }
}

TEST(ForwardStNet, DuplicateSamplesGiveIdenticalRows) {
  const auto g = build_stnet(StNetCfg{});
  auto p = init_params<double>(g, 7);
  jitter(p, 7);
  RngStream rng(7);
  auto batch = random_batch(2, 4, 5, 16, rng);
  const std::int64_t half = batch.clips.numel() / 2;
  std::copy_n(batch.clips.ptr(), half, batch.clips.ptr() + half);
  const auto y = forward_stnet(g, p, batch, Mode::Eval);
  for (std::int64_t k = 0; k < y.dim(1); ++k) EXPECT_EQ(y[k], y[y.dim(1) + k]);
}

TEST(ForwardStNet, SegmentOrderMattersForStNetNotTsn) {
  StNetCfg cfg;
  const auto gs = build_stnet(cfg);
  const auto gt = build_tsn(cfg);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng(seed, 8);
    auto ps = init_params<double>(gs, seed);
    auto pt = init_params<double>(gt, seed);
    jitter(ps, seed);
    jitter(pt, seed);
    auto batch = random_batch(1, 5, 5, 16, rng);
    std::vector<std::int64_t> perm{0, 1, 2, 3, 4};
    rng.shuffle(perm.begin(), perm.end());
    if (perm == std::vector<std::int64_t>{0, 1, 2, 3, 4}) std::swap(perm[0], perm[4]);
    auto permuted = batch;
    permuted.clips = permute_segments(batch.clips, perm);
    const auto a = forward_stnet(gs, ps, batch, Mode::Eval), b = forward_stnet(gs, ps, permuted, Mode::Eval);
    double diff = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    EXPECT_GT(diff, 1e-9) << "seed " << seed;
    EXPECT_LE(relative_linf(tsn_baseline_forward(gt, pt, permuted, Mode::Eval),
                            tsn_baseline_forward(gt, pt, batch, Mode::Eval)),
              1e-13)
        << "seed " << seed;
  }
}

TEST(ForwardStNet, TsnWithOneSegmentIsTheSegmentClassifier) {
  StNetCfg cfg;
  const auto gt = build_tsn(cfg);
  auto pt = init_params<double>(gt, 9);
  jitter(pt, 9);
  RngStream rng(9);
  const auto batch = random_batch(2, 1, 5, 16, rng);
  Tape<double> tape;
  const auto run = run_graph(gt, pt, {{"clips", batch.clips}}, Mode::Eval, tape);
  EXPECT_TRUE(bitwise_equal(run.output.value(), run.nodes.at("fc").value()));
}

TEST(ForwardStNet, ResidualTemporalBlockOption) {
  StNetCfg cfg;
  cfg.residual_temporal_block = true;
  const auto g = build_stnet(cfg);
  EXPECT_TRUE(g.contains("temporal3.add"));
  EXPECT_EQ(g.param_count(), build_stnet(StNetCfg{}).param_count());
  auto p = init_params<double>(g, 10);
  RngStream rng(10);
  EXPECT_EQ(forward_stnet(g, p, random_batch(1, 3, 5, 16, rng), Mode::Eval).shape(), (Shape{1, 4}));
}

TEST(ForwardStNet, TrainModeUpdatesOnlyRunningStats) {
  const auto g = build_stnet(StNetCfg{});
  auto p = init_params<double>(g, 11);
  const auto before = p;
  RngStream rng(11);
  forward_stnet(g, p, random_batch(2, 3, 5, 16, rng), Mode::Train);
  for (const auto& [name, e] : p.entries()) {
    if (e.trainable) EXPECT_TRUE(bitwise_equal(e.value, before.at(name))) << name;
  }
  EXPECT_FALSE(bitwise_equal(p.at("conv1.bn.running_mean"), before.at("conv1.bn.running_mean")));
}

TEST(Graph, JsonRoundTrip) {
  const auto g = build_stnet(StNetCfg{});
  const auto back = ModelGraph::from_json(g.to_json());
  EXPECT_EQ(back.to_json(), g.to_json());
  EXPECT_EQ(back.param_count(), g.param_count());
}
