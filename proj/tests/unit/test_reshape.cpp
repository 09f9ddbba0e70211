#include "flowface/evalsuite.hpp"
#include "flowface/reshape.hpp"
#include "flowface/synthdata.hpp"
#include "flowface/tensor.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace flowface;
using namespace flowface::reshape;

namespace {

torch::Tensor uniform_flow(int n, int h, int w, double dx, double dy, torch::Dtype dtype = torch::kFloat32) {
  auto f = torch::empty({n, 2, h, w}, torch::TensorOptions().dtype(dtype));
  f.select(1, 0).fill_(dx);
  f.select(1, 1).fill_(dy);
  return f;
}

struct SmallData {
  synthdata::DatasetManifest manifest;
  Corpus corpus;
  face3d::BlendModel model;
};

const SmallData& small_data() {
  static const SmallData d = [] {
    synthdata::DatasetConfig cfg;
    cfg.identities = 3;
    cfg.per_identity = 4;
    cfg.val_per_identity = 1;
    const auto dir = test_util::temp_dir("reshape_data");
    auto m = synthdata::generate_dataset(cfg, dir);
    auto c = load_corpus(m, "train");
    return SmallData{m, std::move(c), face3d::load_model(dir / "face3d.fl3d")};
  }();
  return d;
}

}  // namespace

TEST(Heatmap, PeakOnPixelCentre) {
  auto lm = torch::zeros({1, face3d::kContourCount, 2});
  lm.index_put_({0, 0}, torch::tensor({8.0f, 8.0f}));
  auto h = heatmap_encode(lm, 16, 16, 2.0);
  ASSERT_EQ(h.sizes(), (std::vector<std::int64_t>{1, face3d::kContourCount, 16, 16}));
  const auto ch = h[0][0];
  EXPECT_FLOAT_EQ(ch.max().item<float>(), 1.0f);
  EXPECT_FLOAT_EQ(ch[8][8].item<float>(), 1.0f);
  EXPECT_NEAR(ch[8][10].item<float>(), std::exp(-0.5), 1e-6);
}

TEST(Heatmap, MatchesDoubleLoop) {
  torch::manual_seed(3);
  const int H = 20, W = 24;
  const double sigma = 2.0;
  auto lm = (torch::rand({face3d::kContourCount, 2}, torch::kFloat64) * 30.0 - 3.0);
  auto h = heatmap_encode(lm, H, W, sigma);
  auto a = h.accessor<double, 3>();
  auto l = lm.accessor<double, 2>();
  double worst = 0;
  for (int k = 0; k < face3d::kContourCount; ++k)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double d2 = (x - l[k][0]) * (x - l[k][0]) + (y - l[k][1]) * (y - l[k][1]);
        worst = std::max(worst, std::abs(a[k][y][x] - std::exp(-d2 / (2 * sigma * sigma))));
      }
  EXPECT_LT(worst, 1e-7);
  EXPECT_GE(h.min().item<double>(), 0.0);
  EXPECT_LE(h.max().item<double>(), 1.0);
}

TEST(Heatmap, RejectsBadSigma) { EXPECT_THROW(heatmap_encode(torch::zeros({17, 2}), 8, 8, 0.0), ValidationError); }

TEST(GeneratorInput, FiftyThreeChannelsInOrder) {
  auto a = torch::full({2, 17, 8, 8}, 0.25f), b = torch::full({2, 17, 8, 8}, 0.5f);
  auto s = torch::ones({2, 19, 8, 8});
  auto x = generator_input(a, b, s);
  ASSERT_EQ(x.size(1), kGeneratorChannels);
  EXPECT_EQ(kGeneratorChannels, 53);
  EXPECT_TRUE(torch::equal(x.narrow(1, 0, 17), a));
  EXPECT_TRUE(torch::equal(x.narrow(1, 17, 17), b));
  EXPECT_TRUE(torch::equal(x.narrow(1, 34, 19), s));
  EXPECT_THROW(generator_input(a, b, torch::ones({2, 18, 8, 8})), ValidationError);
  EXPECT_THROW(generator_input(a, torch::ones({2, 17, 4, 4}), s), ValidationError);
}

TEST(Warp, ZeroFlowIsIdentity) {
  torch::manual_seed(1);
  auto img = torch::rand({2, 3, 9, 11}) * 2 - 1;
  EXPECT_TRUE(torch::equal(warp(img, uniform_flow(2, 9, 11, 0, 0)), img));

  Image im(9, 11);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 11; ++x)
      for (int k = 0; k < 3; ++k) im.at(y, x, k) = 0.05f * static_cast<float>(x - y + k);
  SegMap seg(9, 11);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 11; ++x) seg.at(y, x) = static_cast<std::uint8_t>((x + 2 * y) % face3d::kNumClasses);
  FlowField zero(9, 11);
  const auto [wi, ws] = warp(zero, im, seg);
  EXPECT_EQ(wi.data, im.data);
  EXPECT_EQ(ws.labels, seg.labels);
}

TEST(Warp, IntegerShiftReplicatesBorder) {
  torch::manual_seed(2);
  auto img = torch::rand({1, 3, 6, 7});
  auto out = warp(img, uniform_flow(1, 6, 7, 1, 0));
  EXPECT_TRUE(torch::equal(out.narrow(3, 0, 6), img.narrow(3, 1, 6)));
  EXPECT_TRUE(torch::equal(out.select(3, 6), img.select(3, 6)));
}

TEST(Warp, HalfPixelIsNeighbourMean) {
  torch::manual_seed(4);
  const int W = 10;
  auto ramp = torch::arange(W, torch::kFloat64).view({1, 1, 1, W}).expand({1, 3, 5, W}).contiguous();
  auto img = ramp + torch::rand({1, 3, 5, W}, torch::kFloat64);
  auto out = warp(img, uniform_flow(1, 5, W, 0.5, 0, torch::kFloat64));
  auto a = img.accessor<double, 4>();
  auto o = out.accessor<double, 4>();
  double worst = 0;
  for (int k = 0; k < 3; ++k)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < W; ++x) {
        const double expect = x + 1 < W ? 0.5 * (a[0][k][y][x] + a[0][k][y][x + 1]) : a[0][k][y][x];
        worst = std::max(worst, std::abs(o[0][k][y][x] - expect));
      }
  EXPECT_LT(worst, 1e-7);
}

TEST(Warp, IntegerFlowsCompose) {
  torch::manual_seed(5);
  const int H = 16, W = 16;
  auto img = torch::rand({1, 3, H, W});
  const int ax = 2, ay = -1, bx = -1, by = 3;
  auto twice = warp(warp(img, uniform_flow(1, H, W, ax, ay)), uniform_flow(1, H, W, bx, by));
  auto once = warp(img, uniform_flow(1, H, W, ax + bx, ay + by));
  const int band = std::abs(ax) + std::abs(bx) + std::abs(ay) + std::abs(by);
  auto inner = [&](const torch::Tensor& t) { return t.narrow(2, band, H - 2 * band).narrow(3, band, W - 2 * band); };
  EXPECT_TRUE(torch::equal(inner(twice), inner(once)));
}

TEST(Warp, GradientMatchesFiniteDifferences) {
  torch::manual_seed(6);
  auto img = torch::rand({1, 3, 8, 8}, torch::kFloat64);
  // Sub-pixel offsets keep every sample away from grid lines and the border clamp.
  auto flow = torch::rand({1, 2, 8, 8}, torch::kFloat64) * 0.6 + 0.2;
  flow.narrow(3, 6, 2).mul_(-1.0);
  flow.narrow(2, 6, 2).select(1, 1).mul_(-1.0);
  const auto r = evalsuite::finite_diff_gradcheck([&](const torch::Tensor& v) { return warp(img, v).sum(); }, flow, 1e-3, 1e-4);
  EXPECT_TRUE(r.passed) << r.message << " max rel " << r.max_rel_error;
  const auto ri = evalsuite::finite_diff_gradcheck([&](const torch::Tensor& i) { return (warp(i, flow) * warp(i, flow)).sum(); },
                                                   img, 1e-3, 1e-4);
  EXPECT_TRUE(ri.passed) << ri.message;
}

TEST(Warp, SegmentationIsReArgmaxed) {
  auto labels = torch::zeros({1, 4, 6}, torch::kInt64);
  labels.narrow(2, 3, 3).fill_(5);
  const auto r = warp_pair(uniform_flow(1, 4, 6, 1, 0), torch::zeros({1, 3, 4, 6}), one_hot_labels(labels));
  ASSERT_EQ(r.labels.sizes(), labels.sizes());
  EXPECT_EQ(r.labels[0][0][1].item<std::int64_t>(), 0);
  EXPECT_EQ(r.labels[0][0][2].item<std::int64_t>(), 5);
  EXPECT_EQ(r.labels[0][0][5].item<std::int64_t>(), 5);
}

TEST(Warp, ShapeMismatchThrows) {
  EXPECT_THROW(warp(torch::zeros({1, 3, 8, 8}), torch::zeros({1, 2, 8, 7})), ValidationError);
  EXPECT_THROW(warp(torch::zeros({1, 3, 8, 8}), torch::zeros({1, 3, 8, 8})), ValidationError);
}

TEST(Losses, DiscriminatorZeroOutput) {
  auto zeros = torch::zeros({4, 1, 3, 3});
  EXPECT_DOUBLE_EQ(nn::hinge_d_loss(zeros, zeros).item<double>(), 2.0);
  EXPECT_DOUBLE_EQ(nn::hinge_g_loss(zeros).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(nn::hinge_d_loss(torch::ones({4, 1, 3, 3}), -torch::ones({4, 1, 3, 3})).item<double>(), 0.0);
}

TEST(Losses, HingeMatchesPatchMean) {
  torch::manual_seed(7);
  auto real = torch::randn({3, 1, 5, 5}, torch::kFloat64) * 2, fake = torch::randn({3, 1, 5, 5}, torch::kFloat64) * 2;
  auto r = real.flatten();
  auto f = fake.flatten();
  double sr = 0, sf = 0;
  for (std::int64_t i = 0; i < r.numel(); ++i) {
    sr += std::max(0.0, 1.0 - r[i].item<double>());
    sf += std::max(0.0, 1.0 + f[i].item<double>());
  }
  const double expect = sr / static_cast<double>(r.numel()) + sf / static_cast<double>(f.numel());
  const double got = nn::hinge_d_loss(real, fake).item<double>();
  EXPECT_NEAR(got, expect, 1e-6);
  EXPECT_GE(got, 0.0);
}

TEST(Losses, HandBuiltTotal) {
  // Two 1-channel 2x2 images; only the first is a reconstruction pair.
  auto reshaped = torch::tensor({1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0}, torch::kFloat64).view({2, 1, 2, 2});
  auto target = torch::tensor({1.0, 1.0, 1.0, 1.0, 9.0, 9.0, 9.0, 9.0}, torch::kFloat64).view({2, 1, 2, 2});
  auto flag = torch::tensor({true, false});
  auto d_fake = torch::tensor({0.5, -1.5}, torch::kFloat64).view({2, 1, 1, 1});
  auto pred = torch::tensor({0.1, 0.2, 0.0, 0.0}, torch::kFloat64).view({2, 1, 2});
  auto s2t = torch::tensor({0.0, 0.0, 0.0, 0.4}, torch::kFloat64).view({2, 1, 2});
  const auto t = generator_losses(d_fake, reshaped, target, flag, pred, s2t, LossWeights{});
  const double adv = -(0.5 - 1.5) / 2;
  const double rec = (0 + 1 + 4 + 9) / 4.0;
  const double ldmk = (0.01 + 0.04 + 0.0 + 0.16) / 4.0;
  EXPECT_NEAR(t.adv.item<double>(), adv, 1e-12);
  EXPECT_NEAR(t.rec.item<double>(), rec, 1e-12);
  EXPECT_NEAR(t.ldmk.item<double>(), ldmk, 1e-12);
  EXPECT_NEAR(t.total.item<double>(), adv + 10 * rec + 800 * ldmk, 1e-9);
}

TEST(Losses, IdentityPairIsFree) {
  torch::manual_seed(8);
  auto img = torch::rand({2, 3, 8, 8});
  auto reshaped = warp(img, uniform_flow(2, 8, 8, 0, 0));
  auto lm = torch::rand({2, 17, 2});
  const auto t = generator_losses(torch::zeros({2, 1, 2, 2}), reshaped, img, torch::tensor({true, true}), lm, lm.clone(),
                                  LossWeights{});
  EXPECT_EQ(t.rec.item<double>(), 0.0);
  EXPECT_EQ(t.ldmk.item<double>(), 0.0);
  EXPECT_EQ(t.total.item<double>(), 0.0);
}

TEST(Losses, NoReconstructionRowsGivesZero) {
  auto t = masked_mse(torch::ones({3, 2}), torch::zeros({3, 2}), torch::tensor({false, false, false}));
  EXPECT_EQ(t.item<double>(), 0.0);
}

TEST(Losses, NegativeWeightsRejected) {
  auto z = torch::zeros({1, 1, 2, 2});
  EXPECT_THROW(generator_losses(z, z, z, torch::tensor({true}), torch::zeros({1, 17, 2}), torch::zeros({1, 17, 2}),
                                LossWeights{-1.0, 800.0}),
               ValidationError);
}

TEST(Discriminator, ChannelContract) {
  SemanticDiscriminator d(kDiscriminatorChannels, 8);
  EXPECT_EQ(kDiscriminatorChannels, 22);
  auto out = d(torch::rand({2, 22, 32, 32}));
  EXPECT_EQ(out.size(1), 1);
  EXPECT_THROW(d(torch::rand({2, 3, 32, 32})), ValidationError);
}

TEST(Discriminator, StepOnlyTouchesDiscriminator) {
  torch::manual_seed(9);
  SemanticDiscriminator d(kDiscriminatorChannels, 8);
  auto fake = torch::rand({1, 3, 32, 32}, torch::requires_grad());
  auto seg = torch::zeros({1, 19, 32, 32});
  auto loss = discriminator_step(d, torch::rand({1, 3, 32, 32}), seg, fake, seg);
  loss.backward();
  EXPECT_FALSE(fake.grad().defined());
  bool any = false;
  for (const auto& p : d->parameters())
    if (p.grad().defined() && p.grad().abs().sum().item<double>() > 0) any = true;
  EXPECT_TRUE(any);
}

TEST(Generator, ShapeFiniteAndClamped) {
  torch::manual_seed(10);
  for (int stride : {1, 4}) {
    NetConfig cfg;
    cfg.flow_stride = stride;
    FlowGenerator g(cfg);
    auto v = g(torch::rand({2, kGeneratorChannels, 32, 32}) * 100);
    EXPECT_EQ(v.sizes(), (std::vector<std::int64_t>{2, 2, 32, 32}));
    EXPECT_TRUE(torch::isfinite(v).all().item<bool>());
    EXPECT_LE(v.abs().max().item<double>(), 32.0);
  }
}

TEST(Config, JsonRoundTrip) {
  NetConfig n;
  n.flow_stride = 4;
  n.base_width = 12;
  EXPECT_EQ(NetConfig::from_json(n.to_json()).to_json(), n.to_json());
  TrainConfig t;
  t.weights.ldmk = 123;
  EXPECT_EQ(TrainConfig::from_json(t.to_json()).to_json(), t.to_json());
  EXPECT_EQ(TrainConfig{}.beta1, 0.0);
  EXPECT_EQ(TrainConfig{}.beta2, 0.99);
  EXPECT_EQ(TrainConfig{}.lr, 1e-4);
  EXPECT_EQ(TrainConfig{}.p_same, 0.1);
}

TEST(Pairs, HeldoutPairsCrossIdentityAndDeterministic) {
  const auto& d = small_data();
  const auto a = heldout_pairs(d.corpus, 6, 5), b = heldout_pairs(d.corpus, 6, 5);
  ASSERT_EQ(a, b);
  ASSERT_EQ(a.size(), 6u);
  for (const auto& [t, s] : a) EXPECT_NE(d.corpus.records[static_cast<std::size_t>(t)].identity_id, d.corpus.records[static_cast<std::size_t>(s)].identity_id);
}

TEST(Pairs, SameProbabilityOne) {
  const auto& d = small_data();
  Rng rng(3);
  const auto pb = sample_pairs(d.corpus, d.model, rng, 5, 1.0);
  EXPECT_TRUE(pb.is_reconstruction.all().item<bool>());
  EXPECT_TRUE(torch::equal(pb.target_rows, pb.source_rows));
  EXPECT_TRUE(torch::allclose(pb.landmarks_t, pb.landmarks_s2t, 0, 1e-4));
}

TEST(Train, ZeroStepsReturnsInitialization) {
  const auto& d = small_data();
  auxnets::LandmarkRegressor reg(8, 64);
  TrainConfig cfg;
  cfg.steps = 0;
  NetConfig net;
  const auto r = train_reshape(d.corpus, d.model, reg, net, cfg);
  EXPECT_TRUE(r.history.empty());
  seed_torch(cfg.seed);
  Model init(net);
  Checkpoint ref;
  ref.put_module("G.", *init.generator);
  ref.put_module("D.", *init.discriminator);
  for (const auto& [name, arr] : ref.arrays) {
    ASSERT_TRUE(r.checkpoint.arrays.count(name)) << name;
    EXPECT_TRUE(torch::equal(arr, r.checkpoint.arrays.at(name))) << name;
  }
}

TEST(Train, SeededRunsAreIdentical) {
  const auto& d = small_data();
  TrainConfig cfg;
  cfg.steps = 10;
  cfg.batch = 2;
  NetConfig net;
  net.base_width = 8;
  net.disc_width = 8;
  auto run = [&] {
    torch::manual_seed(77);
    auxnets::LandmarkRegressor reg(8, 64);
    return train_reshape(d.corpus, d.model, reg, net, cfg);
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.history.size(), 10u);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].total, b.history[i].total) << i;
    EXPECT_EQ(a.history[i].d_loss, b.history[i].d_loss) << i;
    EXPECT_TRUE(std::isfinite(a.history[i].total));
  }
  // The frozen regressor must not move.
  torch::manual_seed(77);
  auxnets::LandmarkRegressor fresh(8, 64);
  torch::manual_seed(77);
  auxnets::LandmarkRegressor used(8, 64);
  train_reshape(d.corpus, d.model, used, net, cfg);
  const auto pf = fresh->parameters(), pu = used->parameters();
  for (std::size_t i = 0; i < pf.size(); ++i) EXPECT_TRUE(torch::equal(pf[i], pu[i]));

  const auto m = load_model(a.checkpoint);
  EXPECT_EQ(m.net.base_width, 8);
}

TEST(Train, RejectsBadConfig) {
  const auto& d = small_data();
  auxnets::LandmarkRegressor reg(8, 64);
  TrainConfig cfg;
  cfg.beta1 = 1.0;
  EXPECT_THROW(train_reshape(d.corpus, d.model, reg, NetConfig{}, cfg), ValidationError);
}

TEST(WarpedPoint, InvertsUniformFlow) {
  FlowField f(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      f.dx(y, x) = 1.5f;
      f.dy(y, x) = -0.5f;
    }
  const auto q = warped_point(f, {8.0, 8.0});
  EXPECT_NEAR(q.x(), 6.5, 1e-6);
  EXPECT_NEAR(q.y(), 8.5, 1e-6);
}
