#include "flowface/auxnets.hpp"

#include "flowface/common.hpp"
#include "flowface/face3d.hpp"
#include "flowface/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace flowface::auxnets {
namespace F = torch::nn::functional;

namespace {

using nn::double_conv;
constexpr auto conv_stage = nn::conv_block;

torch::Tensor rows_of(const torch::Tensor& t, const torch::Tensor& rows) { return t.index_select(0, rows); }

void set_lr(torch::optim::AdamW& opt, double lr) {
  for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);
}

// Shared loop: AdamW, random minibatches, 10x learning-rate drop for the last 30%.
// Pixel std of the lattice offsets in the landmark regressor's warp augmentation.
constexpr double kWarpSigma = 2.5;

template <class Net, class Loss>
void fit(Net& net, const Corpus& c, const TrainConfig& cfg, const std::string& tag, Loss loss, const LogFn& log) {
  require(cfg.steps >= 0 && cfg.batch > 0 && cfg.lr > 0, tag + ": invalid training config");
  net->train();
  torch::optim::AdamW opt(net->parameters(), torch::optim::AdamWOptions(cfg.lr).weight_decay(1e-4));
  for (int step = 0; step < cfg.steps; ++step) {
    if (step == cfg.steps * 7 / 10) set_lr(opt, cfg.lr * 0.1);
    auto rows = torch::randint(c.size(), {cfg.batch}, torch::kInt64);
    auto x = rows_of(c.images, rows);
    if (cfg.augment) x = augment(x);
    auto l = loss(x, rows);
    if (!torch::isfinite(l).template item<bool>()) throw RuntimeAbort(tag + ": non-finite loss at step " + std::to_string(step));
    opt.zero_grad();
    l.backward();
    opt.step();
    if (log && (step % 100 == 0 || step + 1 == cfg.steps))
      log({{"stage", tag}, {"step", step}, {"loss", l.template item<double>()}});
  }
  net->eval();
}

Checkpoint make_checkpoint(const std::string& tag, const nlohmann::json& config, const TrainConfig& cfg,
                           const torch::nn::Module& net) {
  Checkpoint c;
  c.stage = tag;
  c.step = static_cast<std::uint64_t>(cfg.steps);
  c.config = config;
  c.config["train"] = cfg.to_json();
  c.put_module("net.", net);
  return c;
}

template <class Net>
Net restore(Net net, const Checkpoint& ckpt) {
  ckpt.get_module("net.", *net);
  nn::freeze(*net);
  return net;
}

}  // namespace

ConvBackboneImpl::ConvBackboneImpl(int width, int image_size) {
  require(width > 0 && image_size % 16 == 0, "ConvBackbone: image size must be a multiple of 16");
  torch::nn::Sequential body;
  body->extend(*conv_stage(3, width, 1));
  body->extend(*conv_stage(width, 2 * width, 2));
  body->extend(*conv_stage(2 * width, 4 * width, 2));
  body->extend(*conv_stage(4 * width, 4 * width, 2));
  body->extend(*conv_stage(4 * width, 8 * width, 2));
  body_ = register_module("body", body);
  features_ = 8 * width * (image_size / 16) * (image_size / 16);
}

torch::Tensor ConvBackboneImpl::forward(const torch::Tensor& x) { return body_->forward(x).flatten(1); }

IdEmbedderImpl::IdEmbedderImpl(int width, int identities, int image_size)
    : backbone_(register_module("backbone", ConvBackbone(width, image_size))),
      embed_(register_module("embed", torch::nn::Linear(backbone_->features(), kIdEmbedding))),
      classify_(register_module("classify", torch::nn::Linear(kIdEmbedding, identities))) {}

torch::Tensor IdEmbedderImpl::forward(const torch::Tensor& x) {
  return F::normalize(embed_(backbone_(x)), F::NormalizeFuncOptions().dim(1).eps(1e-12));
}

torch::Tensor IdEmbedderImpl::logits(const torch::Tensor& x) { return classify_(embed_(backbone_(x))); }

ExpEmbedderImpl::ExpEmbedderImpl(int width, int expression_dims, int image_size)
    : backbone_(register_module("backbone", ConvBackbone(width, image_size))),
      embed_(register_module("embed", torch::nn::Linear(backbone_->features(), kExpEmbedding))),
      head_(register_module("head", torch::nn::Linear(kExpEmbedding, expression_dims))) {}

torch::Tensor ExpEmbedderImpl::forward(const torch::Tensor& x) { return embed_(backbone_(x)); }
torch::Tensor ExpEmbedderImpl::regress(const torch::Tensor& x) { return head_(forward(x)); }

PoseRegressorImpl::PoseRegressorImpl(int width, int image_size)
    : backbone_(register_module("backbone", ConvBackbone(width, image_size))),
      fc1_(register_module("fc1", torch::nn::Linear(backbone_->features(), 64))),
      fc2_(register_module("fc2", torch::nn::Linear(64, 3))) {}

torch::Tensor PoseRegressorImpl::forward(const torch::Tensor& x) {
  return fc2_(F::leaky_relu(fc1_(backbone_(x)), F::LeakyReLUFuncOptions().negative_slope(0.2)));
}

LandmarkRegressorImpl::LandmarkRegressorImpl(int width, int image_size) : image_size_(image_size) {
  require(image_size % 8 == 0, "LandmarkRegressor: image size must be a multiple of 8");
  e0_ = register_module("e0", double_conv(5, width, 1));
  e1_ = register_module("e1", double_conv(width, 2 * width, 2));
  e2_ = register_module("e2", double_conv(2 * width, 4 * width, 2));
  e3_ = register_module("e3", double_conv(4 * width, 4 * width, 2));
  d2_ = register_module("d2", double_conv(8 * width, 4 * width, 1));
  d1_ = register_module("d1", double_conv(6 * width, 2 * width, 1));
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * width, face3d::kContourCount, 1)));
  temperature_ = register_parameter("log_temperature", torch::zeros({1}));
}

torch::Tensor LandmarkRegressorImpl::forward(const torch::Tensor& x) {
  const auto n = x.size(0);
  const auto h = x.size(2), w = x.size(3);
  auto opts = x.options();
  auto xs = torch::linspace(-1.0, 1.0, w, opts).view({1, 1, 1, w}).expand({n, 1, h, w});
  auto ys = torch::linspace(-1.0, 1.0, h, opts).view({1, 1, h, 1}).expand({n, 1, h, w});
  const auto up = nn::upsample2x;
  auto f0 = e0_->forward(torch::cat({x, xs, ys}, 1));
  auto f1 = e1_->forward(f0);
  auto f2 = e2_->forward(f1);
  auto f3 = e3_->forward(f2);
  auto g2 = d2_->forward(torch::cat({up(f3), f2}, 1));
  auto g1 = d1_->forward(torch::cat({up(g2), f1}, 1));
  auto logits = head_(g1) * torch::exp(temperature_);
  const auto hh = logits.size(2), ww = logits.size(3);
  auto prob = torch::softmax(logits.flatten(2), -1).view({n, face3d::kContourCount, hh, ww});
  // Cell centres of the half-resolution grid in input pixel coordinates.
  const double sx = static_cast<double>(w) / static_cast<double>(ww);
  const double sy = static_cast<double>(h) / static_cast<double>(hh);
  auto cx = (torch::arange(ww, opts) + 0.5) * sx - 0.5;
  auto cy = (torch::arange(hh, opts) + 0.5) * sy - 0.5;
  auto px = (prob.sum(2) * cx).sum(-1);
  auto py = (prob.sum(3) * cy).sum(-1);
  return torch::stack({px, py}, -1);
}

PerceptualNetImpl::PerceptualNetImpl(int width) {
  s1_ = register_module("s1", double_conv(3, width, 2));
  s2_ = register_module("s2", double_conv(width, 2 * width, 2));
  s3_ = register_module("s3", double_conv(2 * width, 4 * width, 2));
  const auto up = torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2, 2});
  torch::nn::Sequential dec;
  dec->push_back(torch::nn::Upsample(up));
  dec->extend(*conv_stage(4 * width, 2 * width, 1));
  dec->push_back(torch::nn::Upsample(up));
  dec->extend(*conv_stage(2 * width, width, 1));
  dec->push_back(torch::nn::Upsample(up));
  dec->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(width, 3, 3).padding(1)));
  dec->push_back(torch::nn::Tanh());
  decoder_ = register_module("decoder", dec);
}

std::vector<torch::Tensor> PerceptualNetImpl::features(const torch::Tensor& x) {
  auto a = s2_->forward(s1_->forward(x));
  auto b = s3_->forward(a);
  return {a, b};
}

torch::Tensor PerceptualNetImpl::forward(const torch::Tensor& x) { return decoder_->forward(features(x)[1]); }

torch::Tensor perceptual_distance(PerceptualNet& net, const torch::Tensor& a, const torch::Tensor& b) {
  auto fa = net->features(a);
  auto fb = net->features(b);
  return (fa[0] - fb[0]).pow(2).mean() + (fa[1] - fb[1]).pow(2).mean();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps}, {"batch", batch}, {"lr", lr}, {"width", width}, {"seed", seed}, {"augment", augment}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.steps = j.at("steps").get<int>();
  c.batch = j.at("batch").get<int>();
  c.lr = j.at("lr").get<double>();
  c.width = j.at("width").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.augment = j.at("augment").get<bool>();
  return c;
}

torch::Tensor augment(const torch::Tensor& images) {
  const auto n = images.size(0);
  auto gain = 1.0 + 0.08 * (torch::rand({n, 1, 1, 1}) * 2.0 - 1.0);
  auto bias = 0.05 * (torch::rand({n, 1, 1, 1}) * 2.0 - 1.0);
  auto blurred = F::avg_pool2d(images, F::AvgPool2dFuncOptions(3).stride(1).padding(1).count_include_pad(false));
  auto mix = torch::rand({n, 1, 1, 1}) * (torch::rand({n, 1, 1, 1}) < 0.5).to(torch::kFloat32);
  auto x = images * (1.0 - mix) + blurred * mix;
  auto noise = torch::randn_like(images) * (0.04 * torch::rand({n, 1, 1, 1}));
  return (x * gain + bias + noise).clamp(-1.0, 1.0);
}

WarpedLandmarks random_smooth_warp(const torch::Tensor& images, const torch::Tensor& landmarks, double sigma, int grid) {
  require(images.dim() == 4 && landmarks.dim() == 3 && images.size(0) == landmarks.size(0), "random_smooth_warp: shape mismatch");
  require(sigma >= 0 && grid >= 2, "random_smooth_warp: invalid sigma or grid");
  const auto n = images.size(0), h = images.size(2), w = images.size(3);
  auto coarse = torch::randn({n, 2, grid, grid}, images.options()) * sigma;
  auto flow = F::interpolate(coarse, F::InterpolateFuncOptions()
                                         .size(std::vector<std::int64_t>{h, w})
                                         .mode(torch::kBilinear)
                                         .align_corners(true));
  // Pixel coordinates -> grid_sample's [-1, 1] with align_corners.
  auto to_unit = [&](const torch::Tensor& xy) {
    return torch::stack({xy.select(-1, 0) * (2.0 / static_cast<double>(w - 1)) - 1.0,
                         xy.select(-1, 1) * (2.0 / static_cast<double>(h - 1)) - 1.0},
                        -1);
  };
  const auto gs = F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(true);
  auto xs = torch::arange(w, images.options()).view({1, 1, w}).expand({n, h, w});
  auto ys = torch::arange(h, images.options()).view({1, h, 1}).expand({n, h, w});
  auto src = torch::stack({xs + flow.select(1, 0), ys + flow.select(1, 1)}, -1);
  WarpedLandmarks out;
  out.images = F::grid_sample(images, to_unit(src), gs);
  // Content at p lands at q with q + V(q) = p; smooth small fields converge quickly.
  auto q = landmarks.clone();
  for (int it = 0; it < 20; ++it) {
    auto v = F::grid_sample(flow, to_unit(q).unsqueeze(1), gs).squeeze(2);  // N x 2 x 17
    q = landmarks - v.transpose(1, 2);
  }
  out.landmarks = q;
  return out;
}

Checkpoint train_id_embedder(const Corpus& c, const TrainConfig& cfg, const std::string& tag, const LogFn& log) {
  const int ids = static_cast<int>(c.identity.max().item<std::int64_t>()) + 1;
  require(ids >= 2, "train_id_embedder: need at least 2 identities");
  seed_torch(cfg.seed);
  IdEmbedder net(cfg.width, ids, c.image_size().width);
  fit(net, c, cfg, tag,
      [&](const torch::Tensor& x, const torch::Tensor& rows) {
        return F::cross_entropy(net->logits(x), rows_of(c.identity, rows));
      },
      log);
  return make_checkpoint(tag, {{"kind", "id"}, {"width", cfg.width}, {"identities", ids}, {"image_size", c.image_size().width}},
                         cfg, *net);
}

Checkpoint train_exp_embedder(const Corpus& c, const TrainConfig& cfg, const std::string& tag, const LogFn& log) {
  const int dims = static_cast<int>(c.psi.size(1));
  seed_torch(cfg.seed);
  ExpEmbedder net(cfg.width, dims, c.image_size().width);
  fit(net, c, cfg, tag,
      [&](const torch::Tensor& x, const torch::Tensor& rows) { return F::mse_loss(net->regress(x), rows_of(c.psi, rows)); },
      log);
  return make_checkpoint(tag, {{"kind", "exp"}, {"width", cfg.width}, {"expression_dims", dims}, {"image_size", c.image_size().width}},
                         cfg, *net);
}

Checkpoint train_landmark_regressor(const Corpus& c, const TrainConfig& cfg, const LogFn& log) {
  seed_torch(cfg.seed);
  LandmarkRegressor net(cfg.width, c.image_size().width);
  fit(net, c, cfg, kLandmarkTag,
      [&](const torch::Tensor& x, const torch::Tensor& rows) {
        auto target = rows_of(c.landmarks, rows);
        if (!cfg.augment) return (net->forward(x) - target).abs().mean();
        // Half of each batch goes through a random smooth warp.
        const auto half = x.size(0) / 2;
        auto warped = random_smooth_warp(x.narrow(0, 0, half), target.narrow(0, 0, half), kWarpSigma);
        auto xx = torch::cat({warped.images, x.narrow(0, half, x.size(0) - half)});
        auto tt = torch::cat({warped.landmarks, target.narrow(0, half, x.size(0) - half)});
        return (net->forward(xx) - tt).abs().mean();
      },
      log);
  return make_checkpoint(kLandmarkTag, {{"kind", "landmark"}, {"width", cfg.width}, {"image_size", c.image_size().width}}, cfg, *net);
}

Checkpoint train_pose_regressor(const Corpus& c, const TrainConfig& cfg, const LogFn& log) {
  seed_torch(cfg.seed);
  PoseRegressor net(cfg.width, c.image_size().width);
  fit(net, c, cfg, kPoseTag,
      [&](const torch::Tensor& x, const torch::Tensor& rows) { return F::mse_loss(net->forward(x), rows_of(c.rotation, rows)); },
      log);
  return make_checkpoint(kPoseTag, {{"kind", "pose"}, {"width", cfg.width}, {"image_size", c.image_size().width}}, cfg, *net);
}

Checkpoint train_perceptual(const Corpus& c, const TrainConfig& cfg, const LogFn& log) {
  seed_torch(cfg.seed);
  PerceptualNet net(cfg.width);
  fit(net, c, cfg, kPerceptualTag,
      [&](const torch::Tensor& x, const torch::Tensor&) { return F::mse_loss(net->forward(x), x); }, log);
  return make_checkpoint(kPerceptualTag, {{"kind", "perceptual"}, {"width", cfg.width}}, cfg, *net);
}

IdEmbedder load_id_embedder(const Checkpoint& ckpt) {
  require(ckpt.config.value("kind", "") == "id", "checkpoint " + ckpt.stage + " is not an identity embedder");
  return restore(IdEmbedder(ckpt.config.at("width").get<int>(), ckpt.config.at("identities").get<int>(),
                            ckpt.config.at("image_size").get<int>()),
                 ckpt);
}

ExpEmbedder load_exp_embedder(const Checkpoint& ckpt) {
  require(ckpt.config.value("kind", "") == "exp", "checkpoint " + ckpt.stage + " is not an expression embedder");
  return restore(ExpEmbedder(ckpt.config.at("width").get<int>(), ckpt.config.at("expression_dims").get<int>(),
                             ckpt.config.at("image_size").get<int>()),
                 ckpt);
}

LandmarkRegressor load_landmark_regressor(const Checkpoint& ckpt) {
  require(ckpt.config.value("kind", "") == "landmark", "checkpoint " + ckpt.stage + " is not a landmark regressor");
  return restore(LandmarkRegressor(ckpt.config.at("width").get<int>(), ckpt.config.at("image_size").get<int>()), ckpt);
}

PoseRegressor load_pose_regressor(const Checkpoint& ckpt) {
  require(ckpt.config.value("kind", "") == "pose", "checkpoint " + ckpt.stage + " is not a pose regressor");
  return restore(PoseRegressor(ckpt.config.at("width").get<int>(), ckpt.config.at("image_size").get<int>()), ckpt);
}

PerceptualNet load_perceptual(const Checkpoint& ckpt) {
  require(ckpt.config.value("kind", "") == "perceptual", "checkpoint " + ckpt.stage + " is not a perceptual net");
  return restore(PerceptualNet(ckpt.config.at("width").get<int>()), ckpt);
}

torch::Tensor batched(const torch::Tensor& images, int chunk, const std::function<torch::Tensor(const torch::Tensor&)>& fn) {
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < images.size(0); i += chunk)
    parts.push_back(fn(images.slice(0, i, std::min<std::int64_t>(images.size(0), i + chunk))));
  return torch::cat(parts, 0);
}

double id_accuracy(IdEmbedder& net, const Corpus& c) {
  auto logits = batched(c.images, 64, [&](const torch::Tensor& x) { return net->logits(x); });
  return logits.argmax(1).eq(c.identity).to(torch::kFloat64).mean().item<double>();
}

double id_margin(IdEmbedder& net, const Corpus& c) {
  auto e = batched(c.images, 64, [&](const torch::Tensor& x) { return net->forward(x); }).to(torch::kFloat64);
  auto cos = torch::matmul(e, e.t());
  auto same = c.identity.unsqueeze(0).eq(c.identity.unsqueeze(1));
  auto off_diag = torch::ones_like(same).triu(1) + torch::ones_like(same).tril(-1);
  auto same_mask = same & off_diag.to(torch::kBool);
  auto cross_mask = ~same;
  const double s = cos.masked_select(same_mask).mean().item<double>();
  const double x = cos.masked_select(cross_mask).mean().item<double>();
  return s - x;
}

double exp_mse(ExpEmbedder& net, const Corpus& c) {
  auto pred = batched(c.images, 64, [&](const torch::Tensor& x) { return net->regress(x); });
  return F::mse_loss(pred, c.psi).item<double>();
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && a.size() >= 2, "spearman: need two equal-length samples");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

double exp_spearman(ExpEmbedder& net, const Corpus& c, int pairs, std::uint64_t seed) {
  auto e = batched(c.images, 64, [&](const torch::Tensor& x) { return net->forward(x); }).to(torch::kFloat64);
  auto psi = c.psi.to(torch::kFloat64);
  Rng rng(seed);
  std::vector<double> de, dp;
  for (int k = 0; k < pairs; ++k) {
    const auto i = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(c.size())));
    auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(c.size() - 1)));
    if (j >= i) ++j;
    de.push_back((e[i] - e[j]).norm().item<double>());
    dp.push_back((psi[i] - psi[j]).norm().item<double>());
  }
  return spearman(de, dp);
}

double landmark_error(LandmarkRegressor& net, const Corpus& c) {
  auto pred = batched(c.images, 64, [&](const torch::Tensor& x) { return net->forward(x); });
  return (pred - c.landmarks).norm(2, -1).mean().item<double>();
}

double pose_error_deg(PoseRegressor& net, const Corpus& c) {
  auto pred = batched(c.images, 64, [&](const torch::Tensor& x) { return net->forward(x); }).to(torch::kFloat64);
  auto truth = c.rotation.to(torch::kFloat64);
  double sum = 0;
  for (int i = 0; i < c.size(); ++i) {
    const Eigen::Vector3d a(pred[i][0].item<double>(), pred[i][1].item<double>(), pred[i][2].item<double>());
    const Eigen::Vector3d b(truth[i][0].item<double>(), truth[i][1].item<double>(), truth[i][2].item<double>());
    sum += face3d::rotation_geodesic_deg(face3d::axis_angle_to_matrix(a), face3d::axis_angle_to_matrix(b));
  }
  return sum / c.size();
}

double perceptual_triplet_rate(PerceptualNet& net, const Corpus& c, int triples, std::uint64_t seed) {
  torch::NoGradGuard guard;
  torch::manual_seed(seed);
  Rng rng(seed);
  int ok = 0;
  for (int k = 0; k < triples; ++k) {
    const auto a = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(c.size())));
    std::int64_t b = a;
    while (c.records[static_cast<std::size_t>(b)].identity_id == c.records[static_cast<std::size_t>(a)].identity_id)
      b = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(c.size())));
    auto anchor = c.images.slice(0, a, a + 1);
    auto copy = augment(anchor);
    auto other = c.images.slice(0, b, b + 1);
    if (perceptual_distance(net, anchor, copy).item<double>() < perceptual_distance(net, anchor, other).item<double>()) ++ok;
  }
  return static_cast<double>(ok) / triples;
}

}  // namespace flowface::auxnets
