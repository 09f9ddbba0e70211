#include "flowface/reshape.hpp"

#include <bit>

#include "flowface/common.hpp"
#include "flowface/synthdata.hpp"

#include <cmath>

namespace flowface::reshape {
namespace {

void check_image_batch(const torch::Tensor& t, const char* what) {
  require(t.dim() == 4, std::string(what) + " must be N x C x H x W");
}

double bilinear(const FlowField& f, double x, double y, int channel) {
  x = std::clamp(x, 0.0, static_cast<double>(f.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(f.height - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, f.width - 1), y1 = std::min(y0 + 1, f.height - 1);
  const double wx = x - x0, wy = y - y0;
  auto v = [&](int yy, int xx) { return static_cast<double>(channel == 0 ? f.dx(yy, xx) : f.dy(yy, xx)); };
  return (1 - wy) * ((1 - wx) * v(y0, x0) + wx * v(y0, x1)) + wy * ((1 - wx) * v(y1, x0) + wx * v(y1, x1));
}

face3d::FaceParams source_shape_params(const face3d::FaceParams& source, const face3d::FaceParams& target) {
  face3d::FaceParams p = target;
  p.beta = source.beta;
  return p;
}

}  // namespace

torch::Tensor heatmap_encode(const torch::Tensor& landmarks, int height, int width, double sigma) {
  require(sigma > 0.0, "heatmap_encode: sigma must be positive");
  require(landmarks.size(-1) == 2, "heatmap_encode: landmarks must end in a 2-vector");
  auto opts = landmarks.options();
  auto xs = torch::arange(width, opts);
  auto ys = torch::arange(height, opts);
  auto lx = landmarks.select(-1, 0).unsqueeze(-1);
  auto ly = landmarks.select(-1, 1).unsqueeze(-1);
  auto gx = torch::exp(-(xs - lx).pow(2) / (2.0 * sigma * sigma));  // ... x 17 x W
  auto gy = torch::exp(-(ys - ly).pow(2) / (2.0 * sigma * sigma));  // ... x 17 x H
  return gy.unsqueeze(-1) * gx.unsqueeze(-2);
}

torch::Tensor heatmap_encode(const face3d::LandmarkSet& landmarks, int height, int width, double sigma) {
  return heatmap_encode(landmarks_tensor(landmarks).to(torch::kFloat64), height, width, sigma).to(torch::kFloat32);
}

torch::Tensor generator_input(const torch::Tensor& heat_s2t, const torch::Tensor& heat_t, const torch::Tensor& seg_one_hot) {
  require(heat_s2t.size(1) == face3d::kContourCount && heat_t.size(1) == face3d::kContourCount,
          "generator_input: expected 17 heatmap channels per landmark set");
  require(seg_one_hot.size(1) == face3d::kNumClasses, "generator_input: expected 19 segmentation channels");
  require(heat_s2t.sizes() == heat_t.sizes() && heat_t.size(2) == seg_one_hot.size(2) && heat_t.size(3) == seg_one_hot.size(3),
          "generator_input: spatial sizes differ");
  return torch::cat({heat_s2t, heat_t, seg_one_hot}, 1);
}

torch::Tensor warp(const torch::Tensor& input, const torch::Tensor& flow) {
  check_image_batch(input, "warp input");
  check_image_batch(flow, "warp flow");
  require(flow.size(1) == 2, "warp: flow must have 2 channels");
  require(input.size(0) == flow.size(0) && input.size(2) == flow.size(2) && input.size(3) == flow.size(3),
          "warp: input and flow shapes disagree");
  const auto n = input.size(0), c = input.size(1), h = input.size(2), w = input.size(3);
  auto opts = flow.options();
  auto gx = torch::arange(w, opts).view({1, 1, w});
  auto gy = torch::arange(h, opts).view({1, h, 1});
  auto sx = (gx + flow.select(1, 0)).clamp(0.0, static_cast<double>(w - 1));
  auto sy = (gy + flow.select(1, 1)).clamp(0.0, static_cast<double>(h - 1));
  auto x0 = sx.detach().floor();
  auto y0 = sy.detach().floor();
  auto wx = (sx - x0).unsqueeze(1);
  auto wy = (sy - y0).unsqueeze(1);
  auto x0i = x0.to(torch::kInt64), y0i = y0.to(torch::kInt64);
  auto x1i = (x0i + 1).clamp_max(w - 1), y1i = (y0i + 1).clamp_max(h - 1);
  auto flat = input.reshape({n, c, h * w});
  auto gather = [&](const torch::Tensor& yi, const torch::Tensor& xi) {
    auto idx = (yi * w + xi).reshape({n, 1, h * w}).expand({n, c, h * w});
    return flat.gather(2, idx).reshape({n, c, h, w});
  };
  auto v00 = gather(y0i, x0i), v01 = gather(y0i, x1i), v10 = gather(y1i, x0i), v11 = gather(y1i, x1i);
  return v00 * ((1 - wx) * (1 - wy)) + v01 * (wx * (1 - wy)) + v10 * ((1 - wx) * wy) + v11 * (wx * wy);
}

WarpedPair warp_pair(const torch::Tensor& flow, const torch::Tensor& image, const torch::Tensor& seg_one_hot) {
  WarpedPair out;
  out.image = warp(image, flow);
  out.labels = warp(seg_one_hot, flow).argmax(1);
  return out;
}

std::pair<Image, SegMap> warp(const FlowField& flow, const Image& image, const SegMap& seg) {
  require(flow.height == image.height && flow.width == image.width && seg.height == image.height && seg.width == image.width,
          "warp: flow, image and segmentation sizes differ");
  auto f = flow_to_tensor(flow).unsqueeze(0);
  auto r = warp_pair(f, to_tensor(image).unsqueeze(0), one_hot_labels(labels_tensor(seg)).unsqueeze(0));
  return {image_from_tensor(r.image[0]), segmap_from_tensor(r.labels[0])};
}

nlohmann::json NetConfig::to_json() const {
  return {{"base_width", base_width}, {"levels", levels}, {"disc_width", disc_width},
          {"flow_scale", flow_scale}, {"flow_stride", flow_stride}, {"heatmap_sigma", heatmap_sigma}};
}

NetConfig NetConfig::from_json(const nlohmann::json& j) {
  NetConfig c;
  c.base_width = j.at("base_width").get<int>();
  c.levels = j.at("levels").get<int>();
  c.disc_width = j.at("disc_width").get<int>();
  c.flow_scale = j.at("flow_scale").get<double>();
  c.flow_stride = j.at("flow_stride").get<int>();
  c.heatmap_sigma = j.at("heatmap_sigma").get<double>();
  return c;
}

FlowGeneratorImpl::FlowGeneratorImpl(const NetConfig& cfg) : cfg_(cfg) {
  require(cfg.base_width > 0 && cfg.levels >= 1 && cfg.levels <= 6, "FlowGenerator: invalid width or depth");
  require(cfg.flow_stride >= 1 && (cfg.flow_stride & (cfg.flow_stride - 1)) == 0 && cfg.flow_stride <= (1 << cfg.levels),
          "FlowGenerator: flow_stride must be a power of two no larger than 2^levels");
  const int out_level = std::countr_zero(static_cast<unsigned>(cfg.flow_stride));
  down_ = register_module("down", torch::nn::ModuleList());
  up_ = register_module("up", torch::nn::ModuleList());
  auto width = [&](int level) { return cfg.base_width * (1 << std::min(level, 3)); };
  down_->push_back(nn::double_conv(kGeneratorChannels, width(0), 1));
  for (int l = 1; l <= cfg.levels; ++l) down_->push_back(nn::double_conv(width(l - 1), width(l), 2));
  for (int l = cfg.levels - 1; l >= out_level; --l) up_->push_back(nn::double_conv(width(l + 1) + width(l), width(l), 1));
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(width(out_level), 2, 3).padding(1)));
}

torch::Tensor FlowGeneratorImpl::forward(const torch::Tensor& x) {
  require(x.dim() == 4 && x.size(1) == kGeneratorChannels, "FlowGenerator: input must have 53 channels");
  const auto divisor = std::int64_t{1} << cfg_.levels;
  require(x.size(2) % divisor == 0 && x.size(3) % divisor == 0, "FlowGenerator: image size not divisible by 2^levels");
  std::vector<torch::Tensor> skips;
  auto h = x;
  for (std::size_t i = 0; i < down_->size(); ++i) {
    h = down_[i]->as<torch::nn::Sequential>()->forward(h);
    skips.push_back(h);
  }
  for (std::size_t i = 0; i < up_->size(); ++i) {
    const auto& skip = skips[skips.size() - 2 - i];
    h = up_[i]->as<torch::nn::Sequential>()->forward(torch::cat({nn::upsample2x(h), skip}, 1));
  }
  auto flow = head_(h) * cfg_.flow_scale;
  if (cfg_.flow_stride > 1) {
    namespace F = torch::nn::functional;
    flow = F::interpolate(flow, F::InterpolateFuncOptions()
                                    .size(std::vector<std::int64_t>{x.size(2), x.size(3)})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
  }
  const double bound = static_cast<double>(x.size(2));
  return flow.clamp(-bound, bound);
}

SemanticDiscriminatorImpl::SemanticDiscriminatorImpl(int in_channels, int width)
    : in_channels_(in_channels),
      c1_(register_module("c1", nn::SNConv2d(in_channels, width, 4, 2, 1))),
      c2_(register_module("c2", nn::SNConv2d(width, 2 * width, 4, 2, 1))),
      c3_(register_module("c3", nn::SNConv2d(2 * width, 4 * width, 4, 2, 1))),
      out_(register_module("out", nn::SNConv2d(4 * width, 1, 3, 1, 1))) {}

torch::Tensor SemanticDiscriminatorImpl::forward(const torch::Tensor& x) {
  require(x.dim() == 4 && x.size(1) == in_channels_,
          "discriminator expects " + std::to_string(in_channels_) + " input channels, got " + std::to_string(x.size(1)));
  namespace F = torch::nn::functional;
  const auto act = F::LeakyReLUFuncOptions().negative_slope(0.2);
  auto h = F::leaky_relu(c1_(x), act);
  h = F::leaky_relu(c2_(h), act);
  h = F::leaky_relu(c3_(h), act);
  return out_(h);
}

torch::Tensor masked_mse(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& mask) {
  const auto count = mask.sum().item<std::int64_t>();
  if (count == 0) return torch::zeros({}, a.options());
  auto per_sample = (a - b).pow(2).flatten(1).mean(1);
  return per_sample.masked_select(mask).sum() / static_cast<double>(count);
}

LossTerms generator_losses(const torch::Tensor& fake_logits, const torch::Tensor& reshaped, const torch::Tensor& target,
                           const torch::Tensor& is_reconstruction, const torch::Tensor& predicted_landmarks,
                           const torch::Tensor& s2t_landmarks, const LossWeights& w) {
  require(w.rec >= 0 && w.ldmk >= 0, "loss weights must be non-negative");
  LossTerms t;
  t.adv = nn::hinge_g_loss(fake_logits);
  t.rec = masked_mse(reshaped, target, is_reconstruction);
  t.ldmk = (predicted_landmarks - s2t_landmarks).pow(2).mean();
  t.total = t.adv + w.rec * t.rec + w.ldmk * t.ldmk;
  return t;
}

torch::Tensor discriminator_step(SemanticDiscriminator& d, const torch::Tensor& real_image, const torch::Tensor& real_seg,
                                 const torch::Tensor& fake_image, const torch::Tensor& fake_seg) {
  auto real = d(torch::cat({real_image, real_seg}, 1));
  auto fake = d(torch::cat({fake_image.detach(), fake_seg.detach()}, 1));
  return nn::hinge_d_loss(real, fake);
}

PairBatch make_pairs(const Corpus& corpus, const face3d::BlendModel& model, const std::vector<std::pair<int, int>>& pairs) {
  const auto n = static_cast<std::int64_t>(pairs.size());
  PairBatch b;
  b.target_rows = torch::empty({n}, torch::kInt64);
  b.source_rows = torch::empty({n}, torch::kInt64);
  b.is_reconstruction = torch::empty({n}, torch::kBool);
  b.landmarks_t = torch::empty({n, face3d::kContourCount, 2});
  b.landmarks_s2t = torch::empty({n, face3d::kContourCount, 2});
  const auto size = corpus.image_size();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto [t, s] = pairs[static_cast<std::size_t>(i)];
    require(t >= 0 && t < corpus.size() && s >= 0 && s < corpus.size(), "make_pairs: row out of range");
    const auto& rt = corpus.records[static_cast<std::size_t>(t)];
    const auto& rs = corpus.records[static_cast<std::size_t>(s)];
    b.target_rows[i] = t;
    b.source_rows[i] = s;
    b.is_reconstruction[i] = (t == s);
    const auto lm = face3d::cross_identity_landmarks(model, rs.params, rt.params, size);
    b.landmarks_t[i] = landmarks_tensor(lm.target);
    b.landmarks_s2t[i] = landmarks_tensor(lm.source_to_target);
  }
  return b;
}

namespace {

int other_identity_row(const Corpus& corpus, int row, Rng& rng) {
  const int id = corpus.records[static_cast<std::size_t>(row)].identity_id;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const int s = static_cast<int>(rng.below(static_cast<std::uint64_t>(corpus.size())));
    if (corpus.records[static_cast<std::size_t>(s)].identity_id != id) return s;
  }
  throw ValidationError("pair sampling needs at least two identities");
}

}  // namespace

PairBatch sample_pairs(const Corpus& corpus, const face3d::BlendModel& model, Rng& rng, int batch, double p_same) {
  require(batch > 0 && p_same >= 0.0 && p_same <= 1.0, "sample_pairs: invalid batch or probability");
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < batch; ++i) {
    const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(corpus.size())));
    pairs.emplace_back(t, rng.bernoulli(p_same) ? t : other_identity_row(corpus, t, rng));
  }
  return make_pairs(corpus, model, pairs);
}

std::vector<std::pair<int, int>> heldout_pairs(const Corpus& corpus, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < count; ++i) {
    const int t = i % corpus.size();
    pairs.emplace_back(t, other_identity_row(corpus, t, rng));
  }
  return pairs;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps}, {"batch", batch}, {"lr", lr}, {"beta1", beta1}, {"beta2", beta2}, {"p_same", p_same},
          {"lambda_rec", weights.rec}, {"lambda_ldmk", weights.ldmk}, {"seed", seed}, {"log_every", log_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.steps = j.at("steps").get<int>();
  c.batch = j.at("batch").get<int>();
  c.lr = j.at("lr").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.p_same = j.at("p_same").get<double>();
  c.weights.rec = j.at("lambda_rec").get<double>();
  c.weights.ldmk = j.at("lambda_ldmk").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.log_every = j.at("log_every").get<int>();
  return c;
}

Model::Model(const NetConfig& cfg)
    : net(cfg), generator(FlowGenerator(cfg)), discriminator(SemanticDiscriminator(kDiscriminatorChannels, cfg.disc_width)) {}

torch::Tensor estimate_flow(FlowGenerator& g, const NetConfig& net, const torch::Tensor& landmarks_s2t,
                            const torch::Tensor& landmarks_t, const torch::Tensor& seg_one_hot) {
  require(seg_one_hot.dim() == 4, "estimate_flow: segmentation must be N x 19 x H x W");
  require(landmarks_s2t.size(0) == seg_one_hot.size(0) && landmarks_t.size(0) == seg_one_hot.size(0),
          "estimate_flow: batch sizes differ");
  const auto h = static_cast<int>(seg_one_hot.size(2)), w = static_cast<int>(seg_one_hot.size(3));
  auto x = generator_input(heatmap_encode(landmarks_s2t, h, w, net.heatmap_sigma), heatmap_encode(landmarks_t, h, w, net.heatmap_sigma),
                           seg_one_hot);
  return g(x);
}

FlowField estimate_flow(FlowGenerator& g, const NetConfig& net, const face3d::LandmarkSet& s2t, const face3d::LandmarkSet& t,
                        const SegMap& seg) {
  torch::NoGradGuard guard;
  auto f = estimate_flow(g, net, landmarks_tensor(s2t).unsqueeze(0), landmarks_tensor(t).unsqueeze(0),
                         one_hot_labels(labels_tensor(seg)).unsqueeze(0));
  return flow_from_tensor(f[0]);
}

TrainResult train_reshape(const Corpus& corpus, const face3d::BlendModel& model, auxnets::LandmarkRegressor& regressor,
                          const NetConfig& net, const TrainConfig& cfg, const LogFn& log) {
  require(cfg.steps >= 0 && cfg.batch > 0 && cfg.lr > 0, "train_reshape: invalid steps, batch or learning rate");
  require(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1, "train_reshape: Adam betas out of range");
  seed_torch(cfg.seed);
  Model m(net);
  nn::freeze(*regressor);
  const auto adam = torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2});
  torch::optim::Adam opt_g(m.generator->parameters(), adam);
  torch::optim::Adam opt_d(m.discriminator->parameters(), adam);
  Rng rng(mix64(cfg.seed ^ 0x2e5a9eULL));
  const auto size = corpus.image_size();
  TrainResult result;
  m.generator->train();
  m.discriminator->train();
  for (int step = 0; step < cfg.steps; ++step) {
    const PairBatch pb = sample_pairs(corpus, model, rng, cfg.batch, cfg.p_same);
    auto image_t = corpus.images.index_select(0, pb.target_rows);
    auto seg_t = corpus.seg_one_hot(pb.target_rows);
    auto flow = estimate_flow(m.generator, net, pb.landmarks_s2t, pb.landmarks_t, seg_t);
    auto reshaped = warp(image_t, flow);
    torch::Tensor reshaped_seg;
    {
      torch::NoGradGuard guard;
      reshaped_seg = one_hot_labels(warp(seg_t, flow).argmax(1));
    }

    auto d_loss = discriminator_step(m.discriminator, image_t, seg_t, reshaped, reshaped_seg);
    opt_d.zero_grad();
    d_loss.backward();
    opt_d.step();

    auto fake = m.discriminator(torch::cat({reshaped, reshaped_seg}, 1));
    auto predicted = regressor(reshaped);
    auto terms = generator_losses(fake, reshaped, image_t, pb.is_reconstruction, normalize_landmarks(predicted, size),
                                  normalize_landmarks(pb.landmarks_s2t, size), cfg.weights);
    opt_g.zero_grad();
    terms.total.backward();
    opt_g.step();

    StepLog s{step, d_loss.item<double>(), terms.adv.item<double>(), terms.rec.item<double>(), terms.ldmk.item<double>(),
              terms.total.item<double>()};
    if (!std::isfinite(s.total) || !std::isfinite(s.d_loss))
      throw RuntimeAbort("train_reshape: non-finite loss at step " + std::to_string(step) + " (adv " + std::to_string(s.adv) +
                         ", rec " + std::to_string(s.rec) + ", ldmk " + std::to_string(s.ldmk) + ", D " +
                         std::to_string(s.d_loss) + ")");
    result.history.push_back(s);
    if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
      log({{"stage", "reshape"}, {"step", step}, {"d_loss", s.d_loss}, {"adv", s.adv}, {"rec", s.rec}, {"ldmk", s.ldmk},
           {"total", s.total}});
  }
  m.generator->eval();
  m.discriminator->eval();
  Checkpoint& c = result.checkpoint;
  c.stage = "reshape";
  c.step = static_cast<std::uint64_t>(cfg.steps);
  c.config = {{"net", net.to_json()}, {"train", cfg.to_json()}, {"image_size", size.width}};
  c.put_module("G.", *m.generator);
  c.put_module("D.", *m.discriminator);
  c.put_optimizer("optG.", opt_g, *m.generator);
  c.put_optimizer("optD.", opt_d, *m.discriminator);
  return result;
}

Model load_model(const Checkpoint& ckpt) {
  require(ckpt.stage == "reshape", "expected a reshape checkpoint, got " + ckpt.stage);
  Model m(NetConfig::from_json(ckpt.config.at("net")));
  ckpt.get_module("G.", *m.generator);
  ckpt.get_module("D.", *m.discriminator);
  m.generator->eval();
  m.discriminator->eval();
  return m;
}

Reshaped reshape_infer(Model& m, const face3d::BlendModel& model, const Image& target, const SegMap& target_seg,
                       const face3d::FaceParams& source_params, const face3d::FaceParams& target_params) {
  require(target.size() == face3d::ImageSize{target_seg.height, target_seg.width}, "reshape_infer: image/seg size mismatch");
  face3d::validate(source_params, model.dims);
  face3d::validate(target_params, model.dims);
  const auto lm = face3d::cross_identity_landmarks(model, source_params, target_params, target.size());
  Reshaped out;
  out.flow = estimate_flow(m.generator, m.net, lm.source_to_target, lm.target, target_seg);
  std::tie(out.image, out.seg) = warp(out.flow, target, target_seg);
  return out;
}

Eigen::Vector2d warped_point(const FlowField& flow, const Eigen::Vector2d& p, int iterations) {
  Eigen::Vector2d q = p;
  for (int i = 0; i < iterations; ++i) {
    const Eigen::Vector2d next(p.x() - bilinear(flow, q.x(), q.y(), 0), p.y() - bilinear(flow, q.x(), q.y(), 1));
    if ((next - q).norm() < 1e-9) return next;
    q = 0.5 * (q + next);
  }
  return q;
}

face3d::LandmarkSet warped_landmarks(const FlowField& flow, const face3d::LandmarkSet& target) {
  face3d::LandmarkSet out;
  for (int i = 0; i < face3d::kContourCount; ++i) out.points.row(i) = warped_point(flow, target.points.row(i).transpose()).transpose();
  return out;
}

FlowEval evaluate_flow(FlowGenerator& g, const NetConfig& net, const Corpus& corpus, const face3d::BlendModel& model,
                       const std::vector<std::pair<int, int>>& pairs) {
  torch::NoGradGuard guard;
  g->eval();
  const auto size = corpus.image_size();
  FlowEval ev;
  double epe_sum = 0, zero_sum = 0, lm_sum = 0;
  std::int64_t pixels = 0;
  for (std::size_t start = 0; start < pairs.size(); start += 16) {
    const std::vector<std::pair<int, int>> chunk(pairs.begin() + static_cast<std::ptrdiff_t>(start),
                                                 pairs.begin() + static_cast<std::ptrdiff_t>(std::min(pairs.size(), start + 16)));
    const PairBatch pb = make_pairs(corpus, model, chunk);
    auto flow = estimate_flow(g, net, pb.landmarks_s2t, pb.landmarks_t, corpus.seg_one_hot(pb.target_rows));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto& rt = corpus.records[static_cast<std::size_t>(chunk[i].first)];
      const auto& rs = corpus.records[static_cast<std::size_t>(chunk[i].second)];
      const auto shape = source_shape_params(rs.params, rt.params);
      const FlowField truth = synthdata::ground_truth_flow(model, rt.params, shape, size);
      const auto mask = synthdata::reshaped_face_mask(model, rt.params, shape, size);
      const FlowField est = flow_from_tensor(flow[static_cast<std::int64_t>(i)]);
      for (int y = 0; y < size.height; ++y)
        for (int x = 0; x < size.width; ++x) {
          if (!mask[static_cast<std::size_t>(y) * size.width + x]) continue;
          epe_sum += std::hypot(est.dx(y, x) - truth.dx(y, x), est.dy(y, x) - truth.dy(y, x));
          zero_sum += std::hypot(truth.dx(y, x), truth.dy(y, x));
          ++pixels;
        }
      const auto warped = warped_landmarks(est, landmarks_from_tensor(pb.landmarks_t[static_cast<std::int64_t>(i)]));
      const auto s2t = landmarks_from_tensor(pb.landmarks_s2t[static_cast<std::int64_t>(i)]);
      lm_sum += (warped.points - s2t.points).rowwise().norm().mean();
    }
  }
  ev.pairs = static_cast<int>(pairs.size());
  ev.epe = pixels ? epe_sum / static_cast<double>(pixels) : 0.0;
  ev.zero_flow_epe = pixels ? zero_sum / static_cast<double>(pixels) : 0.0;
  ev.landmark_error = pairs.empty() ? 0.0 : lm_sum / static_cast<double>(pairs.size());
  return ev;
}

}  // namespace flowface::reshape
