#include "flowface/facemae.hpp"

#include "flowface/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace flowface::facemae {

void EncoderConfig::validate() const {
  require(patch > 0 && image_size > 0 && image_size % patch == 0, "encoder: image size must be a multiple of the patch size");
  require(width > 0 && heads > 0 && width % heads == 0, "encoder: width must be divisible by heads");
  require(width % 4 == 0 && decoder_width % 4 == 0, "encoder: widths must be divisible by 4");
  require(decoder_width > 0 && decoder_width % heads == 0, "encoder: decoder width must be divisible by heads");
  require(depth > 0 && decoder_depth > 0, "encoder: depths must be positive");
  require(mask_ratio > 0.0 && mask_ratio < 1.0, "encoder: mask ratio must lie in (0, 1)");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"image_size", image_size}, {"patch", patch},          {"width", width},
          {"depth", depth},           {"heads", heads},          {"decoder_width", decoder_width},
          {"decoder_depth", decoder_depth}, {"mask_ratio", mask_ratio}, {"positions", positions}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.patch = j.at("patch").get<int>();
  c.width = j.at("width").get<int>();
  c.depth = j.at("depth").get<int>();
  c.heads = j.at("heads").get<int>();
  c.decoder_width = j.at("decoder_width").get<int>();
  c.decoder_depth = j.at("decoder_depth").get<int>();
  c.mask_ratio = j.at("mask_ratio").get<double>();
  c.positions = j.at("positions").get<bool>();
  c.validate();
  return c;
}

MaskPlan random_mask(int n, double ratio, std::uint64_t seed) {
  require(n > 0, "random_mask: n must be positive");
  require(ratio > 0.0 && ratio < 1.0, "random_mask: ratio must lie in (0, 1)");
  const auto count = static_cast<int>(std::lround(ratio * n));
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)], perm[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  MaskPlan p;
  p.ratio = ratio;
  p.masked.assign(static_cast<std::size_t>(n), false);
  for (int i = 0; i < count; ++i) p.masked[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = true;
  for (int i = 0; i < n; ++i) (p.masked[static_cast<std::size_t>(i)] ? p.masked_indices : p.visible).push_back(i);
  return p;
}

torch::Tensor patchify(const torch::Tensor& images, int patch) {
  const auto b = images.size(0), c = images.size(1), h = images.size(2), w = images.size(3);
  require(h % patch == 0 && w % patch == 0, "patchify: image size must be a multiple of the patch size");
  const auto gh = h / patch, gw = w / patch;
  return images.reshape({b, c, gh, patch, gw, patch}).permute({0, 2, 4, 1, 3, 5}).reshape({b, gh * gw, c * patch * patch});
}

torch::Tensor unpatchify(const torch::Tensor& patches, int patch, int grid) {
  const auto b = patches.size(0);
  const auto c = patches.size(2) / (patch * patch);
  return patches.reshape({b, grid, grid, c, patch, patch}).permute({0, 3, 1, 4, 2, 5}).reshape({b, c, grid * patch, grid * patch});
}

namespace {

torch::Tensor gather_rows(const torch::Tensor& x, const torch::Tensor& idx) {
  return x.gather(1, idx.unsqueeze(-1).expand({idx.size(0), idx.size(1), x.size(2)}));
}

torch::Tensor visible_tensor(const std::vector<MaskPlan>& plans) {
  std::vector<std::int64_t> flat;
  for (const auto& p : plans) flat.insert(flat.end(), p.visible.begin(), p.visible.end());
  const auto k = static_cast<std::int64_t>(plans.front().visible.size());
  return torch::tensor(flat, torch::kInt64).view({static_cast<std::int64_t>(plans.size()), k});
}

torch::Tensor masked_tensor(const std::vector<MaskPlan>& plans) {
  const auto n = static_cast<std::int64_t>(plans.front().masked.size());
  auto m = torch::zeros({static_cast<std::int64_t>(plans.size()), n}, torch::kBool);
  auto a = m.accessor<bool, 2>();
  for (std::size_t i = 0; i < plans.size(); ++i)
    for (std::int64_t j = 0; j < n; ++j) a[static_cast<std::int64_t>(i)][j] = plans[i].masked[static_cast<std::size_t>(j)];
  return m;
}

}  // namespace

FaceEncoderImpl::FaceEncoderImpl(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  embed_ = register_module("embed", torch::nn::Linear(cfg_.patch_dim(), cfg_.width));
  auto pos = cfg_.positions ? nn::sincos_2d(cfg_.grid(), cfg_.grid(), cfg_.width) : torch::zeros({cfg_.tokens(), cfg_.width});
  pos_ = register_buffer("pos", pos);
  for (int i = 0; i < cfg_.depth; ++i) blocks_->push_back(nn::TransformerBlock(cfg_.width, cfg_.heads));
  register_module("blocks", blocks_);
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg_.width})));
}

torch::Tensor FaceEncoderImpl::run(torch::Tensor tokens) {
  for (const auto& b : *blocks_) tokens = b->as<nn::TransformerBlock>()->forward(tokens);
  return norm_(tokens);
}

torch::Tensor FaceEncoderImpl::forward(const torch::Tensor& images) {
  require(images.dim() == 4 && images.size(2) == cfg_.image_size && images.size(3) == cfg_.image_size,
          "encoder: input must be B x 3 x " + std::to_string(cfg_.image_size) + " x " + std::to_string(cfg_.image_size));
  return run(embed_(patchify(images, cfg_.patch)) + pos_);
}

torch::Tensor FaceEncoderImpl::forward_visible(const torch::Tensor& images, const torch::Tensor& visible) {
  auto tokens = embed_(patchify(images, cfg_.patch)) + pos_;
  return run(gather_rows(tokens, visible));
}

MaeDecoderImpl::MaeDecoderImpl(const EncoderConfig& cfg) : cfg_(cfg) {
  embed_ = register_module("embed", torch::nn::Linear(cfg_.width, cfg_.decoder_width));
  mask_token_ = register_parameter("mask_token", torch::randn({cfg_.decoder_width}) * 0.02);
  pos_ = register_buffer("pos", nn::sincos_2d(cfg_.grid(), cfg_.grid(), cfg_.decoder_width));
  for (int i = 0; i < cfg_.decoder_depth; ++i) blocks_->push_back(nn::TransformerBlock(cfg_.decoder_width, cfg_.heads));
  register_module("blocks", blocks_);
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg_.decoder_width})));
  pred_ = register_module("pred", torch::nn::Linear(cfg_.decoder_width, cfg_.patch_dim()));
}

torch::Tensor MaeDecoderImpl::forward(const torch::Tensor& latent, const torch::Tensor& visible) {
  const auto b = latent.size(0);
  auto x = mask_token_.view({1, 1, -1}).expand({b, cfg_.tokens(), cfg_.decoder_width}).clone();
  x = x.scatter(1, visible.unsqueeze(-1).expand({b, visible.size(1), cfg_.decoder_width}), embed_(latent));
  x = x + pos_;
  for (const auto& blk : *blocks_) x = blk->as<nn::TransformerBlock>()->forward(x);
  return pred_(norm_(x));
}

torch::Tensor normalized_targets(const torch::Tensor& patches) {
  auto mean = patches.mean(-1, true);
  auto var = patches.var(-1, false, true);
  return (patches - mean) / torch::sqrt(var + 1e-6);
}

torch::Tensor mae_loss(const torch::Tensor& pred, const torch::Tensor& target_patches, const torch::Tensor& masked) {
  require(pred.sizes() == target_patches.sizes(), "mae_loss: prediction and target shapes differ");
  require(masked.size(0) == pred.size(0) && masked.size(1) == pred.size(1), "mae_loss: mask does not match the patch count");
  auto per_patch = (pred - normalized_targets(target_patches)).pow(2).mean(-1);
  auto m = masked.to(per_patch.dtype());
  return (per_patch * m).sum() / m.sum().clamp_min(1.0);
}

Mae::Mae(const EncoderConfig& c) : cfg(c), encoder(c), decoder(c) {}

torch::Tensor Mae::loss(const torch::Tensor& images, const std::vector<MaskPlan>& plans) {
  require(static_cast<std::int64_t>(plans.size()) == images.size(0), "mae: one mask plan per image required");
  auto visible = visible_tensor(plans);
  auto pred = decoder->forward(encoder->forward_visible(images, visible), visible);
  return mae_loss(pred, patchify(images, cfg.patch), masked_tensor(plans));
}

nlohmann::json PretrainConfig::to_json() const {
  return {{"steps", steps}, {"batch", batch}, {"lr", lr}, {"weight_decay", weight_decay},
          {"warmup", warmup}, {"seed", seed}, {"log_every", log_every}};
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j) {
  PretrainConfig c;
  c.steps = j.at("steps").get<int>();
  c.batch = j.at("batch").get<int>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.warmup = j.at("warmup").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.log_every = j.at("log_every").get<int>();
  return c;
}

namespace {

double schedule(const PretrainConfig& cfg, int step) {
  if (step < cfg.warmup) return cfg.lr * (step + 1) / cfg.warmup;
  const double t = static_cast<double>(step - cfg.warmup) / std::max(1, cfg.steps - cfg.warmup);
  return cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(M_PI * t)));
}

Checkpoint mae_checkpoint(const Mae& m, const PretrainConfig& cfg, std::uint64_t step) {
  Checkpoint c;
  c.stage = "mae";
  c.step = step;
  c.config = {{"encoder", m.cfg.to_json()}, {"train", cfg.to_json()}};
  c.put_module("encoder.", *m.encoder);
  c.put_module("decoder.", *m.decoder);
  return c;
}

}  // namespace

PretrainResult pretrain_mae(const Corpus& corpus, const EncoderConfig& enc, const PretrainConfig& cfg, const LogFn& log) {
  require(cfg.steps >= 0 && cfg.batch > 0 && cfg.lr > 0 && cfg.warmup >= 0, "pretrain_mae: invalid training config");
  require(corpus.image_size().width == enc.image_size && corpus.image_size().height == enc.image_size,
          "pretrain_mae: corpus resolution differs from the encoder config");
  seed_torch(cfg.seed);
  Mae m(enc);
  m.encoder->train();
  m.decoder->train();
  auto params = m.encoder->parameters();
  for (auto& p : m.decoder->parameters()) params.push_back(p);
  torch::optim::AdamW opt(params, torch::optim::AdamWOptions(cfg.lr).betas({0.9, 0.95}).weight_decay(cfg.weight_decay));
  PretrainResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(schedule(cfg, step));
    auto rows = torch::randint(corpus.size(), {cfg.batch}, torch::kInt64);
    std::vector<MaskPlan> plans;
    for (int i = 0; i < cfg.batch; ++i)
      plans.push_back(random_mask(enc.tokens(), enc.mask_ratio,
                                  derive_seed(cfg.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(i))));
    auto l = m.loss(corpus.images.index_select(0, rows), plans);
    const double value = l.item<double>();
    if (!std::isfinite(value)) throw RuntimeAbort("pretrain_mae: non-finite loss at step " + std::to_string(step));
    opt.zero_grad();
    l.backward();
    opt.step();
    result.losses.push_back(value);
    if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) log({{"stage", "mae"}, {"step", step}, {"loss", value}});
  }
  m.encoder->eval();
  m.decoder->eval();
  result.checkpoint = mae_checkpoint(m, cfg, static_cast<std::uint64_t>(cfg.steps));
  return result;
}

Mae load_mae(const Checkpoint& ckpt) {
  require(ckpt.stage == "mae", "checkpoint is not an encoder checkpoint (stage " + ckpt.stage + ")");
  Mae m(EncoderConfig::from_json(ckpt.config.at("encoder")));
  ckpt.get_module("encoder.", *m.encoder);
  ckpt.get_module("decoder.", *m.decoder);
  m.encoder->eval();
  m.decoder->eval();
  return m;
}

FaceEncoder load_encoder(const Checkpoint& ckpt) {
  auto m = load_mae(ckpt);
  nn::freeze(*m.encoder);
  return m.encoder;
}

torch::Tensor encode(FaceEncoder& encoder, const Image& image) {
  torch::NoGradGuard guard;
  return encoder->forward(to_tensor(image).unsqueeze(0)).squeeze(0);
}

}  // namespace flowface::facemae
