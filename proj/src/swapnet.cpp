#include "flowface/swapnet.hpp"

#include "flowface/common.hpp"

#include <cmath>

namespace flowface::swapnet {
namespace F = torch::nn::functional;

torch::Tensor cross_attention(const torch::Tensor& q, const torch::Tensor& k) { return nn::attention_weights(q, k); }

void SwapConfig::validate(int width) const {
  require(heads > 0 && width % heads == 0, "swap: encoder width must be divisible by the head count");
  require(mlp_ratio > 0 && blocks >= 0 && decoder_channels > 0 && disc_width > 0, "swap: invalid network sizes");
}

nlohmann::json SwapConfig::to_json() const {
  return {{"heads", heads}, {"mlp_ratio", mlp_ratio}, {"blocks", blocks}, {"decoder_channels", decoder_channels},
          {"disc_width", disc_width}};
}

SwapConfig SwapConfig::from_json(const nlohmann::json& j) {
  SwapConfig c;
  c.heads = j.at("heads").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.decoder_channels = j.at("decoder_channels").get<int>();
  c.disc_width = j.at("disc_width").get<int>();
  return c;
}

CafmImpl::CafmImpl(int width, const SwapConfig& cfg) : heads_(cfg.heads) {
  cfg.validate(width);
  const auto ln = torch::nn::LayerNormOptions({width});
  ln_s_ = register_module("ln_s", torch::nn::LayerNorm(ln));
  ln_t_ = register_module("ln_t", torch::nn::LayerNorm(ln));
  q_ = register_module("q", torch::nn::Linear(width, width));
  k_ = register_module("k", torch::nn::Linear(width, width));
  vs_ = register_module("v_s", torch::nn::Linear(width, width));
  vt_ = register_module("v_t", torch::nn::Linear(width, width));
  proj_ = register_module("proj", torch::nn::Linear(width, width));
  ln_mlp_ = register_module("ln_mlp", torch::nn::LayerNorm(ln));
  mlp_ = register_module("mlp", nn::Mlp(width, width * cfg.mlp_ratio));
  for (int i = 0; i < cfg.blocks; ++i) blocks_->push_back(nn::TransformerBlock(width, cfg.heads, cfg.mlp_ratio));
  register_module("blocks", blocks_);
}

FuseTrace CafmImpl::fuse(const torch::Tensor& e_s, const torch::Tensor& e_t) {
  require(e_s.dim() == 3 && e_t.dim() == 3 && e_s.size(0) == e_t.size(0), "fuse: embeddings must be B x N x L with equal B");
  require(e_s.size(2) == e_t.size(2), "fuse: source and target widths differ");
  auto s = ln_s_(e_s), t = ln_t_(e_t);
  FuseTrace tr;
  auto q = nn::split_heads(q_(t), heads_);
  auto k = nn::split_heads(k_(s), heads_);
  auto v_s = nn::split_heads(vs_(s), heads_);
  auto v_t = nn::split_heads(vt_(t), heads_);
  tr.attention = cross_attention(q, k);
  tr.v_fused = nn::merge_heads(torch::matmul(tr.attention, v_s) + v_t);
  auto x = e_t + proj_(tr.v_fused);
  tr.fused = x + mlp_(ln_mlp_(x));
  return tr;
}

torch::Tensor CafmImpl::forward(const torch::Tensor& e_s, const torch::Tensor& e_t) {
  auto x = fuse(e_s, e_t).fused;
  for (const auto& b : *blocks_) x = b->as<nn::TransformerBlock>()->forward(x);
  return x;
}

SwapDecoderImpl::SwapDecoderImpl(int width, int grid, int image_size, int channels) : grid_(grid), image_size_(image_size) {
  require(grid > 0 && image_size % grid == 0, "decoder: image size must be a multiple of the token grid");
  int ups = 0;
  for (int s = grid; s < image_size; s *= 2) ++ups;
  require((grid << ups) == image_size, "decoder: image size / grid must be a power of two");
  stem_ = register_module("stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, channels, 1)));
  int c = channels;
  blocks_->push_back(nn::ResBlock(c, c, false));
  for (int i = 0; i < ups; ++i) {
    const int next = std::max(32, c / 2);
    blocks_->push_back(nn::ResBlock(c, next, true));
    c = next;
  }
  register_module("blocks", blocks_);
  norm_ = register_module("norm", torch::nn::GroupNorm(std::min(8, c), c));
  out_ = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, 3, 3).padding(1)));
}

torch::Tensor SwapDecoderImpl::forward(const torch::Tensor& tokens) {
  require(tokens.dim() == 3 && tokens.size(1) == static_cast<std::int64_t>(grid_) * grid_,
          "decoder: token count must form the configured square grid");
  const auto b = tokens.size(0), l = tokens.size(2);
  auto x = stem_(tokens.transpose(1, 2).reshape({b, l, grid_, grid_}));
  for (const auto& blk : *blocks_) x = blk->as<nn::ResBlock>()->forward(x);
  return torch::tanh(out_(F::leaky_relu(norm_(x), F::LeakyReLUFuncOptions().negative_slope(0.2))));
}

SwapGeneratorImpl::SwapGeneratorImpl(const facemae::EncoderConfig& enc, const SwapConfig& cfg)
    : cafm(register_module("cafm", Cafm(enc.width, cfg))),
      decoder(register_module("decoder", SwapDecoder(enc.width, enc.grid(), enc.image_size, cfg.decoder_channels))) {}

torch::Tensor SwapGeneratorImpl::forward(const torch::Tensor& e_s, const torch::Tensor& e_t) { return decoder(cafm(e_s, e_t)); }

SwapModel::SwapModel(const facemae::EncoderConfig& enc, const SwapConfig& c)
    : encoder(enc), cfg(c), generator(enc, c), discriminator(3, c.disc_width) {}

LossTerms combine_losses(const torch::Tensor& fake_logits, const torch::Tensor& swapped, const torch::Tensor& reshaped_target,
                         const torch::Tensor& is_reconstruction, const torch::Tensor& id_swapped, const torch::Tensor& id_source,
                         const torch::Tensor& exp_swapped, const torch::Tensor& exp_target, const torch::Tensor& ldmk_swapped,
                         const torch::Tensor& ldmk_reshaped, const torch::Tensor& perc_distance, const LossWeights& w) {
  require(w.rec >= 0 && w.id >= 0 && w.exp >= 0 && w.ldmk >= 0 && w.perc >= 0, "swap loss weights must be non-negative");
  LossTerms t;
  t.adv = nn::hinge_g_loss(fake_logits);
  t.rec = reshape::masked_mse(swapped, reshaped_target, is_reconstruction);
  t.id = (1.0 - F::cosine_similarity(id_swapped, id_source, F::CosineSimilarityFuncOptions().dim(1).eps(1e-12))).mean();
  t.exp = (exp_swapped - exp_target).pow(2).mean();
  t.ldmk = (ldmk_swapped - ldmk_reshaped).pow(2).mean();
  t.perc = perc_distance;
  t.total = t.adv + w.rec * t.rec + w.id * t.id + w.exp * t.exp + w.ldmk * t.ldmk + w.perc * t.perc;
  return t;
}

LossTerms swap_losses(AuxNets& aux, const torch::Tensor& fake_logits, const torch::Tensor& swapped, const torch::Tensor& source,
                      const torch::Tensor& target, const torch::Tensor& reshaped_target, const torch::Tensor& is_reconstruction,
                      const LossWeights& w) {
  require(aux.id && aux.exp && aux.landmarks && aux.perceptual, "swap_losses: auxiliary networks missing");
  const face3d::ImageSize size{static_cast<int>(swapped.size(2)), static_cast<int>(swapped.size(3))};
  torch::Tensor id_source, exp_target, ldmk_reshaped;
  {
    torch::NoGradGuard guard;
    id_source = aux.id(source);
    exp_target = aux.exp(target);
    ldmk_reshaped = normalize_landmarks(aux.landmarks(reshaped_target), size);
  }
  return combine_losses(fake_logits, swapped, reshaped_target, is_reconstruction, aux.id(swapped), id_source, aux.exp(swapped),
                        exp_target, normalize_landmarks(aux.landmarks(swapped), size), ldmk_reshaped,
                        auxnets::perceptual_distance(aux.perceptual, reshaped_target, swapped), w);
}

torch::Tensor reshape_targets(reshape::Model& res, const Corpus& corpus, const reshape::PairBatch& pairs) {
  torch::NoGradGuard guard;
  res.generator->eval();
  auto flow = reshape::estimate_flow(res.generator, res.net, pairs.landmarks_s2t, pairs.landmarks_t,
                                     corpus.seg_one_hot(pairs.target_rows));
  return reshape::warp(corpus.images.index_select(0, pairs.target_rows), flow);
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch", batch},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"p_same", p_same},
          {"lambda_rec", weights.rec},
          {"lambda_id", weights.id},
          {"lambda_exp", weights.exp},
          {"lambda_ldmk", weights.ldmk},
          {"lambda_perc", weights.perc},
          {"seed", seed},
          {"log_every", log_every},
          {"precompute", precompute}};
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
  c.weights.id = j.at("lambda_id").get<double>();
  c.weights.exp = j.at("lambda_exp").get<double>();
  c.weights.ldmk = j.at("lambda_ldmk").get<double>();
  c.weights.perc = j.at("lambda_perc").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.log_every = j.at("log_every").get<int>();
  c.precompute = j.at("precompute").get<int>();
  return c;
}

namespace {

struct Batch {
  torch::Tensor source, target, reshaped, is_reconstruction;
};

// Draws training batches either online (stage one run per step) or from a
// fixed bank of precomputed reshaped targets.
class BatchSource {
 public:
  BatchSource(const Corpus& corpus, const face3d::BlendModel& model, reshape::Model& res, const TrainConfig& cfg, Rng& rng)
      : corpus_(corpus), model_(model), res_(res), cfg_(cfg), rng_(rng) {
    if (cfg.precompute <= 0) return;
    auto pairs = reshape::sample_pairs(corpus, model, rng, cfg.precompute, cfg.p_same);
    std::vector<torch::Tensor> parts;
    for (std::int64_t i = 0; i < cfg.precompute; i += 32) {
      const auto end = std::min<std::int64_t>(cfg.precompute, i + 32);
      reshape::PairBatch chunk{pairs.target_rows.slice(0, i, end), pairs.source_rows.slice(0, i, end),
                               pairs.is_reconstruction.slice(0, i, end), pairs.landmarks_t.slice(0, i, end),
                               pairs.landmarks_s2t.slice(0, i, end)};
      parts.push_back(reshape_targets(res, corpus, chunk));
    }
    bank_pairs_ = pairs;
    bank_reshaped_ = torch::cat(parts, 0);
  }

  Batch next() {
    if (cfg_.precompute > 0) {
      std::vector<std::int64_t> idx;
      for (int i = 0; i < cfg_.batch; ++i) idx.push_back(static_cast<std::int64_t>(rng_.below(static_cast<std::uint64_t>(cfg_.precompute))));
      auto sel = index_tensor(idx);
      return {corpus_.images.index_select(0, bank_pairs_.source_rows.index_select(0, sel)),
              corpus_.images.index_select(0, bank_pairs_.target_rows.index_select(0, sel)), bank_reshaped_.index_select(0, sel),
              bank_pairs_.is_reconstruction.index_select(0, sel)};
    }
    auto pb = reshape::sample_pairs(corpus_, model_, rng_, cfg_.batch, cfg_.p_same);
    return {corpus_.images.index_select(0, pb.source_rows), corpus_.images.index_select(0, pb.target_rows),
            reshape_targets(res_, corpus_, pb), pb.is_reconstruction};
  }

 private:
  const Corpus& corpus_;
  const face3d::BlendModel& model_;
  reshape::Model& res_;
  const TrainConfig& cfg_;
  Rng& rng_;
  reshape::PairBatch bank_pairs_;
  torch::Tensor bank_reshaped_;
};

}  // namespace

TrainResult train_swap(const Corpus& corpus, const face3d::BlendModel& model, reshape::Model& res, facemae::FaceEncoder& encoder,
                       AuxNets& aux, const SwapConfig& cfg, const TrainConfig& train, const LogFn& log) {
  require(train.steps >= 0 && train.batch > 0 && train.lr > 0, "train_swap: invalid steps, batch or learning rate");
  require(train.beta1 >= 0 && train.beta1 < 1 && train.beta2 >= 0 && train.beta2 < 1, "train_swap: Adam betas out of range");
  require(train.p_same >= 0 && train.p_same <= 1 && train.precompute >= 0, "train_swap: invalid pair sampling settings");
  for (const auto& p : encoder->parameters())
    require(!p.requires_grad(), "train_swap: the face encoder must be frozen before stage-two training");
  const auto& enc = encoder->config();
  require(corpus.image_size().width == enc.image_size && corpus.image_size().height == enc.image_size,
          "train_swap: corpus resolution differs from the encoder resolution");
  require(aux.id && aux.exp && aux.landmarks && aux.perceptual, "train_swap: auxiliary networks missing");
  nn::freeze(*aux.id);
  nn::freeze(*aux.exp);
  nn::freeze(*aux.landmarks);
  nn::freeze(*aux.perceptual);
  nn::freeze(*res.generator);
  nn::freeze(*res.discriminator);

  seed_torch(train.seed);
  SwapModel m(enc, cfg);
  const auto adam = torch::optim::AdamOptions(train.lr).betas({train.beta1, train.beta2});
  torch::optim::Adam opt_g(m.generator->parameters(), adam);
  torch::optim::Adam opt_d(m.discriminator->parameters(), adam);
  Rng rng(mix64(train.seed ^ 0x5a7b3ULL));
  BatchSource source(corpus, model, res, train, rng);
  m.generator->train();
  m.discriminator->train();
  TrainResult result;
  for (int step = 0; step < train.steps; ++step) {
    const Batch b = source.next();
    torch::Tensor e_s, e_t;
    {
      torch::NoGradGuard guard;
      e_s = encoder(b.source);
      e_t = encoder(b.reshaped);
    }
    auto swapped = m.generator(e_s, e_t);

    auto d_loss = nn::hinge_d_loss(m.discriminator(b.target), m.discriminator(swapped.detach()));
    opt_d.zero_grad();
    d_loss.backward();
    opt_d.step();

    auto terms = swap_losses(aux, m.discriminator(swapped), swapped, b.source, b.target, b.reshaped, b.is_reconstruction,
                             train.weights);
    opt_g.zero_grad();
    terms.total.backward();
    opt_g.step();

    StepLog s{step,
              d_loss.item<double>(),
              terms.adv.item<double>(),
              terms.rec.item<double>(),
              terms.id.item<double>(),
              terms.exp.item<double>(),
              terms.ldmk.item<double>(),
              terms.perc.item<double>(),
              terms.total.item<double>()};
    if (!std::isfinite(s.total) || !std::isfinite(s.d_loss))
      throw RuntimeAbort("train_swap: non-finite loss at step " + std::to_string(step) + " (adv " + std::to_string(s.adv) +
                         ", rec " + std::to_string(s.rec) + ", id " + std::to_string(s.id) + ", exp " + std::to_string(s.exp) +
                         ", ldmk " + std::to_string(s.ldmk) + ", perc " + std::to_string(s.perc) + ", D " +
                         std::to_string(s.d_loss) + ")");
    result.history.push_back(s);
    if (log && (step % train.log_every == 0 || step + 1 == train.steps))
      log({{"stage", "swap"}, {"step", step}, {"d_loss", s.d_loss}, {"adv", s.adv}, {"rec", s.rec}, {"id", s.id},
           {"exp", s.exp}, {"ldmk", s.ldmk}, {"perc", s.perc}, {"total", s.total}});
  }
  m.generator->eval();
  m.discriminator->eval();
  Checkpoint& c = result.checkpoint;
  c.stage = "swap";
  c.step = static_cast<std::uint64_t>(train.steps);
  c.config = {{"encoder", enc.to_json()}, {"swap", cfg.to_json()}, {"train", train.to_json()}, {"image_size", enc.image_size}};
  c.put_module("G.", *m.generator);
  c.put_module("D.", *m.discriminator);
  c.put_optimizer("optG.", opt_g, *m.generator);
  c.put_optimizer("optD.", opt_d, *m.discriminator);
  return result;
}

SwapModel load_swap(const Checkpoint& ckpt) {
  require(ckpt.stage == "swap", "expected a swap checkpoint, got " + ckpt.stage);
  SwapModel m(facemae::EncoderConfig::from_json(ckpt.config.at("encoder")), SwapConfig::from_json(ckpt.config.at("swap")));
  ckpt.get_module("G.", *m.generator);
  ckpt.get_module("D.", *m.discriminator);
  m.generator->eval();
  m.discriminator->eval();
  return m;
}

torch::Tensor swap_batch(SwapModel& m, facemae::FaceEncoder& encoder, const torch::Tensor& source, const torch::Tensor& reshaped_target) {
  torch::NoGradGuard guard;
  m.generator->eval();
  return m.generator(encoder(source), encoder(reshaped_target));
}

SwapResult swap_faces(const Image& source, const Image& target, const SegMap& target_seg, const face3d::FaceParams& source_params,
                      const face3d::FaceParams& target_params, const face3d::BlendModel& model, reshape::Model& res,
                      facemae::FaceEncoder& encoder, SwapModel& swap) {
  const int size = encoder->config().image_size;
  require(swap.encoder.image_size == size, "swap: resolution mismatch between the swap and encoder checkpoints");
  require(source.width == size && source.height == size && target.width == size && target.height == size,
          "swap: input images must be " + std::to_string(size) + "x" + std::to_string(size));
  SwapResult r;
  r.reshaped = reshape::reshape_infer(res, model, target, target_seg, source_params, target_params);
  auto out = swap_batch(swap, encoder, to_tensor(source).unsqueeze(0), to_tensor(r.reshaped.image).unsqueeze(0));
  r.swapped = image_from_tensor(out[0]);
  return r;
}

}  // namespace flowface::swapnet
