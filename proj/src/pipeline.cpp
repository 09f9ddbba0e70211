#include "flowface/pipeline.hpp"

#include "flowface/common.hpp"
#include "flowface/viz.hpp"

#include <iostream>

namespace flowface {
namespace fs = std::filesystem;

Logger::Logger(const fs::path& file, bool quiet) : quiet_(quiet), start_(std::chrono::steady_clock::now()) {
  std::error_code ec;
  fs::create_directories(file.parent_path(), ec);
  file_.open(file, std::ios::app);
  if (!file_) throw RuntimeAbort("cannot open log file " + file.string());
}

void Logger::operator()(nlohmann::json entry) {
  entry["wall"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  const std::string line = entry.dump();
  file_ << line << '\n';
  file_.flush();
  if (!quiet_) std::cout << line << std::endl;
}

Pipeline::Pipeline(RunConfig cfg, bool force, bool quiet)
    : cfg_(std::move(cfg)), force_(force), log_(cfg_.run_dir / "log.jsonl", quiet) {
  cfg_.validate();
}

fs::path Pipeline::checkpoint_path(const std::string& tag) const { return cfg_.run_dir / (tag + ".ffck"); }

synthdata::DatasetManifest Pipeline::gen_data(bool overwrite) {
  const fs::path dir = cfg_.data_dir;
  const std::string hash = cfg_.stage_hash("dataset");
  if (synthdata::dataset_exists(dir) && !overwrite) {
    auto m = synthdata::load_dataset(dir);
    require(force_ || m.info.value("config_hash", "") == hash,
            "dataset at " + dir.string() + " was generated from a different config (use --overwrite)");
    log_({{"stage", "gen-data"}, {"status", "exists"}, {"records", m.records.size()}, {"dir", dir.string()}});
    manifest_ = m;
    return m;
  }
  for (const char* name : {"images", "segs", "manifest.jsonl", "dataset.json", "face3d.fl3d"}) fs::remove_all(dir / name);
  manifest_.reset();
  model_.reset();
  corpora_.clear();
  synthdata::DatasetConfig d = cfg_.dataset;
  d.config_hash = hash;
  auto m = synthdata::generate_dataset(d, dir);
  log_({{"stage", "gen-data"}, {"status", "generated"}, {"records", m.records.size()}, {"dir", dir.string()},
        {"manifest_hash", m.manifest_hash()}});
  manifest_ = m;
  return m;
}

synthdata::DatasetManifest Pipeline::manifest() {
  if (!manifest_) {
    auto m = synthdata::load_dataset(cfg_.data_dir);
    require(force_ || m.info.value("config_hash", "") == cfg_.stage_hash("dataset"),
            "dataset at " + cfg_.data_dir.string() + " does not match the config (regenerate with gen-data --overwrite)");
    manifest_ = std::move(m);
  }
  return *manifest_;
}

const face3d::BlendModel& Pipeline::blend_model() {
  if (!model_) model_ = face3d::load_model(fs::path(cfg_.data_dir) / manifest().info.value("model_file", "face3d.fl3d"));
  return *model_;
}

Corpus& Pipeline::corpus(const std::string& split) {
  auto it = corpora_.find(split);
  if (it == corpora_.end()) it = corpora_.emplace(split, load_corpus(manifest(), split)).first;
  return it->second;
}

void Pipeline::save(Checkpoint ckpt, const std::string& tag, const std::string& hash_stage) {
  ckpt.config_hash = cfg_.stage_hash(hash_stage);
  ckpt.dataset_hash = manifest().manifest_hash();
  fs::create_directories(cfg_.run_dir);
  save_checkpoint(ckpt, checkpoint_path(tag));
  log_({{"stage", tag}, {"status", "saved"}, {"path", checkpoint_path(tag).string()}, {"config_hash", ckpt.config_hash}});
}

Checkpoint Pipeline::load(const std::string& tag, const std::string& hash_stage) {
  const auto path = checkpoint_path(tag);
  require(fs::exists(path), "missing checkpoint " + path.string());
  auto c = load_checkpoint(path, tag);
  if (!force_) {
    require(c.config_hash == cfg_.stage_hash(hash_stage),
            "checkpoint " + path.string() + " was produced with a different config (retrain or pass --force)");
    require(c.dataset_hash == manifest().manifest_hash(), "checkpoint " + path.string() + " was trained on a different dataset");
  }
  return c;
}

auxnets::AuxReport Pipeline::train_aux(const std::vector<std::string>& only) {
  for (const auto& k : only) {
    const bool known = std::any_of(aux_specs().begin(), aux_specs().end(), [&](const AuxSpec& s) { return s.key == k; });
    require(known, "unknown aux network '" + k + "'");
  }
  auto& train = corpus("train");
  auto& val = corpus("val");
  auxnets::AuxReport report;
  const auto log = [this](const nlohmann::json& j) { log_(j); };
  for (const auto& s : aux_specs()) {
    if (!only.empty() && std::find(only.begin(), only.end(), s.key) == only.end()) continue;
    const auto& tc = cfg_.aux.at(s.key);
    Checkpoint c;
    nlohmann::json metrics;
    if (s.key == "landmark") {
      c = auxnets::train_landmark_regressor(train, tc, log);
      auto net = auxnets::load_landmark_regressor(c);
      report.landmark_val_error = auxnets::landmark_error(net, val);
      metrics = {{"val_error_px", report.landmark_val_error}};
    } else if (s.key.starts_with("id_")) {
      c = auxnets::train_id_embedder(train, tc, s.tag, log);
      auto net = auxnets::load_id_embedder(c);
      report.id_train_accuracy = auxnets::id_accuracy(net, train);
      report.id_margin = auxnets::id_margin(net, val);
      metrics = {{"train_accuracy", report.id_train_accuracy}, {"val_accuracy", auxnets::id_accuracy(net, val)},
                 {"val_margin", report.id_margin}};
    } else if (s.key.starts_with("exp_")) {
      c = auxnets::train_exp_embedder(train, tc, s.tag, log);
      auto net = auxnets::load_exp_embedder(c);
      report.exp_val_mse = auxnets::exp_mse(net, val);
      report.exp_spearman = auxnets::exp_spearman(net, val, 400, 5);
      metrics = {{"val_mse", report.exp_val_mse}, {"val_spearman", report.exp_spearman}};
    } else if (s.key == "pose") {
      c = auxnets::train_pose_regressor(train, tc, log);
      auto net = auxnets::load_pose_regressor(c);
      report.pose_val_error_deg = auxnets::pose_error_deg(net, val);
      metrics = {{"val_error_deg", report.pose_val_error_deg}};
    } else {
      c = auxnets::train_perceptual(train, tc, log);
      auto net = auxnets::load_perceptual(c);
      report.perceptual_triplet_rate = auxnets::perceptual_triplet_rate(net, val, 200, 9);
      metrics = {{"triplet_rate", report.perceptual_triplet_rate}};
    }
    c.config["metrics"] = metrics;
    save(std::move(c), s.tag, "aux");
    log_({{"stage", s.tag}, {"metrics", metrics}});
  }
  return report;
}

facemae::PretrainResult Pipeline::pretrain_mae() {
  auto r = facemae::pretrain_mae(corpus("train"), cfg_.encoder, cfg_.mae, [this](const nlohmann::json& j) { log_(j); });
  save(r.checkpoint, "mae", "mae");
  return r;
}

reshape::TrainResult Pipeline::train_reshape() {
  auto regressor = auxnets::load_landmark_regressor(load(auxnets::kLandmarkTag, "aux"));
  auto r = reshape::train_reshape(corpus("train"), blend_model(), regressor, cfg_.reshape_net, cfg_.reshape_train,
                                  [this](const nlohmann::json& j) { log_(j); });
  save(r.checkpoint, "reshape", "reshape");
  evaluate_reshape();
  return r;
}

reshape::FlowEval Pipeline::evaluate_reshape() {
  auto m = load_reshape();
  auto& val = corpus("val");
  const auto ev = reshape::evaluate_flow(m.generator, m.net, val, blend_model(), reshape::heldout_pairs(val, cfg_.eval.pairs, cfg_.eval.seed));
  log_({{"stage", "reshape-eval"}, {"epe", ev.epe}, {"zero_flow_epe", ev.zero_flow_epe}, {"landmark_error", ev.landmark_error},
        {"pairs", ev.pairs}});
  return ev;
}

AuxNetsLoaded Pipeline::load_aux() {
  AuxNetsLoaded a;
  a.train.id = auxnets::load_id_embedder(load(auxnets::kIdTrainTag, "aux"));
  a.train.exp = auxnets::load_exp_embedder(load(auxnets::kExpTrainTag, "aux"));
  a.train.landmarks = auxnets::load_landmark_regressor(load(auxnets::kLandmarkTag, "aux"));
  a.train.perceptual = auxnets::load_perceptual(load(auxnets::kPerceptualTag, "aux"));
  a.eval.id_a = auxnets::load_id_embedder(load(auxnets::kIdEvalATag, "aux"));
  a.eval.id_b = auxnets::load_id_embedder(load(auxnets::kIdEvalBTag, "aux"));
  a.eval.exp = auxnets::load_exp_embedder(load(auxnets::kExpEvalTag, "aux"));
  a.eval.landmarks = a.train.landmarks;
  a.eval.pose = auxnets::load_pose_regressor(load(auxnets::kPoseTag, "aux"));
  return a;
}

reshape::Model Pipeline::load_reshape() { return reshape::load_model(load("reshape", "reshape")); }

facemae::FaceEncoder Pipeline::load_encoder() { return facemae::load_encoder(load("mae", "mae")); }

swapnet::SwapModel Pipeline::load_swap() { return swapnet::load_swap(load("swap", "swap")); }

swapnet::TrainResult Pipeline::train_swap() {
  auto aux = load_aux();
  auto res = load_reshape();
  auto enc = load_encoder();
  auto r = swapnet::train_swap(corpus("train"), blend_model(), res, enc, aux.train, cfg_.swap_net, cfg_.swap_train,
                               [this](const nlohmann::json& j) { log_(j); });
  save(r.checkpoint, "swap", "swap");
  return r;
}

std::vector<evalsuite::EvalReport> Pipeline::eval() {
  auto aux = load_aux();
  auto res = load_reshape();
  auto enc = load_encoder();
  auto swap = load_swap();
  auto& val = corpus("val");
  const auto pairs = reshape::heldout_pairs(val, cfg_.eval.pairs, cfg_.eval.seed);
  std::vector<std::pair<int, int>> self;
  for (const auto& p : pairs) self.emplace_back(p.first, p.first);
  const int renders = cfg_.eval.gallery_renders;
  const auto ga = evalsuite::build_gallery([&](const torch::Tensor& x) { return aux.eval.id_a(x); }, val, renders);
  const auto gb = evalsuite::build_gallery([&](const torch::Tensor& x) { return aux.eval.id_b(x); }, val, renders);
  std::vector<evalsuite::EvalReport> reports;
  auto add = [&](const evalsuite::SwapSet& set, const std::string& label) {
    auto r = evalsuite::evaluate(aux.eval, set, ga, gb, label);
    r.config_hash = cfg_.stage_hash("eval");
    reports.push_back(r);
  };
  add(evalsuite::run_swaps(val, blend_model(), res, enc, swap, pairs, true), "Ours");
  add(evalsuite::run_swaps(val, blend_model(), res, enc, swap, pairs, false), "No reshape");
  add(evalsuite::run_swaps(val, blend_model(), res, enc, swap, self, true), "Self-swap");
  add(evalsuite::oracle_set(val, blend_model(), pairs), "Oracle render");

  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports) j.push_back(r.to_json());
  std::ofstream(cfg_.run_dir / "eval.json") << j.dump(2) << "\n";
  std::ofstream csv(cfg_.run_dir / "eval.csv");
  csv << evalsuite::EvalReport::csv_header() << "\n";
  for (const auto& r : reports) csv << r.csv_row() << "\n";
  log_({{"stage", "eval"}, {"reports", j}});
  return reports;
}

face3d::FaceParams Pipeline::sidecar_params(const fs::path& image) const {
  fs::path side = image;
  side.replace_extension(".params.json");
  require(fs::exists(side), "missing params sidecar " + side.string());
  std::ifstream in(side);
  try {
    return synthdata::params_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad params sidecar " + side.string() + ": " + e.what());
  }
}

swapnet::SwapResult Pipeline::swap_files(const fs::path& source, const fs::path& target, const fs::path& out) {
  auto res_ckpt = load("reshape", "reshape");
  auto swap = load_swap();
  auto enc = load_encoder();
  const int size = enc->config().image_size;
  require(res_ckpt.config.at("image_size").get<int>() == size && swap.encoder.image_size == size,
          "resolution mismatch between checkpoints: reshape " + std::to_string(res_ckpt.config.at("image_size").get<int>()) +
              ", encoder " + std::to_string(size) + ", swap " + std::to_string(swap.encoder.image_size));
  auto res = reshape::load_model(res_ckpt);
  const Image src = read_png(source), tgt = read_png(target);
  const auto ps = sidecar_params(source), pt = sidecar_params(target);
  const auto& model = blend_model();
  face3d::validate(ps, model.dims);
  face3d::validate(pt, model.dims);
  const SegMap seg = synthdata::render_face(model, pt, 0, tgt.size()).seg;
  auto r = swapnet::swap_faces(src, tgt, seg, ps, pt, model, res, enc, swap);
  write_png(r.swapped, out);
  log_({{"stage", "swap"}, {"source", source.string()}, {"target", target.string()}, {"out", out.string()}});
  return r;
}

void Pipeline::viz_flow(const fs::path& source, const fs::path& target, const fs::path& out) {
  auto res = load_reshape();
  const Image tgt = read_png(target);
  const auto ps = sidecar_params(source), pt = sidecar_params(target);
  const auto& model = blend_model();
  const SegMap seg = synthdata::render_face(model, pt, 0, tgt.size()).seg;
  const auto r = reshape::reshape_infer(res, model, tgt, seg, ps, pt);
  write_rgb8_png(r.flow.height, r.flow.width, viz::flow_to_rgb(r.flow), out);
  fs::path raw = out;
  raw.replace_extension(".sflw");
  write_flow(r.flow, raw);
  log_({{"stage", "viz-flow"}, {"out", out.string()}, {"flow", raw.string()}});
}

void Pipeline::viz_grid(int count, const fs::path& out) {
  require(count > 0, "viz-grid: pair count must be positive");
  auto res = load_reshape();
  auto enc = load_encoder();
  auto swap = load_swap();
  auto& val = corpus("val");
  const auto pairs = reshape::heldout_pairs(val, count, cfg_.eval.seed);
  const auto set = evalsuite::run_swaps(val, blend_model(), res, enc, swap, pairs, true);
  const auto reshaped = swapnet::reshape_targets(res, val, reshape::make_pairs(val, blend_model(), pairs));
  std::vector<std::vector<Image>> rows;
  for (int i = 0; i < count; ++i) {
    const auto [t, s] = pairs[static_cast<std::size_t>(i)];
    rows.push_back({image_from_tensor(val.images[s]), image_from_tensor(val.images[t]), image_from_tensor(reshaped[i]),
                    image_from_tensor(set.swapped[i])});
  }
  write_png(viz::image_grid(rows), out);
  log_({{"stage", "viz-grid"}, {"out", out.string()}, {"rows", count}});
}

void Pipeline::viz_attn(int pair, int patch, const fs::path& out) {
  auto res = load_reshape();
  auto enc = load_encoder();
  auto swap = load_swap();
  auto& val = corpus("val");
  const int grid = enc->config().grid();
  require(pair >= 0, "viz-attn: pair index must be non-negative");
  require(patch >= 0 && patch < grid * grid, "viz-attn: patch index out of range");
  const auto pairs = reshape::heldout_pairs(val, pair + 1, cfg_.eval.seed);
  const auto pb = reshape::make_pairs(val, blend_model(), {pairs.back()});
  auto reshaped = swapnet::reshape_targets(res, val, pb);
  auto source = val.images.index_select(0, pb.source_rows);
  torch::NoGradGuard guard;
  const auto tr = swap.generator->cafm->fuse(enc(source), enc(reshaped));
  const auto row = tr.attention[0].mean(0)[patch];
  const Image src = image_from_tensor(source[0]);
  write_png(viz::image_grid({{viz::mark_patch(image_from_tensor(reshaped[0]), patch, grid), src, viz::attention_overlay(src, row, grid)}}),
            out);
  log_({{"stage", "viz-attn"}, {"out", out.string()}, {"pair", pair}, {"patch", patch}});
}

}  // namespace flowface
