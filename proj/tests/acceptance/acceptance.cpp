// End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//
//   flowface_acceptance [--work DIR] [--only 1,2,...] [--strict]
//
// Training-backed criteria (5-7, 9) run real desk-scale pipelines under
// --work; finished stages are reused on a rerun when their checkpoint still
// verifies against the config. Exit status is 0 once every criterion has
// been evaluated, even if some failed; --strict makes any FAIL exit 1.

#include "flowface/auxnets.hpp"
#include "flowface/checkpoint.hpp"
#include "flowface/common.hpp"
#include "flowface/config.hpp"
#include "flowface/evalsuite.hpp"
#include "flowface/face3d.hpp"
#include "flowface/facemae.hpp"
#include "flowface/pipeline.hpp"
#include "flowface/reshape.hpp"
#include "flowface/swapnet.hpp"
#include "flowface/synthdata.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

using namespace flowface;
namespace fs = std::filesystem;

namespace {

constexpr auto kF64 = torch::kFloat64;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

void progress(const std::string& msg) { std::cout << "  .. " << msg << std::endl; }

// ---------------------------------------------------------------- 1: warp

double bilinear_oracle(const torch::TensorAccessor<double, 2>& img, int h, int w, double x, double y) {
  x = std::clamp(x, 0.0, w - 1.0);
  y = std::clamp(y, 0.0, h - 1.0);
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * img[y0][x0] + fx * img[y0][x1]) + fy * ((1 - fx) * img[y1][x0] + fx * img[y1][x1]);
}

Verdict criterion_warp() {
  torch::manual_seed(101);
  const int H = 8, W = 8, C = 3;
  double worst = 0;
  bool identity = true;
  for (int trial = 0; trial < 200; ++trial) {
    auto img = torch::randn({1, C, H, W}, kF64);
    // Displacements reach well past the border so clamping is exercised.
    auto flow = (torch::rand({1, 2, H, W}, kF64) * 2 - 1) * 5.0;
    auto out = reshape::warp(img, flow);
    auto fa = flow.accessor<double, 4>();
    for (int c = 0; c < C; ++c) {
      auto plane = img[0][c];
      auto pa = plane.accessor<double, 2>();
      auto out_plane = out[0][c];
      auto oa = out_plane.accessor<double, 2>();
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          worst = std::max(worst, std::abs(oa[y][x] - bilinear_oracle(pa, H, W, x + fa[0][0][y][x], y + fa[0][1][y][x])));
    }
    identity = identity && torch::equal(reshape::warp(img, torch::zeros({1, 2, H, W}, kF64)), img);
  }
  return {worst <= 1e-7 && identity, "max |warp - oracle| " + fmt(worst) + " (tol 1e-7), zero flow bitwise " + (identity ? "yes" : "no")};
}

// ---------------------------------------------------------------- 2: gradients

Verdict criterion_gradients() {
  torch::manual_seed(202);
  const int n = 6;
  auto img = torch::randn({1, 3, n, n}, kF64);
  // Sample points sit inside lattice cells, away from cell edges and the
  // border clamp, where the bilinear map is smooth.
  auto cell = torch::randint(0, n - 1, {1, 2, n, n}, torch::TensorOptions().dtype(kF64));
  auto frac = torch::rand({1, 2, n, n}, kF64) * 0.6 + 0.2;
  auto base = torch::stack({torch::arange(n, kF64).view({1, n}).expand({n, n}), torch::arange(n, kF64).view({n, 1}).expand({n, n})})
                  .unsqueeze(0);
  auto flow = cell + frac - base;
  auto head = torch::randn({1, 3, n, n}, kF64);
  const auto gw = evalsuite::finite_diff_gradcheck([&](const torch::Tensor& f) { return (reshape::warp(img, f) * head).sum(); },
                                                   flow, 1e-6, 1e-4);

  swapnet::SwapConfig cfg;
  cfg.heads = 2;
  cfg.blocks = 2;
  cfg.mlp_ratio = 2;
  swapnet::Cafm cafm(8, cfg);
  cafm->to(kF64);
  auto e_s = torch::randn({1, 4, 8}, kF64), e_t = torch::randn({1, 3, 8}, kF64);
  auto head2 = torch::randn({1, 3, 8}, kF64);
  const auto gc = evalsuite::finite_diff_gradcheck([&](const torch::Tensor& s) { return (cafm(s, e_t) * head2).sum(); }, e_s, 1e-6,
                                                   1e-3);
  return {gw.passed && gc.passed,
          "warp/flow rel " + fmt(gw.max_rel_error) + " (tol 1e-4), cafm/e_s rel " + fmt(gc.max_rel_error) + " (tol 1e-3)"};
}

// ---------------------------------------------------------------- 3: LBS and projection

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& w) {
  const double angle = w.norm();
  if (angle == 0.0) return Eigen::Matrix3d::Identity();
  const Eigen::Vector3d k = w / angle;
  Eigen::Matrix3d K;
  K << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return Eigen::Matrix3d::Identity() + std::sin(angle) * K + (1 - std::cos(angle)) * K * K;
}

Eigen::Matrix4d rigid(const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = t;
  return m;
}

// Term-by-term skinning with homogeneous joint transforms, independent of build_mesh.
Eigen::MatrixXd lbs_oracle(const face3d::BlendModel& m, const face3d::FaceParams& p) {
  const int V = m.dims.vertices;
  const double c = std::cos(p.theta[3]), s = std::sin(p.theta[3]);
  Eigen::Matrix3d jaw;
  jaw << 1, 0, 0, 0, c, s, 0, -s, c;
  const double feats[4] = {jaw(1, 1) - 1.0, jaw(1, 2), jaw(2, 1), jaw(2, 2) - 1.0};
  std::vector<Eigen::Vector3d> rest(V), shaped(V);
  for (int v = 0; v < V; ++v)
    for (int k = 0; k < 3; ++k) {
      double shape = m.template_vertices(v, k);
      for (int b = 0; b < m.dims.shape; ++b) shape += m.shape_basis(3 * v + k, b) * p.beta[b];
      double full = shape;
      for (int e = 0; e < m.dims.expression; ++e) full += m.expr_basis(3 * v + k, e) * p.psi[e];
      for (int f = 0; f < 4; ++f) full += m.pose_basis(3 * v + k, f) * feats[f];
      shaped[v][k] = shape;
      rest[v][k] = full;
    }
  Eigen::Vector3d j[2] = {Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()};
  for (int a = 0; a < 2; ++a)
    for (int v = 0; v < V; ++v) j[a] += m.joint_regressor(a, v) * shaped[v];
  const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
  const Eigen::Matrix4d g0 = rigid(I, j[0]) * rigid(rodrigues(p.theta.head<3>()), Eigen::Vector3d::Zero()) * rigid(I, -j[0]);
  const Eigen::Matrix4d g1 = g0 * rigid(I, j[1]) * rigid(jaw, Eigen::Vector3d::Zero()) * rigid(I, -j[1]);
  Eigen::MatrixXd out(V, 3);
  for (int v = 0; v < V; ++v) {
    const Eigen::Vector4d h(rest[v].x(), rest[v].y(), rest[v].z(), 1.0);
    const Eigen::Vector4d q = m.skin_weights(v, 0) * (g0 * h) + m.skin_weights(v, 1) * (g1 * h);
    out.row(v) = q.head<3>().transpose();
  }
  return out;
}

face3d::FaceParams random_params(const face3d::BlendModel& m, Rng& rng) {
  auto p = face3d::FaceParams::neutral(m.dims);
  for (int i = 0; i < m.dims.shape; ++i) p.beta[i] = rng.uniform(-2.5, 2.5);
  for (int i = 0; i < m.dims.expression; ++i) p.psi[i] = rng.uniform(-2.5, 2.5);
  p.theta << rng.uniform(-0.5, 0.5), rng.uniform(-0.7, 0.7), rng.uniform(-0.4, 0.4), rng.uniform(0.0, 0.4);
  p.camera = {rng.uniform(0.5, 1.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
  return p;
}

Verdict criterion_lbs() {
  const auto m = face3d::build_model(9);
  Rng rng(303);
  const face3d::ImageSize size{64, 64};
  double worst = 0;
  bool proj_exact = true, cross_exact = true;
  for (int draw = 0; draw < 100; ++draw) {
    const auto p = random_params(m, rng);
    const auto mesh = face3d::build_mesh(m, p);
    worst = std::max(worst, (mesh.vertices - lbs_oracle(m, p)).cwiseAbs().maxCoeff());
    const auto px = face3d::project(mesh.vertices, p.camera, size);
    for (int v = 0; v < m.dims.vertices; ++v) {
      const double nx = p.camera.scale * mesh.vertices(v, 0) + p.camera.tx;
      const double ny = p.camera.scale * mesh.vertices(v, 1) + p.camera.ty;
      proj_exact = proj_exact && px(v, 0) == (nx + 1.0) * (0.5 * (size.width - 1)) && px(v, 1) == (ny + 1.0) * (0.5 * (size.height - 1));
    }
    const auto lm = face3d::cross_identity_landmarks(m, p, p, size);
    const auto direct = face3d::contour_landmarks(m, mesh, p.camera, size);
    cross_exact = cross_exact && lm.source_to_target.points == lm.target.points && lm.target.points == direct.points;
  }
  return {worst <= 1e-10 && proj_exact && cross_exact, "max |mesh - oracle| " + fmt(worst) + " (tol 1e-10), projection exact " +
                                                           (proj_exact ? "yes" : "no") + ", cross-identity self-consistent " +
                                                           (cross_exact ? "yes" : "no")};
}

// ---------------------------------------------------------------- 4: attention

Verdict criterion_attention() {
  torch::manual_seed(404);
  auto q = torch::randn({2, 4, 9, 8}, kF64), k = torch::randn({2, 4, 11, 8}, kF64);
  auto a = swapnet::cross_attention(q, k);
  const double row_err = (a.sum(-1) - 1).abs().max().item<double>();
  // Offsetting every key by c adds the same q.c/sqrt(d) to a whole row of logits.
  auto shifted = swapnet::cross_attention(q, k + torch::randn({1, 1, 1, 8}, kF64) * 3.0);
  const double shift_err = (shifted - a).abs().max().item<double>();

  swapnet::SwapConfig cfg;
  swapnet::Cafm cafm(16, cfg);
  {
    torch::NoGradGuard guard;
    for (auto& p : cafm->parameters()) p.uniform_(-0.5, 0.5);
  }
  cafm->to(kF64);
  torch::NoGradGuard guard;
  auto e_t = torch::randn({1, 6, 16}, kF64);
  auto e_s1 = torch::randn({1, 1, 16}, kF64);
  const auto tr1 = cafm->fuse(e_s1, e_t);
  bool single = torch::equal(tr1.attention, torch::ones_like(tr1.attention));
  auto vs1 = cafm->value_source()(cafm->norm_source()(e_s1));
  auto vt = cafm->value_target()(cafm->norm_target()(e_t));
  single = single && torch::equal(tr1.v_fused, vs1.expand_as(vt) + vt);

  cafm->value_source()->weight.zero_();
  cafm->value_source()->bias.zero_();
  const auto tr0 = cafm->fuse(torch::randn({1, 16, 16}, kF64), e_t);
  const bool additive = torch::equal(tr0.v_fused, vt);
  return {row_err <= 1e-6 && shift_err <= 1e-6 && single && additive,
          "row sum err " + fmt(row_err) + ", shift err " + fmt(shift_err) + " (tol 1e-6), N_s=1 exact " + (single ? "yes" : "no") +
              ", zero source value exact " + (additive ? "yes" : "no")};
}

// ---------------------------------------------------------------- shared desk pipeline

RunConfig desk_config(const fs::path& work) {
  RunConfig cfg;
  cfg.data_dir = work / "desk" / "data";
  cfg.run_dir = work / "desk" / "run";
  return cfg;
}

bool have(Pipeline& p, const std::string& tag, const std::string& hash_stage) {
  if (!fs::exists(p.checkpoint_path(tag))) return false;
  try {
    p.load(tag, hash_stage);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 5: MAE

// Mean masked loss over the whole corpus with fixed per-image masks.
double corpus_mae_loss(facemae::Mae& mae, const Corpus& corpus, std::uint64_t seed) {
  torch::NoGradGuard guard;
  mae.encoder->eval();
  mae.decoder->eval();
  std::vector<double> losses;
  const int n = corpus.size(), chunk = 20;
  for (int start = 0; start < n; start += chunk) {
    const int end = std::min(n, start + chunk);
    std::vector<facemae::MaskPlan> plans;
    for (int i = start; i < end; ++i) plans.push_back(facemae::random_mask(mae.cfg.tokens(), mae.cfg.mask_ratio, seed + i));
    losses.push_back(mae.loss(corpus.images.slice(0, start, end), plans).item<double>() * (end - start));
  }
  return evalsuite::pairwise_sum(losses) / n;
}

Verdict criterion_mae(const fs::path& work) {
  synthdata::DatasetConfig d;
  d.identities = 8;
  d.per_identity = 25;
  d.val_per_identity = 1;
  const fs::path dir = work / "mae200";
  progress("criterion 5: dataset of 200 training images");
  const auto manifest = synthdata::dataset_exists(dir) ? synthdata::load_dataset(dir) : synthdata::generate_dataset(d, dir);
  const auto corpus = load_corpus(manifest, "train");
  require(corpus.size() == 200, "criterion 5: expected 200 training images");

  const facemae::EncoderConfig enc;
  facemae::PretrainConfig cfg;
  const auto t0 = std::chrono::steady_clock::now();
  progress("criterion 5: pretraining " + std::to_string(cfg.steps) + " steps");
  const auto trained = facemae::pretrain_mae(corpus, enc, cfg);
  const double train_s = seconds_since(t0);
  auto init_cfg = cfg;
  init_cfg.steps = 0;
  auto init = facemae::load_mae(facemae::pretrain_mae(corpus, enc, init_cfg).checkpoint);
  auto done = facemae::load_mae(trained.checkpoint);
  const double before = corpus_mae_loss(init, corpus, 500), after = corpus_mae_loss(done, corpus, 500);

  // Determinism: two short runs from the same seed agree bit for bit.
  auto short_cfg = cfg;
  short_cfg.steps = 5;
  const auto r1 = facemae::pretrain_mae(corpus, enc, short_cfg), r2 = facemae::pretrain_mae(corpus, enc, short_cfg);
  bool same = r1.losses == r2.losses;
  for (const auto& [name, arr] : r1.checkpoint.arrays) same = same && torch::equal(arr, r2.checkpoint.arrays.at(name));
  same = same && trained.losses.front() == r1.losses.front();

  const double ratio = after / before;
  double tail = 0;
  const int last = std::min<int>(100, static_cast<int>(trained.losses.size()));
  for (int i = 0; i < last; ++i) tail += trained.losses[trained.losses.size() - 1 - i];
  tail /= last;
  return {ratio <= 0.5 && same && train_s <= 7200.0,
          "corpus masked loss " + fmt(before) + " -> " + fmt(after) + " (ratio " + fmt(ratio, 3) + ", need <= 0.5); training loss " +
              fmt(trained.losses.front()) + " -> " + fmt(tail) + " (last 100 mean); deterministic " + (same ? "yes" : "no") + "; " +
              fmt(train_s, 4) + " s"};
}

// ---------------------------------------------------------------- 6: stage one

struct DeskState {
  std::unique_ptr<Pipeline> pipe;
  bool stage_one = false;
  bool full = false;
};

Verdict criterion_stage_one(DeskState& desk) {
  auto& p = *desk.pipe;
  progress("criterion 6: desk dataset");
  p.gen_data();
  if (!have(p, auxnets::kLandmarkTag, "aux")) {
    progress("criterion 6: landmark regressor");
    p.train_aux({"landmark"});
  }
  const auto t0 = std::chrono::steady_clock::now();
  if (!have(p, "reshape", "reshape")) {
    progress("criterion 6: stage one, " + std::to_string(p.config().reshape_train.steps) + " steps");
    p.train_reshape();
  }
  const double train_s = seconds_since(t0);
  const auto trained = p.evaluate_reshape();

  auto regressor = auxnets::load_landmark_regressor(p.load(auxnets::kLandmarkTag, "aux"));
  auto init_cfg = p.config().reshape_train;
  init_cfg.steps = 0;
  auto init = reshape::load_model(
      reshape::train_reshape(p.corpus("train"), p.blend_model(), regressor, p.config().reshape_net, init_cfg).checkpoint);
  auto& val = p.corpus("val");
  const auto untrained = reshape::evaluate_flow(init.generator, init.net, val, p.blend_model(),
                                                reshape::heldout_pairs(val, p.config().eval.pairs, p.config().eval.seed));
  desk.stage_one = true;
  const double gain = untrained.epe / trained.epe;
  const bool pass = trained.epe <= 2.0 && gain >= 5.0 && trained.landmark_error <= 2.0;
  return {pass, "EPE " + fmt(trained.epe) + " px (need <= 2.0), untrained " + fmt(untrained.epe) + " px (gain " + fmt(gain, 3) +
                    "x, need >= 5), zero flow " + fmt(trained.zero_flow_epe) + " px; landmark error " + fmt(trained.landmark_error) +
                    " px (need <= 2.0, untrained " + fmt(untrained.landmark_error) + "); " + fmt(train_s, 4) + " s"};
}

// ---------------------------------------------------------------- 7: stage two

const evalsuite::EvalReport& find(const std::vector<evalsuite::EvalReport>& rs, const std::string& label) {
  for (const auto& r : rs)
    if (r.label == label) return r;
  throw RuntimeAbort("no report labelled " + label);
}

Verdict criterion_stage_two(DeskState& desk) {
  auto& p = *desk.pipe;
  if (!desk.stage_one) {
    p.gen_data();
    if (!have(p, auxnets::kLandmarkTag, "aux")) p.train_aux({"landmark"});
    if (!have(p, "reshape", "reshape")) p.train_reshape();
  }
  std::vector<std::string> missing;
  for (const auto& s : aux_specs())
    if (!have(p, s.tag, "aux")) missing.push_back(s.key);
  if (!missing.empty()) {
    progress("criterion 7: " + std::to_string(missing.size()) + " auxiliary networks");
    p.train_aux(missing);
  }
  if (!have(p, "mae", "mae")) {
    progress("criterion 7: encoder pretraining");
    p.pretrain_mae();
  }
  const auto t0 = std::chrono::steady_clock::now();
  if (!have(p, "swap", "swap")) {
    progress("criterion 7: stage two, " + std::to_string(p.config().swap_train.steps) + " steps");
    p.train_swap();
  }
  const double train_s = seconds_since(t0);
  progress("criterion 7: evaluation");
  const auto reports = p.eval();
  desk.full = true;
  const auto& ours = find(reports, "Ours");
  const auto& base = find(reports, "No reshape");
  const auto& self = find(reports, "Self-swap");
  const bool id_ok = ours.id_acc_mean >= 90.0;
  const bool expr_ok = ours.expr_error <= 1.5 * self.expr_error;
  const bool shape_ok = ours.shape_error <= 0.5 * base.shape_error;
  return {id_ok && expr_ok && shape_ok,
          "ID acc " + fmt(ours.id_acc_mean) + "% (need >= 90; no reshape " + fmt(base.id_acc_mean) + "%), expr " + fmt(ours.expr_error) +
              " vs self-swap " + fmt(self.expr_error) + " (need <= 1.5x), shape " + fmt(ours.shape_error) + " vs no reshape " +
              fmt(base.shape_error) + " px (need <= 0.5x); swap training " + fmt(train_s, 4) + " s"};
}

// ---------------------------------------------------------------- 8: metric sanity

Verdict criterion_metrics(DeskState& desk) {
  torch::manual_seed(808);
  auto gallery = torch::nn::functional::normalize(torch::randn({8, 64}), torch::nn::functional::NormalizeFuncOptions().dim(1));
  auto ids = torch::arange(8, torch::kInt64);
  const double exact = evalsuite::id_retrieval_accuracy(gallery.clone(), ids, gallery, ids);
  const double chance = evalsuite::random_retrieval_accuracy(4000, 64, 8);
  const bool chance_same = chance == evalsuite::random_retrieval_accuracy(4000, 64, 8);

  bool rerun_same = true;
  std::string rerun_what = "pipeline eval rerun";
  if (desk.full) {
    const auto before = desk.pipe->eval();
    const auto after = desk.pipe->eval();
    for (std::size_t i = 0; i < before.size(); ++i) rerun_same = rerun_same && before[i].to_json() == after[i].to_json();
  } else {
    // No trained desk run available: rerun the metrics with fixed random nets.
    rerun_what = "metric rerun";
    auto once = [] {
      torch::manual_seed(9);
      auxnets::ExpEmbedder exp(8, 10, 64);
      auxnets::LandmarkRegressor lm(8, 64);
      exp->eval();
      lm->eval();
      torch::manual_seed(10);
      auto x = torch::rand({4, 3, 64, 64}) * 2 - 1, y = torch::rand({4, 3, 64, 64}) * 2 - 1;
      return std::vector<double>{evalsuite::expression_error(exp, x, y), evalsuite::shape_error(lm, x, torch::rand({4, 17, 2}) * 63),
                                 evalsuite::pose_error(torch::rand({4, 3}, kF64), torch::zeros({4, 3}, kF64))};
    };
    rerun_same = once() == once();
  }
  return {exact == 100.0 && std::abs(chance - 50.0) <= 3.0 && chance_same && rerun_same,
          "identical inputs " + fmt(exact) + "%, random two-class " + fmt(chance) + "% (need 50 +- 3), " + rerun_what + " identical " +
              (rerun_same && chance_same ? "yes" : "no")};
}

// ---------------------------------------------------------------- 9: reproducibility

RunConfig tiny_config(const fs::path& root) {
  RunConfig cfg;
  cfg.dataset.identities = 3;
  cfg.dataset.per_identity = 4;
  cfg.dataset.val_per_identity = 2;
  cfg.eval.pairs = 4;
  cfg.eval.gallery_renders = 2;
  cfg.encoder.width = 32;
  cfg.encoder.depth = 1;
  cfg.encoder.decoder_width = 16;
  cfg.encoder.decoder_depth = 1;
  cfg.mae.steps = 2;
  cfg.mae.batch = 2;
  cfg.mae.log_every = 1;
  cfg.reshape_net.base_width = 8;
  cfg.reshape_net.disc_width = 8;
  cfg.reshape_train.steps = 2;
  cfg.reshape_train.batch = 2;
  cfg.reshape_train.log_every = 1;
  cfg.swap_net.blocks = 1;
  cfg.swap_net.decoder_channels = 32;
  cfg.swap_net.disc_width = 8;
  cfg.swap_train.steps = 2;
  cfg.swap_train.batch = 2;
  cfg.swap_train.log_every = 1;
  for (auto& [key, t] : cfg.aux) {
    t.steps = 2;
    t.batch = 2;
    t.width = 8;
  }
  cfg.data_dir = root / "data";
  cfg.run_dir = root / "run";
  return cfg;
}

struct RunTrace {
  std::map<std::string, std::string> files;  // relative path -> hash
  std::vector<nlohmann::json> losses;         // step 0/1 log entries, wall time removed
};

RunTrace tiny_run(const fs::path& root) {
  fs::remove_all(root);
  Pipeline p(tiny_config(root), false, true);
  p.gen_data();
  p.train_aux();
  p.pretrain_mae();
  p.train_reshape();
  p.train_swap();
  p.eval();
  RunTrace t;
  for (const auto& e : fs::recursive_directory_iterator(root / "data"))
    if (e.is_regular_file()) t.files[fs::relative(e.path(), root).string()] = synthdata::file_hash(e.path());
  std::ifstream log(root / "run" / "log.jsonl");
  for (std::string line; std::getline(log, line);) {
    auto j = nlohmann::json::parse(line);
    if (!j.contains("step") || !j["step"].is_number_integer() || j["step"].get<int>() > 1) continue;
    j.erase("wall");
    t.losses.push_back(j);
  }
  return t;
}

Verdict criterion_reproducible(const fs::path& work) {
  progress("criterion 9: two tiny pipeline runs");
  const auto a = tiny_run(work / "repro_a"), b = tiny_run(work / "repro_b");
  const bool files = !a.files.empty() && a.files == b.files;
  std::set<std::string> stages;
  for (const auto& j : a.losses) stages.insert(j.value("stage", "?"));
  const bool losses = !a.losses.empty() && a.losses == b.losses;
  return {files && losses, std::to_string(a.files.size()) + " dataset files identical " + (files ? "yes" : "no") + "; " +
                               std::to_string(a.losses.size()) + " step-0/1 loss records over " + std::to_string(stages.size()) +
                               " stages identical " + (losses ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowface acceptance run"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  bool strict = false;
  app.add_option("--work", work, "working directory for datasets and checkpoints");
  app.add_option("--only", only, "criteria to run")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_flag("--strict", strict, "exit 1 when any criterion fails");
  CLI11_PARSE(app, argc, argv);

  torch::set_num_threads(1);
  const fs::path root = fs::absolute(work);
  fs::create_directories(root);
  DeskState desk;
  desk.pipe = std::make_unique<Pipeline>(desk_config(root), false, true);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"warp oracle", criterion_warp},
      {"gradient checks", criterion_gradients},
      {"skinning and projection oracles", criterion_lbs},
      {"attention invariants", criterion_attention},
      {"encoder pretraining trend", [&] { return criterion_mae(root); }},
      {"stage-one trend", [&] { return criterion_stage_one(desk); }},
      {"stage-two trend", [&] { return criterion_stage_two(desk); }},
      {"metric sanity", [&] { return criterion_metrics(desk); }},
      {"end-to-end reproducibility", [&] { return criterion_reproducible(root); }},
  };
  int failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    ++ran;
    failed += v.pass ? 0 : 1;
    std::cout << "criterion " << id << " [" << criteria[i].first << "]: " << (v.pass ? "PASS" : "FAIL") << " - " << v.detail << " ("
              << fmt(seconds_since(t0), 4) << " s)" << std::endl;
  }
  std::cout << "acceptance: " << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return strict && failed > 0 ? 1 : 0;
}
