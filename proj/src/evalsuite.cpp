#include "flowface/evalsuite.hpp"

#include "flowface/common.hpp"
#include "flowface/synthdata.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

namespace flowface::evalsuite {
namespace F = torch::nn::functional;

double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0;
    for (double x : v) s += x;
    return s;
  }
  const auto half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

double pairwise_mean(std::span<const double> v) {
  require(!v.empty(), "pairwise_mean: empty input");
  return pairwise_sum(v) / static_cast<double>(v.size());
}

namespace {

std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous().flatten();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

double mean_of(const torch::Tensor& t) {
  const auto v = to_vector(t);
  return pairwise_mean(v);
}

constexpr int kChunk = 16;

}  // namespace

GradcheckResult finite_diff_gradcheck(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& input,
                                      double epsilon, double tolerance) {
  GradcheckResult r;
  auto x = input.detach().to(torch::kFloat64).clone().requires_grad_(true);
  auto y = f(x);
  if (y.numel() != 1) {
    r.message = "function is not scalar-valued";
    return r;
  }
  if (!torch::isfinite(y).all().item<bool>()) {
    r.message = "non-finite function value at the input";
    return r;
  }
  auto grads = torch::autograd::grad({y}, {x}, {}, false, false, true);
  auto analytic = grads[0].defined() ? grads[0].detach() : torch::zeros_like(x);
  if (!torch::isfinite(analytic).all().item<bool>()) {
    r.message = "non-finite analytic gradient";
    return r;
  }
  auto base = x.detach().clone();
  auto flat = base.view({-1});
  auto a = analytic.contiguous().view({-1});
  torch::NoGradGuard guard;
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + epsilon;
    const double fp = f(base).item<double>();
    flat[i] = orig - epsilon;
    const double fm = f(base).item<double>();
    flat[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      r.message = "non-finite function value at element " + std::to_string(i);
      r.passed = false;
      return r;
    }
    const double numeric = (fp - fm) / (2.0 * epsilon);
    const double an = a[i].item<double>();
    const double rel = std::abs(an - numeric) / std::max({std::abs(an), std::abs(numeric), 1e-8});
    r.max_rel_error = std::max(r.max_rel_error, rel);
  }
  r.passed = r.max_rel_error < tolerance;
  r.message = r.passed ? "ok" : "max relative error " + std::to_string(r.max_rel_error) + " exceeds " + std::to_string(tolerance);
  return r;
}

double id_retrieval_accuracy(const torch::Tensor& swapped, const torch::Tensor& true_ids, const torch::Tensor& gallery,
                             const torch::Tensor& gallery_ids) {
  require(gallery.size(0) > 0, "id_retrieval_accuracy: empty gallery");
  require(swapped.size(0) > 0 && swapped.size(0) == true_ids.size(0), "id_retrieval_accuracy: one identity per swapped row required");
  require(swapped.size(1) == gallery.size(1) && gallery.size(0) == gallery_ids.size(0), "id_retrieval_accuracy: shape mismatch");
  const auto opts = F::NormalizeFuncOptions().dim(1).eps(1e-12);
  auto s = F::normalize(swapped.to(torch::kFloat64), opts);
  auto g = F::normalize(gallery.to(torch::kFloat64), opts);
  auto nearest = torch::matmul(s, g.t()).argmax(1);
  auto hit = gallery_ids.to(torch::kInt64).index_select(0, nearest).eq(true_ids.to(torch::kInt64)).to(torch::kFloat64);
  return 100.0 * mean_of(hit);
}

double random_retrieval_accuracy(int trials, int dim, std::uint64_t seed) {
  require(trials > 0 && dim > 0, "random_retrieval_accuracy: trials and dim must be positive");
  Rng rng(seed);
  auto unit = [&](int n) {
    auto t = torch::empty({n, dim}, torch::kFloat64);
    auto a = t.accessor<double, 2>();
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < dim; ++d) a[i][d] = rng.normal();
    return t;
  };
  std::vector<double> acc;
  const auto ids = torch::tensor({0, 1}, torch::kInt64);
  for (int k = 0; k < trials; ++k) {
    auto gallery = unit(2);
    auto query = unit(1);
    const auto truth = torch::tensor({static_cast<std::int64_t>(rng.below(2))}, torch::kInt64);
    acc.push_back(id_retrieval_accuracy(query, truth, gallery, ids));
  }
  return pairwise_mean(acc);
}

Gallery build_gallery(const std::function<torch::Tensor(const torch::Tensor&)>& embed, const Corpus& corpus, int renders) {
  require(renders > 0, "build_gallery: renders must be positive");
  std::map<int, std::vector<std::int64_t>> rows;
  for (int i = 0; i < corpus.size(); ++i) {
    auto& r = rows[corpus.records[static_cast<std::size_t>(i)].identity_id];
    if (static_cast<int>(r.size()) < renders) r.push_back(i);
  }
  require(!rows.empty(), "build_gallery: empty corpus");
  std::vector<torch::Tensor> centroids;
  std::vector<std::int64_t> ids;
  torch::NoGradGuard guard;
  for (const auto& [id, r] : rows) {
    auto e = embed(corpus.images.index_select(0, index_tensor(r))).to(torch::kFloat64);
    centroids.push_back(e.mean(0));
    ids.push_back(id);
  }
  return {torch::stack(centroids), index_tensor(ids)};
}

double shape_error(auxnets::LandmarkRegressor& regressor, const torch::Tensor& images, const torch::Tensor& s2t) {
  require(images.size(0) == s2t.size(0) && images.size(0) > 0, "shape_error: one landmark set per image required");
  auto pred = auxnets::batched(images, kChunk, [&](const torch::Tensor& x) { return regressor(x); });
  return mean_of((pred.to(torch::kFloat64) - s2t.to(torch::kFloat64)).norm(2, -1));
}

double expression_error(auxnets::ExpEmbedder& embedder, const torch::Tensor& swapped, const torch::Tensor& targets) {
  require(swapped.sizes() == targets.sizes() && swapped.size(0) > 0, "expression_error: image batches differ");
  auto a = auxnets::batched(swapped, kChunk, [&](const torch::Tensor& x) { return embedder(x); }).to(torch::kFloat64);
  auto b = auxnets::batched(targets, kChunk, [&](const torch::Tensor& x) { return embedder(x); }).to(torch::kFloat64);
  return mean_of((a - b).norm(2, -1));
}

double pose_error(const torch::Tensor& predicted, const torch::Tensor& target) {
  require(predicted.sizes() == target.sizes() && predicted.size(1) == 3, "pose_error: expected matching N x 3 rotations");
  auto p = predicted.to(torch::kFloat64).contiguous();
  auto t = target.to(torch::kFloat64).contiguous();
  std::vector<double> deg;
  for (std::int64_t i = 0; i < p.size(0); ++i) {
    const Eigen::Vector3d a(p[i][0].item<double>(), p[i][1].item<double>(), p[i][2].item<double>());
    const Eigen::Vector3d b(t[i][0].item<double>(), t[i][1].item<double>(), t[i][2].item<double>());
    deg.push_back(face3d::rotation_geodesic_deg(face3d::axis_angle_to_matrix(a), face3d::axis_angle_to_matrix(b)));
  }
  return pairwise_mean(deg);
}

double pose_error(auxnets::PoseRegressor& regressor, const torch::Tensor& swapped, const torch::Tensor& target_rotation) {
  return pose_error(auxnets::batched(swapped, kChunk, [&](const torch::Tensor& x) { return regressor(x); }), target_rotation);
}

void EvalReport::validate() const {
  require(embedders.size() == id_acc.size(), "EvalReport: one accuracy per embedder required");
  for (double a : id_acc) require(a >= 0 && a <= 100, "EvalReport: accuracy outside [0, 100]");
  require(id_acc_mean >= 0 && id_acc_mean <= 100, "EvalReport: mean accuracy outside [0, 100]");
  require(shape_error >= 0 && expr_error >= 0 && pose_error >= 0, "EvalReport: negative error");
  require(samples >= 0, "EvalReport: negative sample count");
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json acc = nlohmann::json::object();
  for (std::size_t i = 0; i < embedders.size(); ++i) acc[embedders[i]] = id_acc[i];
  return {{"label", label},           {"id_acc", acc},           {"id_acc_mean", id_acc_mean},
          {"shape_error", shape_error}, {"expr_error", expr_error}, {"pose_error", pose_error},
          {"samples", samples},        {"config_hash", config_hash}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.label = j.at("label").get<std::string>();
  for (const auto& [name, value] : j.at("id_acc").items()) {
    r.embedders.push_back(name);
    r.id_acc.push_back(value.get<double>());
  }
  r.id_acc_mean = j.at("id_acc_mean").get<double>();
  r.shape_error = j.at("shape_error").get<double>();
  r.expr_error = j.at("expr_error").get<double>();
  r.pose_error = j.at("pose_error").get<double>();
  r.samples = j.at("samples").get<int>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.validate();
  return r;
}

std::string EvalReport::csv_header() { return "label,id_acc_mean,shape_error,expr_error,pose_error,samples,config_hash"; }

std::string EvalReport::csv_row() const {
  std::ostringstream os;
  os << std::setprecision(17) << label << ',' << id_acc_mean << ',' << shape_error << ',' << expr_error << ',' << pose_error << ','
     << samples << ',' << config_hash;
  return os.str();
}

std::string table_text(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  std::size_t w = 6;
  for (const auto& r : reports) w = std::max(w, r.label.size());
  os << std::left << std::setw(static_cast<int>(w)) << "Method" << "  " << std::right << std::setw(10) << "ID Acc(%)"
     << std::setw(8) << "Shape" << std::setw(8) << "Expr." << std::setw(8) << "Pose." << '\n';
  os << std::fixed;
  for (const auto& r : reports)
    os << std::left << std::setw(static_cast<int>(w)) << r.label << "  " << std::right << std::setprecision(2) << std::setw(10)
       << r.id_acc_mean << std::setw(8) << r.shape_error << std::setw(8) << r.expr_error << std::setw(8) << r.pose_error << '\n';
  return os.str();
}

namespace {

SwapSet describe(const Corpus& corpus, const reshape::PairBatch& pb) {
  SwapSet s;
  s.targets = corpus.images.index_select(0, pb.target_rows);
  s.source_ids = corpus.identity.index_select(0, pb.source_rows);
  s.s2t_landmarks = pb.landmarks_s2t;
  s.target_rotation = corpus.rotation.index_select(0, pb.target_rows);
  return s;
}

}  // namespace

SwapSet run_swaps(const Corpus& corpus, const face3d::BlendModel& model, reshape::Model& res, facemae::FaceEncoder& encoder,
                  swapnet::SwapModel& swap, const std::vector<std::pair<int, int>>& pairs, bool use_reshape) {
  require(!pairs.empty(), "run_swaps: no pairs");
  require(swap.encoder.image_size == corpus.image_size().width, "run_swaps: resolution mismatch between checkpoints and data");
  const auto pb = reshape::make_pairs(corpus, model, pairs);
  SwapSet s = describe(corpus, pb);
  std::vector<torch::Tensor> out;
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    const auto end = static_cast<std::int64_t>(std::min(pairs.size(), start + kChunk));
    const auto b = static_cast<std::int64_t>(start);
    reshape::PairBatch chunk{pb.target_rows.slice(0, b, end), pb.source_rows.slice(0, b, end), pb.is_reconstruction.slice(0, b, end),
                             pb.landmarks_t.slice(0, b, end), pb.landmarks_s2t.slice(0, b, end)};
    auto target = use_reshape ? swapnet::reshape_targets(res, corpus, chunk) : corpus.images.index_select(0, chunk.target_rows);
    out.push_back(swapnet::swap_batch(swap, encoder, corpus.images.index_select(0, chunk.source_rows), target));
  }
  s.swapped = torch::cat(out, 0);
  return s;
}

SwapSet oracle_set(const Corpus& corpus, const face3d::BlendModel& model, const std::vector<std::pair<int, int>>& pairs) {
  require(!pairs.empty(), "oracle_set: no pairs");
  const auto pb = reshape::make_pairs(corpus, model, pairs);
  SwapSet s = describe(corpus, pb);
  s.swapped = torch::empty_like(s.targets);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& rt = corpus.records[static_cast<std::size_t>(pairs[i].first)];
    const auto& rs = corpus.records[static_cast<std::size_t>(pairs[i].second)];
    face3d::FaceParams p = rt.params;
    p.beta = rs.params.beta;
    const auto r = synthdata::render_face(model, p, rs.texture_seed, corpus.image_size(), synthdata::SceneStyle::from_seed(rt.scene_seed));
    s.swapped[static_cast<std::int64_t>(i)] = to_tensor(r.image);
  }
  return s;
}

EvalReport evaluate(EvalNets& nets, const SwapSet& set, const Gallery& gallery_a, const Gallery& gallery_b, const std::string& label) {
  require(nets.id_a && nets.id_b && nets.exp && nets.landmarks && nets.pose, "evaluate: evaluation networks missing");
  EvalReport r;
  r.label = label;
  r.samples = static_cast<int>(set.swapped.size(0));
  auto embed = [&](auxnets::IdEmbedder& net) {
    return auxnets::batched(set.swapped, kChunk, [&](const torch::Tensor& x) { return net(x); });
  };
  r.embedders = {"A", "B"};
  r.id_acc = {id_retrieval_accuracy(embed(nets.id_a), set.source_ids, gallery_a.centroids, gallery_a.ids),
              id_retrieval_accuracy(embed(nets.id_b), set.source_ids, gallery_b.centroids, gallery_b.ids)};
  r.id_acc_mean = pairwise_mean(r.id_acc);
  r.shape_error = shape_error(nets.landmarks, set.swapped, set.s2t_landmarks);
  r.expr_error = expression_error(nets.exp, set.swapped, set.targets);
  r.pose_error = pose_error(nets.pose, set.swapped, set.target_rotation);
  r.validate();
  return r;
}

}  // namespace flowface::evalsuite
