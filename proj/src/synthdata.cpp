#include "flowface/synthdata.hpp"

#include "flowface/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace flowface::synthdata {
namespace fs = std::filesystem;
using face3d::BlendModel;
using face3d::FaceParams;
using face3d::ImageSize;
using Color = std::array<double, 3>;

namespace {

double edge(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

// Identity appearance derived from the texture seed.
struct Palette {
  Color skin, hair, lips, iris;
  std::array<double, 16> noise;  // 4 sinusoids: amplitude, frequency, angle, phase
};

Palette make_palette(std::uint64_t texture_seed) {
  Rng rng(mix64(texture_seed ^ 0x7a11e77eULL));
  Palette p{};
  const double tone = rng.uniform(0.3, 0.9);
  p.skin = {tone + rng.uniform(-0.06, 0.06), tone * 0.78 + rng.uniform(-0.08, 0.08), tone * 0.62 + rng.uniform(-0.08, 0.08)};
  static constexpr Color kHair[] = {{0.10, 0.08, 0.06}, {0.35, 0.20, 0.10}, {0.85, 0.70, 0.40}, {0.60, 0.25, 0.10}, {0.62, 0.62, 0.62}};
  static constexpr Color kIris[] = {{0.20, 0.40, 0.80}, {0.25, 0.60, 0.30}, {0.40, 0.25, 0.10}, {0.50, 0.55, 0.60}};
  p.hair = kHair[rng.below(5)];
  for (auto& c : p.hair) c = std::clamp(c + rng.uniform(-0.08, 0.08), 0.0, 1.0);
  p.iris = kIris[rng.below(4)];
  for (auto& c : p.iris) c = std::clamp(c + rng.uniform(-0.1, 0.1), 0.0, 1.0);
  p.lips = {rng.uniform(0.6, 0.9), rng.uniform(0.2, 0.45), rng.uniform(0.25, 0.45)};
  for (int i = 0; i < 4; ++i) {
    p.noise[4 * i + 0] = rng.uniform(0.015, 0.035);
    p.noise[4 * i + 1] = rng.uniform(8.0, 20.0);
    p.noise[4 * i + 2] = rng.uniform(0.0, std::numbers::pi);
    p.noise[4 * i + 3] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return p;
}

double texture_noise(const Palette& p, double u, double v) {
  double n = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double a = p.noise[4 * i + 2];
    n += p.noise[4 * i] * std::sin(p.noise[4 * i + 1] * (u * std::cos(a) + v * std::sin(a)) + p.noise[4 * i + 3]);
  }
  return n;
}

Color region_color(const Palette& p, int cls, double u, double v) {
  auto scaled = [](Color c, double s) {
    for (auto& x : c) x *= s;
    return c;
  };
  switch (cls) {
    case face3d::kHair:
      return scaled(p.hair, 1.0 + 2.0 * texture_noise(p, u * 1.7, v * 1.7));
    case face3d::kLeftBrow:
    case face3d::kRightBrow:
      return scaled(p.hair, 0.8);
    case face3d::kLeftEye:
    case face3d::kRightEye: {
      const double cx = cls == face3d::kLeftEye ? -0.24 : 0.24;
      const double r = std::hypot(u - cx, v + 0.13);
      if (r < 0.016) return {0.05, 0.05, 0.05};
      if (r < 0.042) return p.iris;
      return {0.92, 0.92, 0.88};
    }
    case face3d::kMouth:
      return {0.25, 0.05, 0.08};
    case face3d::kUpperLip:
    case face3d::kLowerLip:
      return p.lips;
    case face3d::kNose:
      return scaled(p.skin, 0.93 + texture_noise(p, u, v));
    default:
      return scaled(p.skin, 1.0 + texture_noise(p, u, v));
  }
}

Eigen::MatrixXd vertex_normals(const Eigen::MatrixXd& verts, const std::vector<std::array<int, 3>>& tris) {
  Eigen::MatrixXd n = Eigen::MatrixXd::Zero(verts.rows(), 3);
  for (const auto& t : tris) {
    const Eigen::Vector3d a = verts.row(t[0]), b = verts.row(t[1]), c = verts.row(t[2]);
    const Eigen::Vector3d fn = (b - a).cross(c - a);
    for (int k : t) n.row(k) += fn.transpose();
  }
  for (Eigen::Index i = 0; i < n.rows(); ++i) {
    const double len = n.row(i).norm();
    if (len > 0) n.row(i) /= len;
  }
  return n;
}

struct ProjectedMesh {
  Eigen::MatrixXd vertices;
  Eigen::MatrixX2d pixels;
};

ProjectedMesh project_mesh(const BlendModel& model, const FaceParams& params, ImageSize size) {
  ProjectedMesh pm;
  pm.vertices = face3d::build_mesh(model, params).vertices;
  pm.pixels = face3d::project(pm.vertices, params.camera, size);
  return pm;
}

void check_same_pose(const FaceParams& a, const FaceParams& b) {
  require(a.theta == b.theta && a.psi == b.psi && a.camera.scale == b.camera.scale && a.camera.tx == b.camera.tx &&
              a.camera.ty == b.camera.ty,
          "ground_truth_flow: source-shape params must carry the target pose, expression and camera");
}

}  // namespace

double Raster::coverage() const {
  const auto n = std::count_if(triangle.begin(), triangle.end(), [](int t) { return t >= 0; });
  return static_cast<double>(n) / static_cast<double>(triangle.size());
}

SceneStyle SceneStyle::from_seed(std::uint64_t seed) {
  Rng rng(mix64(seed ^ 0x5ce7e5ULL));
  SceneStyle s;
  for (auto& c : s.background) c = rng.uniform(0.05, 0.95);
  const double lx = rng.uniform(-0.6, 0.6), ly = rng.uniform(-0.6, 0.6);
  const double n = std::sqrt(lx * lx + ly * ly + 1.0);
  s.light = {lx / n, ly / n, 1.0 / n};
  s.ambient = rng.uniform(0.45, 0.6);
  return s;
}

Raster rasterize(const Eigen::MatrixX2d& pixels, const Eigen::VectorXd& depth,
                 const std::vector<std::array<int, 3>>& triangles, ImageSize size) {
  Raster r;
  r.height = size.height;
  r.width = size.width;
  const auto n = static_cast<std::size_t>(size.height) * size.width;
  r.triangle.assign(n, -1);
  r.bary.assign(n, {0.0f, 0.0f, 0.0f});
  std::vector<double> zbuf(n, -std::numeric_limits<double>::infinity());
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    const auto& tri = triangles[t];
    const Eigen::Vector2d p0 = pixels.row(tri[0]), p1 = pixels.row(tri[1]), p2 = pixels.row(tri[2]);
    const double area = edge(p0, p1, p2);
    if (std::abs(area) < 1e-12) continue;
    const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({p0.x(), p1.x(), p2.x()}))));
    const int x1 = std::min(size.width - 1, static_cast<int>(std::floor(std::max({p0.x(), p1.x(), p2.x()}))));
    const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({p0.y(), p1.y(), p2.y()}))));
    const int y1 = std::min(size.height - 1, static_cast<int>(std::floor(std::max({p0.y(), p1.y(), p2.y()}))));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Eigen::Vector2d p(x, y);
        const double w0 = edge(p1, p2, p) / area;
        const double w1 = edge(p2, p0, p) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < -1e-9 || w1 < -1e-9 || w2 < -1e-9) continue;
        const double z = w0 * depth[tri[0]] + w1 * depth[tri[1]] + w2 * depth[tri[2]];
        const auto idx = static_cast<std::size_t>(y) * size.width + x;
        if (z <= zbuf[idx]) continue;
        zbuf[idx] = z;
        r.triangle[idx] = static_cast<int>(t);
        r.bary[idx] = {static_cast<float>(w0), static_cast<float>(w1), static_cast<float>(w2)};
      }
    }
  }
  return r;
}

Rendered render_face(const BlendModel& model, const FaceParams& params, std::uint64_t texture_seed, ImageSize size,
                     const SceneStyle& scene) {
  face3d::validate(params, model.dims);
  require(size.height > 0 && size.width > 0, "render_face: empty image size");
  const auto tris = model.triangles();
  const ProjectedMesh pm = project_mesh(model, params, size);
  const Raster raster = rasterize(pm.pixels, pm.vertices.col(2), tris, size);
  const Eigen::MatrixXd normals = vertex_normals(pm.vertices, tris);
  const Palette palette = make_palette(texture_seed);
  const Eigen::Vector3d light(scene.light[0], scene.light[1], scene.light[2]);

  Rendered out{Image(size.height, size.width), SegMap(size.height, size.width)};
  for (int y = 0; y < size.height; ++y) {
    for (int x = 0; x < size.width; ++x) {
      const auto idx = static_cast<std::size_t>(y) * size.width + x;
      Color c = scene.background;
      const int t = raster.triangle[idx];
      if (t >= 0) {
        const auto& tri = tris[static_cast<std::size_t>(t)];
        const auto& w = raster.bary[idx];
        double u = 0, v = 0;
        Eigen::Vector3d n = Eigen::Vector3d::Zero();
        for (int k = 0; k < 3; ++k) {
          u += w[k] * model.template_vertices(tri[k], 0);
          v += w[k] * model.template_vertices(tri[k], 1);
          n += w[k] * normals.row(tri[k]).transpose();
        }
        const int cls = face3d::canonical_region(u, v);
        out.seg.at(y, x) = static_cast<std::uint8_t>(cls);
        const double shade = scene.ambient + (1.0 - scene.ambient) * std::max(0.0, n.normalized().dot(light));
        c = region_color(palette, cls, u, v);
        for (auto& ch : c) ch *= shade;
      }
      for (int ch = 0; ch < 3; ++ch) out.image.at(y, x, ch) = static_cast<float>(std::clamp(2.0 * c[ch] - 1.0, -1.0, 1.0));
    }
  }
  return out;
}

namespace {

struct FlowRaster {
  Raster raster;
  FlowField flow;
};

constexpr std::size_t kExtrapolationNeighbours = 8;

FlowRaster reshaped_flow_raster(const BlendModel& model, const FaceParams& tgt, const FaceParams& src_shape, ImageSize size) {
  face3d::validate(tgt, model.dims);
  face3d::validate(src_shape, model.dims);
  check_same_pose(tgt, src_shape);
  FaceParams s2t = tgt;
  s2t.beta = src_shape.beta;
  const auto tris = model.triangles();
  const ProjectedMesh target = project_mesh(model, tgt, size);
  const ProjectedMesh reshaped = project_mesh(model, s2t, size);
  const Eigen::MatrixX2d displacement = target.pixels - reshaped.pixels;

  FlowRaster fr{rasterize(reshaped.pixels, reshaped.vertices.col(2), tris, size), FlowField(size.height, size.width)};
  const Raster& r = fr.raster;
  std::vector<std::array<int, 2>> boundary;
  for (int y = 0; y < size.height; ++y) {
    for (int x = 0; x < size.width; ++x) {
      const auto idx = static_cast<std::size_t>(y) * size.width + x;
      const int t = r.triangle[idx];
      if (t < 0) continue;
      const auto& tri = tris[static_cast<std::size_t>(t)];
      double dx = 0, dy = 0;
      for (int k = 0; k < 3; ++k) {
        dx += r.bary[idx][k] * displacement(tri[k], 0);
        dy += r.bary[idx][k] * displacement(tri[k], 1);
      }
      fr.flow.dx(y, x) = static_cast<float>(dx);
      fr.flow.dy(y, x) = static_cast<float>(dy);
      const bool edge_pixel = (x > 0 && !r.covered(y, x - 1)) || (x + 1 < size.width && !r.covered(y, x + 1)) ||
                              (y > 0 && !r.covered(y - 1, x)) || (y + 1 < size.height && !r.covered(y + 1, x));
      if (edge_pixel) boundary.push_back({x, y});
    }
  }
  std::vector<std::pair<double, std::size_t>> nearest(boundary.size());
  for (int y = 0; y < size.height; ++y) {
    for (int x = 0; x < size.width; ++x) {
      if (r.covered(y, x) || boundary.empty()) continue;
      for (std::size_t i = 0; i < boundary.size(); ++i) {
        const auto& b = boundary[i];
        nearest[i] = {static_cast<double>((b[0] - x) * (b[0] - x) + (b[1] - y) * (b[1] - y)), i};
      }
      const auto k = std::min<std::size_t>(kExtrapolationNeighbours, nearest.size());
      std::partial_sort(nearest.begin(), nearest.begin() + static_cast<std::ptrdiff_t>(k), nearest.end());
      double sw = 0, sx = 0, sy = 0;
      for (std::size_t i = 0; i < k; ++i) {
        const auto& b = boundary[nearest[i].second];
        const double w = 1.0 / nearest[i].first;
        sw += w;
        sx += w * fr.flow.dx(b[1], b[0]);
        sy += w * fr.flow.dy(b[1], b[0]);
      }
      fr.flow.dx(y, x) = static_cast<float>(sx / sw);
      fr.flow.dy(y, x) = static_cast<float>(sy / sw);
    }
  }
  return fr;
}

}  // namespace

FlowField ground_truth_flow(const BlendModel& model, const FaceParams& params_tgt, const FaceParams& params_src_shape,
                            ImageSize size) {
  return reshaped_flow_raster(model, params_tgt, params_src_shape, size).flow;
}

std::vector<std::uint8_t> reshaped_face_mask(const BlendModel& model, const FaceParams& params_tgt,
                                             const FaceParams& params_src_shape, ImageSize size) {
  const auto fr = reshaped_flow_raster(model, params_tgt, params_src_shape, size);
  std::vector<std::uint8_t> mask(fr.raster.triangle.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = fr.raster.triangle[i] >= 0 ? 1 : 0;
  return mask;
}

IdentitySpec sample_identity(std::uint64_t master_seed, int identity_id, const face3d::ModelDims& dims,
                             const SamplerConfig& cfg) {
  const std::uint64_t seed = derive_seed(master_seed, static_cast<std::uint64_t>(identity_id), ~0ULL);
  Rng rng(seed);
  IdentitySpec id;
  id.identity_id = identity_id;
  id.beta.resize(dims.shape);
  for (int i = 0; i < dims.shape; ++i) id.beta[i] = std::clamp(cfg.beta_sigma * rng.normal(), -cfg.beta_clip, cfg.beta_clip);
  id.texture_seed = mix64(seed ^ 0x7e87u);
  return id;
}

FaceParams sample_params(const BlendModel& model, const IdentitySpec& identity, std::uint64_t sample_seed, ImageSize size,
                         const SamplerConfig& cfg) {
  Rng rng(sample_seed);
  const auto tris = model.triangles();
  FaceParams p = FaceParams::neutral(model.dims);
  p.beta = identity.beta;
  for (int attempt = 0;; ++attempt) {
    p.theta << rng.uniform(-cfg.pitch, cfg.pitch), rng.uniform(-cfg.yaw, cfg.yaw), rng.uniform(-cfg.roll, cfg.roll),
        rng.uniform(0.0, cfg.jaw_max);
    for (int e = 0; e < model.dims.expression; ++e) p.psi[e] = rng.uniform(-cfg.psi_range, cfg.psi_range);
    p.camera.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
    p.camera.tx = rng.uniform(-cfg.translation, cfg.translation);
    p.camera.ty = rng.uniform(-cfg.translation, cfg.translation);
    const ProjectedMesh pm = project_mesh(model, p, size);
    const double cov = rasterize(pm.pixels, pm.vertices.col(2), tris, size).coverage();
    const auto lm = face3d::contour_landmarks(model, face3d::Mesh{pm.vertices}, p.camera, size).points;
    const bool inside = lm.col(0).minCoeff() >= 1.0 && lm.col(1).minCoeff() >= 1.0 &&
                        lm.col(0).maxCoeff() <= size.width - 2.0 && lm.col(1).maxCoeff() <= size.height - 2.0;
    if (cov >= 0.2 && cov <= 0.8 && inside) return p;
    if (attempt >= 64) throw RuntimeAbort("sample_params: no admissible camera after 64 attempts");
  }
}

nlohmann::json params_to_json(const FaceParams& p) {
  auto vec = [](const auto& v) {
    std::vector<double> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = v[i];
    return out;
  };
  return {{"beta", vec(p.beta)},
          {"theta", vec(p.theta)},
          {"psi", vec(p.psi)},
          {"camera", {{"scale", p.camera.scale}, {"tx", p.camera.tx}, {"ty", p.camera.ty}}}};
}

FaceParams params_from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  FaceParams p;
  p.beta = vec(j.at("beta"));
  p.psi = vec(j.at("psi"));
  const Eigen::VectorXd theta = vec(j.at("theta"));
  require(theta.size() == face3d::kPoseDims, "params: theta must have 4 entries");
  p.theta = theta;
  p.camera.scale = j.at("camera").at("scale").get<double>();
  p.camera.tx = j.at("camera").at("tx").get<double>();
  p.camera.ty = j.at("camera").at("ty").get<double>();
  return p;
}

nlohmann::json record_to_json(const SampleRecord& r) {
  nlohmann::json lm = nlohmann::json::array();
  for (int i = 0; i < face3d::kContourCount; ++i) lm.push_back({r.landmarks.points(i, 0), r.landmarks.points(i, 1)});
  std::vector<double> expr(r.expression_label.data(), r.expression_label.data() + r.expression_label.size());
  return {{"split", r.split},
          {"identity_id", r.identity_id},
          {"sample_index", r.sample_index},
          {"image", r.image_path},
          {"seg", r.seg_path},
          {"params", params_to_json(r.params)},
          {"landmarks", lm},
          {"expression_label", expr},
          {"texture_seed", r.texture_seed},
          {"scene_seed", r.scene_seed}};
}

SampleRecord record_from_json(const nlohmann::json& j) {
  SampleRecord r;
  r.split = j.at("split").get<std::string>();
  r.identity_id = j.at("identity_id").get<int>();
  r.sample_index = j.at("sample_index").get<int>();
  r.image_path = j.at("image").get<std::string>();
  r.seg_path = j.at("seg").get<std::string>();
  r.params = params_from_json(j.at("params"));
  const auto& lm = j.at("landmarks");
  require(lm.size() == face3d::kContourCount, "manifest: landmark count must be 17");
  for (int i = 0; i < face3d::kContourCount; ++i) {
    r.landmarks.points(i, 0) = lm[i][0].get<double>();
    r.landmarks.points(i, 1) = lm[i][1].get<double>();
  }
  const auto expr = j.at("expression_label").get<std::vector<double>>();
  r.expression_label = Eigen::Map<const Eigen::VectorXd>(expr.data(), static_cast<Eigen::Index>(expr.size()));
  r.texture_seed = j.at("texture_seed").get<std::uint64_t>();
  r.scene_seed = j.at("scene_seed").get<std::uint64_t>();
  return r;
}

std::vector<const SampleRecord*> DatasetManifest::split(const std::string& name) const {
  std::vector<const SampleRecord*> out;
  for (const auto& r : records)
    if (r.split == name) out.push_back(&r);
  return out;
}

ImageSize DatasetManifest::image_size() const {
  const int s = info.at("image_size").get<int>();
  return {s, s};
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot hash missing file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

bool dataset_exists(const fs::path& root) { return fs::exists(root / "manifest.jsonl") && fs::exists(root / "dataset.json"); }

DatasetManifest generate_dataset(const DatasetConfig& cfg, const fs::path& out_dir) {
  require(cfg.identities >= 1 && cfg.per_identity >= 1 && cfg.val_per_identity >= 0, "gen-data: counts must be positive");
  require(cfg.image_size >= 16 && cfg.image_size <= 1024, "gen-data: image size out of range");
  require(cfg.workers >= 1, "gen-data: workers must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "segs", ec);
  if (ec || !fs::is_directory(out_dir / "images")) throw RuntimeAbort("cannot create dataset directory: " + out_dir.string());

  const BlendModel model = face3d::build_model(cfg.model_seed, cfg.dims);
  face3d::save_model(model, out_dir / "face3d.fl3d");
  const ImageSize size{cfg.image_size, cfg.image_size};

  std::vector<IdentitySpec> ids;
  for (int i = 0; i < cfg.identities; ++i) ids.push_back(sample_identity(cfg.master_seed, i, cfg.dims, cfg.sampler));

  const int per_id = cfg.per_identity + cfg.val_per_identity;
  const int total = cfg.identities * per_id;
  std::vector<SampleRecord> records(static_cast<std::size_t>(total));
  std::atomic<int> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;

  auto work = [&] {
    for (int job = next++; job < total; job = next++) {
      try {
        const int id = job / per_id;
        const int idx = job % per_id;
        const std::uint64_t seed = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(idx));
        SampleRecord r;
        r.split = idx < cfg.per_identity ? "train" : "val";
        r.identity_id = id;
        r.sample_index = idx;
        r.params = sample_params(model, ids[static_cast<std::size_t>(id)], seed, size, cfg.sampler);
        r.texture_seed = ids[static_cast<std::size_t>(id)].texture_seed;
        r.scene_seed = mix64(seed ^ 0x5ce7eULL);
        r.expression_label = r.params.psi;
        r.landmarks = face3d::contour_landmarks(model, face3d::build_mesh(model, r.params), r.params.camera, size);
        std::ostringstream stem;
        stem << r.split << "_" << std::setw(3) << std::setfill('0') << id << "_" << std::setw(4) << idx;
        r.image_path = "images/" + stem.str() + ".png";
        r.seg_path = "segs/" + stem.str() + ".png";
        const Rendered rendered = render_face(model, r.params, r.texture_seed, size, SceneStyle::from_seed(r.scene_seed));
        write_png(rendered.image, out_dir / r.image_path);
        write_seg_png(rendered.seg, out_dir / r.seg_path);
        {
          nlohmann::json side = params_to_json(r.params);
          side["texture_seed"] = r.texture_seed;
          side["identity_id"] = id;
          std::ofstream(out_dir / ("images/" + stem.str() + ".params.json")) << side.dump(2) << "\n";
        }
        records[static_cast<std::size_t>(job)] = std::move(r);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = total;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < cfg.workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  {
    std::ofstream manifest(out_dir / "manifest.jsonl");
    if (!manifest) throw RuntimeAbort("cannot write manifest in " + out_dir.string());
    for (const auto& r : records) manifest << record_to_json(r).dump() << "\n";
  }
  nlohmann::json info = {{"config_hash", cfg.config_hash},
                         {"manifest_hash", file_hash(out_dir / "manifest.jsonl")},
                         {"model_file", "face3d.fl3d"},
                         {"model_hash", file_hash(out_dir / "face3d.fl3d")},
                         {"image_size", cfg.image_size},
                         {"identities", cfg.identities},
                         {"per_identity", cfg.per_identity},
                         {"val_per_identity", cfg.val_per_identity},
                         {"master_seed", cfg.master_seed},
                         {"model_seed", cfg.model_seed},
                         {"records", total}};
  std::ofstream(out_dir / "dataset.json") << info.dump(2) << "\n";
  return load_dataset(out_dir);
}

DatasetManifest load_dataset(const fs::path& root) {
  require(dataset_exists(root), "no dataset at " + root.string() + " (run gen-data first)");
  DatasetManifest m;
  m.root = root;
  std::ifstream info(root / "dataset.json");
  m.info = nlohmann::json::parse(info);
  std::ifstream in(root / "manifest.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    m.records.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  require(!m.records.empty(), "empty manifest in " + root.string());
  const std::string recorded = m.info.value("manifest_hash", "");
  require(recorded.empty() || recorded == file_hash(root / "manifest.jsonl"),
          "manifest hash mismatch in " + root.string() + " (dataset modified after generation)");
  return m;
}

}  // namespace flowface::synthdata
