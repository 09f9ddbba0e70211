#include "flowface/face3d.hpp"

#include "flowface/binary_io.hpp"
#include "flowface/common.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

namespace flowface::face3d {
namespace {

constexpr double kPi = std::numbers::pi;

// Rest-template silhouette (normalized units, y points down towards the chin).
constexpr double kHalfWidth = 0.62;
constexpr double kUpperHalfHeight = 0.72;
constexpr double kLowerHalfHeight = 0.80;
constexpr double kDomeDepth = 0.42;

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

double gauss2(double x, double y, double cx, double cy, double rx, double ry) {
  const double dx = (x - cx) / rx;
  const double dy = (y - cy) / ry;
  return std::exp(-(dx * dx + dy * dy));
}

struct RestPoint {
  double x, y, z, rho, phi;
};

RestPoint rest_point(int ring, int segment, int rings) {
  const double rho = static_cast<double>(ring + 1) / rings;
  const double phi = 2.0 * kPi * segment / kRingSegments;
  const double s = std::sin(phi);
  const double low = std::max(0.0, s);
  const double half_height = 0.5 * (kUpperHalfHeight + kLowerHalfHeight) + 0.5 * (kLowerHalfHeight - kUpperHalfHeight) * s;
  const double taper = 1.0 - 0.18 * low * low * rho * rho;
  RestPoint p{};
  p.rho = rho;
  p.phi = phi;
  p.x = kHalfWidth * rho * std::cos(phi) * taper;
  p.y = half_height * rho * s;
  p.z = kDomeDepth * (1.0 - rho * rho);
  p.z += 0.16 * gauss2(p.x, p.y, 0.0, 0.06, 0.09, 0.16);
  p.z -= 0.04 * (gauss2(p.x, p.y, -0.24, -0.13, 0.12, 0.07) + gauss2(p.x, p.y, 0.24, -0.13, 0.12, 0.07));
  return p;
}

using Field = std::function<Eigen::Vector3d(const RestPoint&)>;

// Identity-style deformations: radial rescalings with a smooth angular profile
// (nearly orthogonal harmonics, so orthonormalization keeps them smooth and the
// contour never folds over the interior), plus two depth modes.
std::vector<Field> shape_fields() {
  auto radial = [](std::function<double(double)> h) {
    return [h](const RestPoint& p) {
      const double w = h(p.phi);
      return Eigen::Vector3d(p.x * w, p.y * w, 0.0);
    };
  };
  return {
      radial([](double) { return 1.0; }),
      radial([](double phi) { return std::cos(2.0 * phi); }),
      radial([](double phi) { return std::sin(phi); }),
      radial([](double phi) { return std::sin(3.0 * phi); }),
      radial([](double phi) { return std::cos(4.0 * phi); }),
      radial([](double phi) { return std::cos(phi); }),
      [](const RestPoint& p) { return Eigen::Vector3d(0.0, 0.0, p.z); },
      [](const RestPoint& p) { return Eigen::Vector3d(0.0, 0.0, p.x * p.rho); },
  };
}

std::vector<Field> expression_fields() {
  return {
      // mouth open: lower lip and chin drop
      [](const RestPoint& p) {
        const double w = smoothstep(0.35, 0.42, p.y) * std::exp(-p.x * p.x / (0.35 * 0.35));
        return Eigen::Vector3d(0.0, w, 0.0);
      },
      // smile: mouth corners out and up
      [](const RestPoint& p) {
        const double g = gauss2(p.x, p.y, -0.19, 0.33, 0.22, 0.18) - gauss2(p.x, p.y, 0.19, 0.33, 0.22, 0.18);
        return Eigen::Vector3d(-g, -std::abs(g) * 0.7, 0.0);
      },
      // brow raise
      [](const RestPoint& p) {
        const double g = gauss2(p.x, p.y, -0.24, -0.32, 0.26, 0.16) + gauss2(p.x, p.y, 0.24, -0.32, 0.26, 0.16);
        return Eigen::Vector3d(0.0, -g, 0.0);
      },
      // squint: eye region compresses vertically
      [](const RestPoint& p) {
        const double g = gauss2(p.x, p.y, -0.24, -0.13, 0.2, 0.14) + gauss2(p.x, p.y, 0.24, -0.13, 0.2, 0.14);
        return Eigen::Vector3d(0.0, -(p.y + 0.13) * g * 3.0, 0.0);
      },
  };
}

// Low-frequency seeded perturbation so that the seed changes the model.
Field random_field(Rng& rng, double amplitude) {
  std::array<double, 12> a{};
  for (auto& v : a) v = rng.uniform(-1.0, 1.0);
  return [a, amplitude](const RestPoint& p) {
    const double w = amplitude * p.rho * p.rho;
    return Eigen::Vector3d(w * (a[0] * std::sin(2.0 * p.x + a[1]) + a[2] * std::cos(2.5 * p.y + a[3])),
                           w * (a[4] * std::sin(2.2 * p.y + a[5]) + a[6] * std::cos(1.8 * p.x + a[7])),
                           0.5 * w * (a[8] * std::sin(1.5 * p.x + a[9]) + a[10] * std::cos(1.5 * p.y + a[11])));
  };
}

Eigen::MatrixXd sample_fields(const std::vector<RestPoint>& pts, const std::vector<Field>& fields) {
  Eigen::MatrixXd m(3 * static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(fields.size()));
  for (std::size_t f = 0; f < fields.size(); ++f)
    for (std::size_t v = 0; v < pts.size(); ++v) m.block<3, 1>(3 * v, f) = fields[f](pts[v]);
  return m;
}

void orthonormalize_columns(Eigen::MatrixXd& m) {
  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < j; ++i) m.col(j) -= m.col(i).dot(m.col(j)) * m.col(i);
      const double n = m.col(j).norm();
      if (n < 1e-9) throw ValidationError("degenerate basis while orthonormalizing");
      m.col(j) /= n;
    }
  }
}

void check_dims(const ModelDims& d) {
  require(d.vertices >= 64, "build_model: need at least 64 vertices");
  require(d.vertices % kRingSegments == 0, "build_model: vertex count must be a multiple of 32");
  require(d.shape > 0 && d.expression > 0 && d.joints > 0, "build_model: dims must be positive");
  require(d.joints == 2, "build_model: the kinematic chain has exactly 2 joints (neck, jaw)");
  require(d.shape + d.expression <= 3 * d.vertices, "build_model: too many basis vectors");
}

// Joint transforms (rotation, translation) for the neck -> jaw chain.
struct JointTransforms {
  std::array<Eigen::Matrix3d, 2> rotation;
  std::array<Eigen::Vector3d, 2> translation;
};

JointTransforms chain_transforms(const Eigen::MatrixXd& joints, const Eigen::Vector4d& theta) {
  const Eigen::Matrix3d global = axis_angle_to_matrix(theta.head<3>());
  const Eigen::Matrix3d jaw = jaw_rotation(theta[3]);
  const Eigen::Vector3d j0 = joints.row(0).transpose();
  const Eigen::Vector3d j1 = joints.row(1).transpose();
  JointTransforms t;
  t.rotation[0] = global;
  t.translation[0] = j0 - global * j0;
  t.rotation[1] = global * jaw;
  t.translation[1] = global * (j1 - jaw * j1) + t.translation[0];
  return t;
}

}  // namespace

FaceParams FaceParams::neutral(const ModelDims& dims) {
  FaceParams p;
  p.beta = Eigen::VectorXd::Zero(dims.shape);
  p.psi = Eigen::VectorXd::Zero(dims.expression);
  return p;
}

void validate(const FaceParams& p, const ModelDims& dims) {
  require(p.beta.size() == dims.shape, "FaceParams: beta has wrong dimension");
  require(p.psi.size() == dims.expression, "FaceParams: psi has wrong dimension");
  auto bounded = [](const auto& v) { return v.allFinite() && v.cwiseAbs().maxCoeff() <= kMaxCoefficient; };
  require(bounded(p.beta) && bounded(p.psi) && bounded(p.theta), "FaceParams: coefficient magnitude above 3");
  require(std::isfinite(p.camera.scale) && p.camera.scale > 0.0, "FaceParams: camera scale must be positive");
  require(std::isfinite(p.camera.tx) && std::isfinite(p.camera.ty), "FaceParams: camera translation not finite");
}

int canonical_region(double u, double v) {
  auto inside = [&](double cx, double cy, double rx, double ry) {
    const double dx = (u - cx) / rx;
    const double dy = (v - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  };
  if (v < -0.52) return kHair;
  if (inside(-0.24, -0.29, 0.14, 0.035)) return kLeftBrow;
  if (inside(0.24, -0.29, 0.14, 0.035)) return kRightBrow;
  if (inside(-0.24, -0.13, 0.11, 0.05)) return kLeftEye;
  if (inside(0.24, -0.13, 0.11, 0.05)) return kRightEye;
  if (inside(0.0, 0.36, 0.2, 0.08)) {
    if (v < 0.35) return kUpperLip;
    if (v > 0.37) return kLowerLip;
    return kMouth;
  }
  if (inside(0.0, 0.07, 0.075, 0.13)) return kNose;
  return kSkin;
}

std::vector<std::array<int, 3>> BlendModel::triangles() const {
  const int R = rings();
  std::vector<std::array<int, 3>> tris;
  tris.reserve(static_cast<std::size_t>(2 * (R - 1) * kRingSegments + kRingSegments - 2));
  auto oriented = [&](int a, int b, int c) -> std::array<int, 3> {
    const Eigen::Vector3d pa = template_vertices.row(a), pb = template_vertices.row(b), pc = template_vertices.row(c);
    const double nz = (pb - pa).cross(pc - pa).z();
    return nz >= 0.0 ? std::array<int, 3>{a, b, c} : std::array<int, 3>{a, c, b};
  };
  // innermost ring closed with a fan
  for (int k = 1; k + 1 < kRingSegments; ++k) tris.push_back(oriented(vertex_index(0, 0), vertex_index(0, k), vertex_index(0, k + 1)));
  for (int r = 0; r + 1 < R; ++r) {
    for (int k = 0; k < kRingSegments; ++k) {
      const int k1 = (k + 1) % kRingSegments;
      const int a = vertex_index(r, k), b = vertex_index(r, k1), c = vertex_index(r + 1, k), d = vertex_index(r + 1, k1);
      tris.push_back(oriented(a, c, d));
      tris.push_back(oriented(a, d, b));
    }
  }
  return tris;
}

BlendModel build_model(std::uint64_t seed, const ModelDims& dims) {
  check_dims(dims);
  Rng rng(mix64(seed ^ 0x464c3344ULL));
  BlendModel m;
  m.dims = dims;
  const int V = dims.vertices;
  const int R = V / kRingSegments;

  std::vector<RestPoint> pts;
  pts.reserve(static_cast<std::size_t>(V));
  for (int r = 0; r < R; ++r)
    for (int k = 0; k < kRingSegments; ++k) pts.push_back(rest_point(r, k, R));

  m.template_vertices.resize(V, 3);
  for (int v = 0; v < V; ++v) m.template_vertices.row(v) << pts[v].x, pts[v].y, pts[v].z;

  auto perturbed = [&](std::vector<Field> fields, int count, double amplitude) {
    std::vector<Field> out;
    for (int i = 0; i < count; ++i) {
      Field base = i < static_cast<int>(fields.size()) ? fields[i] : random_field(rng, 1.0);
      Field noise = random_field(rng, amplitude);
      out.push_back([base, noise](const RestPoint& p) -> Eigen::Vector3d { return base(p) + noise(p); });
    }
    return out;
  };
  m.shape_basis = sample_fields(pts, perturbed(shape_fields(), dims.shape, 0.05));
  orthonormalize_columns(m.shape_basis);
  m.expr_basis = sample_fields(pts, perturbed(expression_fields(), dims.expression, 0.01));
  orthonormalize_columns(m.expr_basis);

  // Pose correctives: small cheek/jaw-hinge bulges driven by the jaw features.
  std::vector<Field> pose;
  for (int i = 0; i < kPoseFeatures; ++i) {
    const double side = rng.uniform(0.2, 0.4);
    const double amp = rng.uniform(0.02, 0.05);
    pose.push_back([side, amp](const RestPoint& p) {
      const double g = gauss2(p.x, p.y, -side, 0.3, 0.15, 0.15) + gauss2(p.x, p.y, side, 0.3, 0.15, 0.15);
      return Eigen::Vector3d(amp * g * (p.x > 0 ? 1.0 : -1.0), amp * g, -amp * g);
    });
  }
  m.pose_basis = sample_fields(pts, pose);

  // Joints as affine combinations of rest vertices: neck at the centroid, jaw
  // hinge behind the face at ear level.
  m.joint_regressor = Eigen::MatrixXd::Zero(2, V);
  m.joint_regressor.row(0).setConstant(1.0 / V);
  int nose_tip = 0;
  for (int v = 1; v < V; ++v)
    if (m.template_vertices(v, 2) > m.template_vertices(nose_tip, 2)) nose_tip = v;
  m.joint_regressor(1, m.vertex_index(R - 1, 0)) += 1.0;
  m.joint_regressor(1, m.vertex_index(R - 1, kRingSegments / 2)) += 1.0;
  m.joint_regressor(1, nose_tip) -= 1.0;

  m.skin_weights.resize(V, 2);
  for (int v = 0; v < V; ++v) {
    const double jaw = smoothstep(0.28, 0.45, pts[v].y);
    m.skin_weights(v, 1) = jaw;
    m.skin_weights(v, 0) = 1.0 - jaw;
  }

  // 17 evenly spaced boundary vertices from one ear over the chin to the other.
  for (int i = 0; i < kContourCount; ++i) m.contour_indices.push_back(m.vertex_index(R - 1, i * (kRingSegments / 2) / (kContourCount - 1)));

  m.region_labels.resize(static_cast<std::size_t>(V));
  for (int v = 0; v < V; ++v) m.region_labels[v] = canonical_region(pts[v].x, pts[v].y);
  return m;
}

Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& aa) {
  const double angle = aa.norm();
  if (angle == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

double rotation_geodesic_deg(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / kPi;
}

// Jaw opens by rotating about the x axis; positive opening drops the chin.
Eigen::Matrix3d jaw_rotation(double opening) {
  if (opening == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(-opening, Eigen::Vector3d::UnitX()).toRotationMatrix();
}

std::array<double, kPoseFeatures> pose_features(double opening) {
  const Eigen::Matrix3d r = jaw_rotation(opening);
  return {r(1, 1) - 1.0, r(1, 2), r(2, 1), r(2, 2) - 1.0};
}

Eigen::MatrixXd rest_pose(const BlendModel& model, const Eigen::VectorXd& beta, const Eigen::Vector4d& theta,
                          const Eigen::VectorXd& psi) {
  require(beta.size() == model.dims.shape, "build_mesh: beta dimension mismatch");
  require(psi.size() == model.dims.expression, "build_mesh: psi dimension mismatch");
  const int V = model.dims.vertices;
  Eigen::VectorXd offsets = model.shape_basis * beta + model.expr_basis * psi;
  const auto f = pose_features(theta[3]);
  offsets += model.pose_basis * Eigen::Map<const Eigen::Vector4d>(f.data());
  Eigen::MatrixXd rest = model.template_vertices;
  for (int v = 0; v < V; ++v) rest.row(v) += offsets.segment<3>(3 * v).transpose();
  return rest;
}

Mesh build_mesh(const BlendModel& model, const Eigen::VectorXd& beta, const Eigen::Vector4d& theta,
                const Eigen::VectorXd& psi) {
  require(theta.allFinite() && beta.allFinite() && psi.allFinite(), "build_mesh: non-finite coefficients");
  Mesh mesh;
  mesh.vertices = rest_pose(model, beta, theta, psi);
  if (theta.isZero(0.0)) return mesh;  // every joint transform is the identity

  // J(beta): joints follow the identity shape only.
  Eigen::MatrixXd shaped = model.template_vertices;
  const Eigen::VectorXd shape_offsets = model.shape_basis * beta;
  for (int v = 0; v < model.dims.vertices; ++v) shaped.row(v) += shape_offsets.segment<3>(3 * v).transpose();
  const Eigen::MatrixXd joints = model.joint_regressor * shaped;
  const JointTransforms t = chain_transforms(joints, theta);

  for (int v = 0; v < model.dims.vertices; ++v) {
    const double w0 = model.skin_weights(v, 0), w1 = model.skin_weights(v, 1);
    const Eigen::Matrix3d r = w0 * t.rotation[0] + w1 * t.rotation[1];
    const Eigen::Vector3d tr = w0 * t.translation[0] + w1 * t.translation[1];
    const Eigen::Vector3d p = mesh.vertices.row(v).transpose();
    mesh.vertices.row(v) = (r * p + tr).transpose();
  }
  return mesh;
}

Eigen::MatrixX2d project_normalized(const Eigen::MatrixXd& points3d, const Camera& camera) {
  require(points3d.cols() == 3, "project: expected K x 3 points");
  require(camera.scale > 0.0, "project: camera scale must be positive");
  Eigen::MatrixX2d out(points3d.rows(), 2);
  out.col(0) = camera.scale * points3d.col(0).array() + camera.tx;
  out.col(1) = camera.scale * points3d.col(1).array() + camera.ty;
  return out;
}

Eigen::MatrixX2d normalized_to_pixels(const Eigen::MatrixX2d& points, ImageSize size) {
  Eigen::MatrixX2d out(points.rows(), 2);
  out.col(0) = (points.col(0).array() + 1.0) * (0.5 * (size.width - 1));
  out.col(1) = (points.col(1).array() + 1.0) * (0.5 * (size.height - 1));
  return out;
}

Eigen::MatrixX2d pixels_to_normalized(const Eigen::MatrixX2d& points, ImageSize size) {
  Eigen::MatrixX2d out(points.rows(), 2);
  out.col(0) = points.col(0).array() / (0.5 * (size.width - 1)) - 1.0;
  out.col(1) = points.col(1).array() / (0.5 * (size.height - 1)) - 1.0;
  return out;
}

Eigen::MatrixX2d project(const Eigen::MatrixXd& points3d, const Camera& camera, ImageSize size) {
  return normalized_to_pixels(project_normalized(points3d, camera), size);
}

LandmarkSet contour_landmarks(const BlendModel& model, const Mesh& mesh, const Camera& camera, ImageSize size) {
  require(mesh.vertices.rows() == model.dims.vertices, "contour_landmarks: mesh does not belong to this model");
  Eigen::MatrixXd pts(kContourCount, 3);
  for (int i = 0; i < kContourCount; ++i) pts.row(i) = mesh.vertices.row(model.contour_indices[i]);
  LandmarkSet out;
  out.points = project(pts, camera, size);
  return out;
}

LandmarkPair cross_identity_landmarks(const BlendModel& model, const FaceParams& source, const FaceParams& target,
                                      ImageSize size) {
  validate(source, model.dims);
  validate(target, model.dims);
  FaceParams s2t = target;
  s2t.beta = source.beta;
  LandmarkPair out;
  out.target = contour_landmarks(model, build_mesh(model, target), target.camera, size);
  out.source_to_target = contour_landmarks(model, build_mesh(model, s2t), target.camera, size);
  return out;
}

namespace {

void write_matrix(io::BinaryWriter& w, const Eigen::MatrixXd& m) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  w.array(std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())));
}

Eigen::MatrixXd read_matrix(io::BinaryReader& r, Eigen::Index rows, Eigen::Index cols) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  r.array(std::span<double>(rm.data(), static_cast<std::size_t>(rm.size())));
  return rm;
}

constexpr std::uint32_t kModelVersion = 1;

}  // namespace

void save_model(const BlendModel& m, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic("FL3D");
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(m.dims.vertices));
  w.u32(static_cast<std::uint32_t>(m.dims.shape));
  w.u32(static_cast<std::uint32_t>(m.dims.expression));
  w.u32(static_cast<std::uint32_t>(m.dims.joints));
  write_matrix(w, m.template_vertices);
  write_matrix(w, m.shape_basis);
  write_matrix(w, m.expr_basis);
  write_matrix(w, m.pose_basis);
  write_matrix(w, m.joint_regressor);
  write_matrix(w, m.skin_weights);
  for (int i : m.contour_indices) w.f64(static_cast<double>(i));
  for (int c : m.region_labels) w.f64(static_cast<double>(c));
  w.finish();
}

BlendModel load_model(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic("FL3D");
  const auto version = r.u32();
  require(version == kModelVersion, "FL3D: unsupported version " + std::to_string(version));
  BlendModel m;
  m.dims.vertices = static_cast<int>(r.u32());
  m.dims.shape = static_cast<int>(r.u32());
  m.dims.expression = static_cast<int>(r.u32());
  m.dims.joints = static_cast<int>(r.u32());
  check_dims(m.dims);
  const int V = m.dims.vertices;
  m.template_vertices = read_matrix(r, V, 3);
  m.shape_basis = read_matrix(r, 3 * V, m.dims.shape);
  m.expr_basis = read_matrix(r, 3 * V, m.dims.expression);
  m.pose_basis = read_matrix(r, 3 * V, kPoseFeatures);
  m.joint_regressor = read_matrix(r, m.dims.joints, V);
  m.skin_weights = read_matrix(r, V, m.dims.joints);
  for (int i = 0; i < kContourCount; ++i) m.contour_indices.push_back(static_cast<int>(r.f64()));
  for (int v = 0; v < V; ++v) m.region_labels.push_back(static_cast<int>(r.f64()));
  return m;
}

}  // namespace flowface::face3d
