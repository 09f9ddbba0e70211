#include "flowface/common.hpp"
#include "flowface/face3d.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

using namespace flowface;
using namespace flowface::face3d;

namespace {

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

// Term-by-term expansion with homogeneous joint transforms; shares nothing with build_mesh.
Eigen::MatrixXd lbs_oracle(const BlendModel& m, const FaceParams& p) {
  const int V = m.dims.vertices;
  const double c = std::cos(p.theta[3]), s = std::sin(p.theta[3]);
  Eigen::Matrix3d jaw;
  jaw << 1, 0, 0, 0, c, s, 0, -s, c;
  const double feats[4] = {jaw(1, 1) - 1.0, jaw(1, 2), jaw(2, 1), jaw(2, 2) - 1.0};

  std::vector<Eigen::Vector3d> rest(V), shaped(V);
  for (int v = 0; v < V; ++v) {
    for (int k = 0; k < 3; ++k) {
      double shape = m.template_vertices(v, k);
      for (int b = 0; b < m.dims.shape; ++b) shape += m.shape_basis(3 * v + k, b) * p.beta[b];
      double full = shape;
      for (int e = 0; e < m.dims.expression; ++e) full += m.expr_basis(3 * v + k, e) * p.psi[e];
      for (int f = 0; f < 4; ++f) full += m.pose_basis(3 * v + k, f) * feats[f];
      shaped[v][k] = shape;
      rest[v][k] = full;
    }
  }
  Eigen::Vector3d j[2] = {Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()};
  for (int a = 0; a < 2; ++a)
    for (int v = 0; v < V; ++v) j[a] += m.joint_regressor(a, v) * shaped[v];

  const Eigen::Matrix4d g0 = rigid(Eigen::Matrix3d::Identity(), j[0]) * rigid(rodrigues(p.theta.head<3>()), Eigen::Vector3d::Zero()) *
                             rigid(Eigen::Matrix3d::Identity(), -j[0]);
  const Eigen::Matrix4d g1 = g0 * rigid(Eigen::Matrix3d::Identity(), j[1]) * rigid(jaw, Eigen::Vector3d::Zero()) *
                             rigid(Eigen::Matrix3d::Identity(), -j[1]);
  Eigen::MatrixXd out(V, 3);
  for (int v = 0; v < V; ++v) {
    const Eigen::Vector4d h(rest[v].x(), rest[v].y(), rest[v].z(), 1.0);
    const Eigen::Vector4d q = m.skin_weights(v, 0) * (g0 * h) + m.skin_weights(v, 1) * (g1 * h);
    out.row(v) = q.head<3>().transpose();
  }
  return out;
}

FaceParams random_params(const BlendModel& m, Rng& rng) {
  FaceParams p = FaceParams::neutral(m.dims);
  for (int i = 0; i < m.dims.shape; ++i) p.beta[i] = rng.uniform(-2.5, 2.5);
  for (int i = 0; i < m.dims.expression; ++i) p.psi[i] = rng.uniform(-2.5, 2.5);
  p.theta << rng.uniform(-0.5, 0.5), rng.uniform(-0.7, 0.7), rng.uniform(-0.4, 0.4), rng.uniform(0.0, 0.4);
  p.camera = {rng.uniform(0.5, 1.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
  return p;
}

}  // namespace

TEST(BuildModel, DeterministicForSeed) {
  const auto a = build_model(0), b = build_model(0);
  EXPECT_TRUE(a.template_vertices == b.template_vertices);
  EXPECT_TRUE(a.shape_basis == b.shape_basis);
  EXPECT_TRUE(a.skin_weights == b.skin_weights);
  EXPECT_EQ(a.contour_indices, b.contour_indices);
  EXPECT_FALSE(build_model(1).shape_basis == a.shape_basis);
}

TEST(BuildModel, SkinWeightsRowStochastic) {
  const auto m = build_model(3);
  for (int v = 0; v < m.dims.vertices; ++v) {
    EXPECT_NEAR(m.skin_weights.row(v).sum(), 1.0, 1e-6);
    EXPECT_GE(m.skin_weights.row(v).minCoeff(), 0.0);
  }
}

TEST(BuildModel, BasesOrthonormal) {
  const auto m = build_model(3);
  for (const Eigen::MatrixXd* basis : {&m.shape_basis, &m.expr_basis}) {
    const Eigen::MatrixXd gram = basis->transpose() * *basis;
    for (int i = 0; i < gram.rows(); ++i)
      for (int j = 0; j < gram.cols(); ++j) EXPECT_NEAR(gram(i, j), i == j ? 1.0 : 0.0, 1e-5);
  }
}

TEST(BuildModel, ContourOnBoundaryRing) {
  const auto m = build_model(3);
  ASSERT_EQ(m.contour_indices.size(), static_cast<std::size_t>(kContourCount));
  EXPECT_EQ(std::set<int>(m.contour_indices.begin(), m.contour_indices.end()).size(), m.contour_indices.size());
  for (int i : m.contour_indices) EXPECT_EQ(i / kRingSegments, m.rings() - 1);
}

TEST(BuildModel, RejectsBadDims) {
  ModelDims d;
  d.shape = 0;
  EXPECT_THROW(build_model(0, d), ValidationError);
  d = {};
  d.vertices = 32;
  EXPECT_THROW(build_model(0, d), ValidationError);
}

TEST(BuildMesh, NeutralIsTemplate) {
  const auto m = build_model(5);
  const auto mesh = build_mesh(m, FaceParams::neutral(m.dims));
  EXPECT_TRUE(mesh.vertices == m.template_vertices);
}

TEST(BuildMesh, GlobalRotationIsRigidAboutNeck) {
  const auto m = build_model(5);
  FaceParams p = FaceParams::neutral(m.dims);
  p.theta << 0.2, -0.3, 0.1, 0.0;
  const auto mesh = build_mesh(m, p);
  const Eigen::Vector3d j0 = (m.joint_regressor.row(0) * m.template_vertices).transpose();
  const Eigen::Matrix3d r = rodrigues(p.theta.head<3>());
  for (int v = 0; v < m.dims.vertices; ++v) {
    const Eigen::Vector3d expect = r * (m.template_vertices.row(v).transpose() - j0) + j0;
    EXPECT_LT((mesh.vertices.row(v).transpose() - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(BuildMesh, MatchesPerVertexOracle) {
  const auto m = build_model(9);
  Rng rng(77);
  double worst = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const auto p = random_params(m, rng);
    worst = std::max(worst, (build_mesh(m, p).vertices - lbs_oracle(m, p)).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(BuildMesh, DimensionMismatchThrows) {
  const auto m = build_model(9);
  FaceParams p = FaceParams::neutral(m.dims);
  p.beta = Eigen::VectorXd::Zero(3);
  EXPECT_THROW(build_mesh(m, p), ValidationError);
}

TEST(Project, IdentityCamera) {
  Eigen::MatrixXd pts(1, 3);
  pts << 0.3, -0.2, 0.7;
  const auto out = project_normalized(pts, Camera{});
  EXPECT_EQ(out(0, 0), 0.3);
  EXPECT_EQ(out(0, 1), -0.2);
}

TEST(Project, ScaleTranslateDropsDepth) {
  Eigen::MatrixXd pts(2, 3);
  pts << 1, 1, -5, 1, 1, 9;
  const auto out = project_normalized(pts, Camera{2.0, 0.1, 0.05});
  for (int i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(out(i, 0), 2.1);
    EXPECT_DOUBLE_EQ(out(i, 1), 2.05);
  }
}

TEST(Project, BatchEqualsScalarLoop) {
  const auto m = build_model(2);
  Rng rng(4);
  const auto p = random_params(m, rng);
  const auto mesh = build_mesh(m, p);
  const ImageSize size{64, 48};
  const auto batch = project(mesh.vertices, p.camera, size);
  for (int v = 0; v < m.dims.vertices; ++v) {
    const double nx = p.camera.scale * mesh.vertices(v, 0) + p.camera.tx;
    const double ny = p.camera.scale * mesh.vertices(v, 1) + p.camera.ty;
    EXPECT_EQ(batch(v, 0), (nx + 1.0) * (0.5 * (size.width - 1)));
    EXPECT_EQ(batch(v, 1), (ny + 1.0) * (0.5 * (size.height - 1)));
  }
}

TEST(Project, PixelRoundTrip) {
  Eigen::MatrixX2d pts(3, 2);
  pts << -1, -1, 1, 1, 0.25, -0.5;
  const ImageSize size{64, 64};
  const auto px = normalized_to_pixels(pts, size);
  EXPECT_EQ(px(0, 0), 0.0);
  EXPECT_EQ(px(1, 1), 63.0);
  EXPECT_LT((pixels_to_normalized(px, size) - pts).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ContourLandmarks, SeventeenPointsAndScaleAboutOrigin) {
  const auto m = build_model(2);
  Rng rng(8);
  const auto p = random_params(m, rng);
  const auto mesh = build_mesh(m, p);
  Camera c{1.0, 0.0, 0.0}, c2{2.0, 0.0, 0.0};
  const ImageSize size{64, 64};
  const auto a = contour_landmarks(m, mesh, c, size), b = contour_landmarks(m, mesh, c2, size);
  EXPECT_EQ(a.points.rows(), kContourCount);
  const double cx = 0.5 * (size.width - 1), cy = 0.5 * (size.height - 1);
  for (int i = 0; i < kContourCount; ++i) {
    EXPECT_NEAR(b.points(i, 0) - cx, 2.0 * (a.points(i, 0) - cx), 1e-12);
    EXPECT_NEAR(b.points(i, 1) - cy, 2.0 * (a.points(i, 1) - cy), 1e-12);
  }
}

TEST(ContourLandmarks, TemplateMatchesGolden) {
  const auto m = build_model(7);
  const auto lm = contour_landmarks(m, Mesh{m.template_vertices}, Camera{}, ImageSize{64, 64});
  const auto path = test_util::golden_dir() / "template_contour.json";
  if (std::getenv("FLOWFACE_UPDATE_GOLDEN")) {
    nlohmann::json j = nlohmann::json::array();
    for (int i = 0; i < kContourCount; ++i) j.push_back({lm.points(i, 0), lm.points(i, 1)});
    std::ofstream(path) << j.dump(1) << "\n";
  }
  std::ifstream in(path);
  ASSERT_TRUE(in) << path;
  const auto j = nlohmann::json::parse(in);
  ASSERT_EQ(j.size(), static_cast<std::size_t>(kContourCount));
  for (int i = 0; i < kContourCount; ++i) {
    EXPECT_NEAR(lm.points(i, 0), j[i][0].get<double>(), 1e-9);
    EXPECT_NEAR(lm.points(i, 1), j[i][1].get<double>(), 1e-9);
  }
}

TEST(CrossIdentity, SameParamsIdentical) {
  const auto m = build_model(2);
  Rng rng(10);
  const auto p = random_params(m, rng);
  const ImageSize size{64, 64};
  const auto lm = cross_identity_landmarks(m, p, p, size);
  EXPECT_TRUE(lm.source_to_target.points == lm.target.points);
  const auto direct = contour_landmarks(m, build_mesh(m, p), p.camera, size);
  EXPECT_TRUE(lm.target.points == direct.points);
}

TEST(CrossIdentity, SameShapeDifferentPose) {
  const auto m = build_model(2);
  Rng rng(11);
  auto s = random_params(m, rng);
  auto t = random_params(m, rng);
  s.beta = t.beta;
  const auto lm = cross_identity_landmarks(m, s, t, ImageSize{64, 64});
  EXPECT_TRUE(lm.source_to_target.points == lm.target.points);
}

TEST(CrossIdentity, MatchesManualComposition) {
  const auto m = build_model(2);
  Rng rng(12);
  const auto s = random_params(m, rng), t = random_params(m, rng);
  const ImageSize size{64, 64};
  const auto lm = cross_identity_landmarks(m, s, t, size);
  FaceParams mixed = t;
  mixed.beta = s.beta;
  const auto manual = contour_landmarks(m, build_mesh(m, mixed), t.camera, size);
  EXPECT_TRUE(lm.source_to_target.points == manual.points);
  EXPECT_GT((lm.source_to_target.points - lm.target.points).norm(), 0.0);
}

TEST(Rotation, GeodesicDegrees) {
  const auto a = axis_angle_to_matrix(Eigen::Vector3d(0, 0, 0));
  const auto b = axis_angle_to_matrix(Eigen::Vector3d(0, 10.0 * M_PI / 180.0, 0));
  EXPECT_NEAR(rotation_geodesic_deg(a, b), 10.0, 1e-9);
  EXPECT_NEAR(rotation_geodesic_deg(b, b), 0.0, 1e-6);
}

TEST(ModelFile, RoundTrip) {
  const auto m = build_model(4);
  const auto path = test_util::temp_dir("face3d") / "m.fl3d";
  save_model(m, path);
  const auto r = load_model(path);
  EXPECT_TRUE(r.template_vertices == m.template_vertices);
  EXPECT_TRUE(r.shape_basis == m.shape_basis);
  EXPECT_TRUE(r.skin_weights == m.skin_weights);
  EXPECT_EQ(r.contour_indices, m.contour_indices);
  EXPECT_EQ(r.region_labels, m.region_labels);
}

TEST(Validate, RejectsLargeCoefficients) {
  const auto m = build_model(4);
  auto p = FaceParams::neutral(m.dims);
  p.beta[0] = 3.5;
  EXPECT_THROW(validate(p, m.dims), ValidationError);
  p.beta[0] = 0;
  p.camera.scale = 0;
  EXPECT_THROW(validate(p, m.dims), ValidationError);
}
