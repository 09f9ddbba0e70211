#pragma once

// Procedural FLAME-style parametric face: blendshapes + two-joint linear blend
// skinning, orthographic camera, 17-point jaw contour.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace flowface::face3d {

inline constexpr int kContourCount = 17;
inline constexpr int kRingSegments = 32;
inline constexpr int kPoseFeatures = 4;
inline constexpr int kPoseDims = 4;  // 3 axis-angle + jaw opening
inline constexpr double kMaxCoefficient = 3.0;

/// Face-parsing class ids. Only a subset is populated by the renderer; the
/// remaining ids exist so one-hot tensors keep 19 channels.
enum SegClass : int {
  kBackground = 0,
  kSkin = 1,
  kNose = 2,
  kEyeGlasses = 3,
  kLeftEye = 4,
  kRightEye = 5,
  kLeftBrow = 6,
  kRightBrow = 7,
  kLeftEar = 8,
  kRightEar = 9,
  kMouth = 10,
  kUpperLip = 11,
  kLowerLip = 12,
  kHair = 13,
  kHat = 14,
  kEarRing = 15,
  kNecklace = 16,
  kNeck = 17,
  kCloth = 18,
};
inline constexpr int kNumClasses = 19;

struct ModelDims {
  int vertices = 512;
  int shape = 8;
  int expression = 4;
  int joints = 2;

  bool operator==(const ModelDims&) const = default;
};

struct Camera {
  double scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;
};

struct ImageSize {
  int height = 64;
  int width = 64;

  bool operator==(const ImageSize&) const = default;
};

struct FaceParams {
  Eigen::VectorXd beta;   // shape, dim B
  Eigen::Vector4d theta = Eigen::Vector4d::Zero();  // axis-angle (3) + jaw
  Eigen::VectorXd psi;    // expression, dim E
  Camera camera;

  static FaceParams neutral(const ModelDims& dims);
};

/// Throws ValidationError when dims disagree, |coefficient| > 3 or scale <= 0.
void validate(const FaceParams& params, const ModelDims& dims);

struct BlendModel {
  ModelDims dims;
  Eigen::MatrixXd template_vertices;  // V x 3
  Eigen::MatrixXd shape_basis;        // 3V x B, row 3v+c
  Eigen::MatrixXd expr_basis;         // 3V x E
  Eigen::MatrixXd pose_basis;         // 3V x 4
  Eigen::MatrixXd joint_regressor;    // J x V (affine rows)
  Eigen::MatrixXd skin_weights;       // V x J, row-stochastic
  std::vector<int> contour_indices;   // 17, on the boundary ring
  std::vector<int> region_labels;     // V

  int rings() const { return dims.vertices / kRingSegments; }
  int vertex_index(int ring, int segment) const { return ring * kRingSegments + segment; }
  /// Triangles of the ring-grid topology, wound so template normals face +z.
  std::vector<std::array<int, 3>> triangles() const;
};

struct Mesh {
  Eigen::MatrixXd vertices;  // V x 3
};

struct LandmarkSet {
  Eigen::Matrix<double, kContourCount, 2> points;  // pixel (x, y)
};

BlendModel build_model(std::uint64_t seed, const ModelDims& dims = {});

Mesh build_mesh(const BlendModel& model, const Eigen::VectorXd& beta, const Eigen::Vector4d& theta,
                const Eigen::VectorXd& psi);
inline Mesh build_mesh(const BlendModel& model, const FaceParams& p) {
  return build_mesh(model, p.beta, p.theta, p.psi);
}

/// Shaped rest pose before skinning: template + shape + expression + pose correctives.
Eigen::MatrixXd rest_pose(const BlendModel& model, const Eigen::VectorXd& beta, const Eigen::Vector4d& theta,
                          const Eigen::VectorXd& psi);

Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& axis_angle);
Eigen::Matrix3d jaw_rotation(double opening);
/// Angle of a^T b in degrees.
double rotation_geodesic_deg(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);
std::array<double, kPoseFeatures> pose_features(double opening);

/// s * drop_depth(p) + t, in normalized units.
Eigen::MatrixX2d project_normalized(const Eigen::MatrixXd& points3d, const Camera& camera);
/// [-1, 1] -> [0, W-1] x [0, H-1].
Eigen::MatrixX2d normalized_to_pixels(const Eigen::MatrixX2d& points, ImageSize size);
Eigen::MatrixX2d pixels_to_normalized(const Eigen::MatrixX2d& points, ImageSize size);
Eigen::MatrixX2d project(const Eigen::MatrixXd& points3d, const Camera& camera, ImageSize size);

LandmarkSet contour_landmarks(const BlendModel& model, const Mesh& mesh, const Camera& camera, ImageSize size);

struct LandmarkPair {
  LandmarkSet target;            // from (beta_t, theta_t, psi_t, c_t)
  LandmarkSet source_to_target;  // from (beta_s, theta_t, psi_t, c_t)
};
LandmarkPair cross_identity_landmarks(const BlendModel& model, const FaceParams& source, const FaceParams& target,
                                      ImageSize size);

/// Semantic class of a canonical (template-space) face location.
int canonical_region(double u, double v);

void save_model(const BlendModel& model, const std::filesystem::path& path);
BlendModel load_model(const std::filesystem::path& path);

}  // namespace flowface::face3d
