#pragma once

#include "flamegs/common.hpp"
#include "flamegs/image.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace flamegs {

/// Points with camera-frame depth at or below this are culled.
inline constexpr double kZNear = 0.01;
/// Added to both diagonal entries of every projected 2D covariance (px^2).
inline constexpr double kCovarianceFloor = 0.3;

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  void validate() const;
};

/// World-to-camera extrinsics: x_cam = rotation * x_world + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  /// Optical center in world coordinates.
  [[nodiscard]] Vec3 center() const { return -rotation.transpose() * translation; }
  void validate() const;
};

/// Optimizable extrinsics correction: R' = R exp([rotation]x), T' = T + translation.
struct PoseDelta {
  Vec3 rotation = Vec3::Zero();
  Vec3 translation = Vec3::Zero();
};

struct CameraView {
  std::string id;
  Intrinsics intrinsics;
  Pose pose;
  PoseDelta delta;
  Image image;  ///< may be empty for rig-only views

  /// Calibrated pose with the current delta applied.
  [[nodiscard]] Pose effective_pose() const;
};

using CameraRig = std::vector<CameraView>;

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
};

Mat3 skew(const Vec3& v);
/// Rodrigues exponential of an axis-angle vector.
Mat3 so3_exp(const Vec3& phi);
/// Right Jacobian of SO(3): exp(phi + d) ~= exp(phi) exp(Jr(phi) d).
Mat3 so3_right_jacobian(const Vec3& phi);

Pose apply_pose_delta(const Pose& pose, const PoseDelta& delta);

struct ProjectedPoint {
  Vec2 pixel;
  double depth = 0.0;
};

/// Pinhole projection through the delta-composed pose. Returns nullopt
/// (culled) when the point is not in front of the near plane.
std::optional<ProjectedPoint> project_point(const Vec3& world, const CameraView& view);

/// Jacobian of the pinhole map at a camera-frame point; nullopt if culled.
std::optional<Mat23> projection_jacobian(const Vec3& cam_point, const Intrinsics& intr);

/// Screen-space covariance J R' Sigma R'^T J^T plus the anti-aliasing floor.
std::optional<Mat2> project_covariance(const Mat3& sigma, const CameraView& view,
                                       const Vec3& cam_point);

/// Back-projected ray through a pixel position (pixel centers are integer
/// coordinates). Throws std::invalid_argument outside [-0.5, size-0.5].
Ray pixel_ray(const CameraView& view, const Vec2& pixel);

// Rig JSON: {"cameras":[{"id","width","height","fx","fy","cx","cy","R":[9],"t":[3]}]}
CameraRig read_rig_json(const std::filesystem::path& path);
void write_rig_json(const std::filesystem::path& path, const CameraRig& rig);
std::string rig_to_json_string(const CameraRig& rig);
CameraRig rig_from_json_string(const std::string& text);

// Pose deltas: [{"id","delta_rot":[3],"delta_t":[3]}]
std::string pose_deltas_to_json_string(const CameraRig& views);
void apply_pose_deltas_json(const std::string& text, CameraRig& views);

}  // namespace flamegs
