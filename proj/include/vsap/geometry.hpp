#pragma once

// Camera model and rigid transforms.
//
// Conventions (used everywhere in this project):
//  * Pose is world <- camera: x_world = rotation * x_cam + translation, so
//    `translation` is the camera origin in world coordinates.
//  * Camera frame: +x right, +y down, +z forward (optical axis).
//  * Depth is the camera-frame z coordinate, not the ray length.
//  * Pixel coordinates are continuous; integer pixel (u, v) covers
//    [u, u+1) x [v, v+1) and its center is (u + 0.5, v + 0.5).

#include <Eigen/Core>
#include <cstdint>

namespace vsap {

using EnvId = std::uint32_t;

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Square pixels, principal point at the image center.
  static Intrinsics from_fov(int width, int height, double horizontal_fov_deg);
  /// Throws Errc::kInvalidArgument when an invariant is violated.
  void validate() const;
  bool contains(const Eigen::Vector2d& pixel) const {
    return pixel.x() >= 0.0 && pixel.y() >= 0.0 && pixel.x() < width && pixel.y() < height;
  }
  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  Pose inverse() const;
  /// (this * other)(x) = this(other(x)).
  Pose compose(const Pose& other) const;
  /// Nearest pose with an exactly orthonormal rotation (SVD projection).
  Pose reorthonormalized() const;
  void validate(double tol = 1e-9) const;

  friend bool operator==(const Pose&, const Pose&) = default;
};

struct WorldPoint {
  Eigen::Vector3d xyz = Eigen::Vector3d::Zero();
  EnvId environment = 0;
};

struct Projection {
  Eigen::Vector2d pixel;
  double depth;
};

WorldPoint unproject(const Eigen::Vector2d& pixel, double depth, const Intrinsics& intr,
                     const Pose& pose, EnvId environment = 0);

Projection project(const WorldPoint& point, const Intrinsics& intr, const Pose& pose);

/// Transform mapping camera-b coordinates to camera-a coordinates.
Pose relative_pose(const Pose& a, const Pose& b);

/// Geodesic angle between two rotations, in degrees.
double rotation_angle_deg(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

/// Unsigned angle between two directions, in degrees. Zero vectors give 90.
double direction_angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

/// Camera pose at `eye` looking at `target`, with world +z as up.
Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target);

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

}  // namespace vsap
