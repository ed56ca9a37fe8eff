#include "vsap/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "vsap/error.hpp"

namespace vsap {

Intrinsics Intrinsics::from_fov(int width, int height, double horizontal_fov_deg) {
  const double half = horizontal_fov_deg * std::numbers::pi / 360.0;
  const double f = 0.5 * width / std::tan(half);
  return {f, f, 0.5 * width, 0.5 * height, width, height};
}

void Intrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw Error(Errc::kInvalidArgument, "focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error(Errc::kInvalidArgument, "image size must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw Error(Errc::kInvalidArgument, "principal point outside the image");
  }
}

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose Pose::compose(const Pose& other) const {
  Pose out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

Pose Pose::reorthonormalized() const {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return {r, translation};
}

void Pose::validate(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw Error(Errc::kInvalidArgument, "pose has non-finite entries");
  }
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho > tol || std::fabs(rotation.determinant() - 1.0) > tol) {
    throw Error(Errc::kInvalidArgument, "pose rotation is not a proper rotation");
  }
}

WorldPoint unproject(const Eigen::Vector2d& pixel, double depth, const Intrinsics& intr,
                     const Pose& pose, EnvId environment) {
  if (!(depth > 0.0) || !std::isfinite(depth)) {
    throw Error(Errc::kInvalidDepth, "depth must be positive and finite");
  }
  if (!intr.contains(pixel)) throw Error(Errc::kOutOfBounds, "pixel outside the image");
  const Eigen::Vector3d cam((pixel.x() - intr.cx) / intr.fx * depth,
                            (pixel.y() - intr.cy) / intr.fy * depth, depth);
  return {pose.apply(cam), environment};
}

Projection project(const WorldPoint& point, const Intrinsics& intr, const Pose& pose) {
  const Eigen::Vector3d cam = pose.rotation.transpose() * (point.xyz - pose.translation);
  if (!(cam.z() > 0.0)) throw Error(Errc::kBehindCamera, "point is not in front of the camera");
  return {{intr.fx * cam.x() / cam.z() + intr.cx, intr.fy * cam.y() / cam.z() + intr.cy},
          cam.z()};
}

Pose relative_pose(const Pose& a, const Pose& b) { return a.inverse().compose(b); }

double rotation_angle_deg(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const Eigen::Matrix3d d = a.transpose() * b;
  // atan2 form stays accurate near 0 and 180 degrees, unlike acos of the trace.
  const Eigen::Vector3d axis(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
  const double s = 0.5 * axis.norm();
  const double c = 0.5 * (d.trace() - 1.0);
  return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

double direction_angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 90.0;
  const double s = a.cross(b).norm();
  const double c = a.dot(b);
  return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
  if (std::fabs(forward.dot(up)) > 0.999) up = Eigen::Vector3d::UnitY();
  // Camera +y points down, so right = forward x up and down = forward x right.
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right).normalized();
  Pose pose;
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = down;
  pose.rotation.col(2) = forward;
  pose.translation = eye;
  return pose;
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

}  // namespace vsap
