#pragma once

// Procedural indoor environments built from axis-aligned boxes and spheres,
// plus a ray-cast renderer producing posed RGB-D views with labels.

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vsap/geometry.hpp"

namespace vsap {

enum class SemanticClass : std::uint32_t {
  kBackground = 0,
  kWall = 1,
  kFloor = 2,
  kCeiling = 3,
  kObject = 4,
};
inline constexpr int kNumSemanticClasses = 5;

const char* semantic_name(SemanticClass c);

enum class ShapeKind : std::uint8_t { kBox = 0, kSphere = 1 };

/// Texture ids at or above this value belong to library objects; below it
/// they index the structural palette.
inline constexpr std::uint32_t kObjectTextureBase = 1000;

struct SceneSpec {
  std::uint64_t seed = 0;
  int num_rooms = 1;
  int objects_per_room = 4;
  int palette_size = 12;
  int object_library_size = 8;

  void validate() const;
};

/// Entry of the object library shared by every environment. The library is a
/// pure function of its size, so scenes with different seeds draw from the
/// same shapes and textures.
struct LibraryObject {
  ShapeKind kind = ShapeKind::kBox;
  Eigen::Vector3d half_extent = Eigen::Vector3d::Zero();  // boxes
  double radius = 0.0;                                    // spheres
  std::uint32_t texture_id = 0;
};

std::vector<LibraryObject> object_library(int size);

struct Primitive {
  ShapeKind kind = ShapeKind::kBox;
  Eigen::Vector3d lo = Eigen::Vector3d::Zero();  // bounding box
  Eigen::Vector3d hi = Eigen::Vector3d::Zero();
  Eigen::Vector3d center = Eigen::Vector3d::Zero();  // spheres
  double radius = 0.0;
  SemanticClass semantic = SemanticClass::kWall;
  std::uint32_t instance_id = 0;  // unique within the environment, 0 = background
  std::int32_t library_id = -1;   // -1 for walls/floor/ceiling
  std::uint32_t texture_id = 0;
  Eigen::Vector3d texture_origin = Eigen::Vector3d::Zero();
  std::uint32_t room = 0;
};

struct Room {
  Eigen::Vector3d lo = Eigen::Vector3d::Zero();  // interior bounds
  Eigen::Vector3d hi = Eigen::Vector3d::Zero();
};

struct Scene {
  EnvId environment = 0;
  SceneSpec spec;
  std::vector<Room> rooms;
  std::vector<Primitive> primitives;

  const Primitive* find_instance(std::uint32_t instance_id) const;
  std::string to_json() const;
  static Scene from_json(const std::string& text);
};

Scene generate_scene(const SceneSpec& spec, EnvId environment = 0);

std::vector<Pose> sample_trajectory(const Scene& scene, int num_views, std::uint64_t seed);

struct RenderOptions {
  /// Multiplicative Gaussian noise on stored depth (0 = exact depth).
  double depth_noise_std = 0.0;
  std::uint64_t noise_seed = 0;
};

struct PosedView {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;        // H*W*3, row-major
  std::vector<float> depth;             // H*W, meters; 0 = background
  std::vector<std::uint32_t> instance;  // H*W, 0 = background
  std::vector<std::uint32_t> semantic;  // H*W, SemanticClass values
  Intrinsics intr;
  Pose pose;
  EnvId environment = 0;
  std::uint32_t view_id = 0;

  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
  friend bool operator==(const PosedView&, const PosedView&) = default;
};

PosedView render(const Scene& scene, const Pose& pose, const Intrinsics& intr,
                 const RenderOptions& options = {});

struct RayHit {
  double t;
  const Primitive* primitive;
};

/// Nearest intersection with t > 0 along origin + t * direction.
std::optional<RayHit> cast_ray(const Scene& scene, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& direction);

/// View-independent surface color in [0, 1]^3.
Eigen::Vector3d texture_color(std::uint32_t texture_id, const Eigen::Vector3d& local_point);

/// Distance from a point to the surface of a primitive (0 on the surface).
double surface_distance(const Primitive& primitive, const Eigen::Vector3d& p);

}  // namespace vsap
