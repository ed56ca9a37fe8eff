#pragma once

#include <Eigen/Geometry>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <numbers>

#include "vsap/dataset.hpp"
#include "vsap/geometry.hpp"
#include "vsap/matrix.hpp"
#include "vsap/rng.hpp"

namespace vsap::test {

inline Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  return Eigen::AngleAxisd(rng.uniform(-std::numbers::pi, std::numbers::pi), axis).toRotationMatrix();
}

inline Pose random_pose(Rng& rng, double spread = 5.0) {
  return {random_rotation(rng), Eigen::Vector3d(rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                                                rng.uniform(-spread, spread))};
}

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = scale * rng.normal();
  return m;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / ("vsap_test_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

/// Small, fast dataset for tests that need real rendered views.
inline GenerateSpec small_spec(std::uint64_t seed = 3) {
  GenerateSpec g;
  g.seed = seed;
  g.num_train_envs = 2;
  g.num_val_envs = 1;
  g.views_per_env = 8;
  g.width = 32;
  g.height = 32;
  g.patch_size = 8;
  return g;
}

}  // namespace vsap::test
