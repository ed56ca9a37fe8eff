#pragma once

// Patch extraction, batches, and the on-disk dataset (a directory of
// environments with a manifest; see docs/FORMATS.md).

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "vsap/geometry.hpp"
#include "vsap/matrix.hpp"
#include "vsap/scenegen.hpp"

namespace vsap {

inline constexpr double kPixelNormalization = 255.0;

struct PatchRecord {
  std::vector<double> pixels;  // P*P*3, row-major (y, x, channel), in [0, 1]
  WorldPoint point;            // unprojected patch center
  std::uint32_t view_id = 0;
  int grid_x = 0;
  int grid_y = 0;
  std::uint32_t semantic = 0;  // majority pixel label, ties -> lowest id
  std::uint32_t instance = 0;

  EnvId environment() const { return point.environment; }
};

/// Extracts one record per non-overlapping grid cell whose center pixel has a
/// valid depth. The center pixel of cell (gx, gy) is (gx*P + P/2, gy*P + P/2).
std::vector<PatchRecord> extract_patches(const PosedView& view, int patch_size,
                                         double normalization = kPixelNormalization);

struct BatchSpec {
  int patch_size = 8;
  double normalization = kPixelNormalization;
  int threads = 1;
};

/// Structure-of-arrays view of the records of several posed views.
struct PatchBatch {
  Matrix pixels;  // n x (P*P*3)
  std::vector<WorldPoint> points;
  std::vector<std::uint32_t> view_ids;
  std::vector<EnvId> view_envs;  // per record, same as points[i].environment
  std::vector<int> grid_x;
  std::vector<int> grid_y;
  std::vector<std::uint32_t> semantic;
  std::vector<std::uint32_t> instance;
  std::size_t num_views = 0;

  std::size_t size() const { return points.size(); }
  EnvId environment(std::size_t i) const { return points[i].environment; }
};

PatchBatch build_batch(std::span<const PosedView* const> views, const BatchSpec& spec);
PatchBatch build_batch(std::span<const PosedView> views, const BatchSpec& spec);

struct DatasetSplit {
  std::vector<EnvId> train;
  std::vector<EnvId> val;

  /// Throws Errc::kInvalidArgument if an environment appears in both.
  void validate() const;
};

/// The last `num_val` environments (in the given order) become validation.
DatasetSplit make_split(std::span<const EnvId> environments, int num_val);

struct GenerateSpec {
  std::uint64_t seed = 1;
  int num_train_envs = 8;
  int num_val_envs = 2;
  int views_per_env = 48;
  SceneSpec scene;  // seed field is replaced per environment
  int width = 64;
  int height = 64;
  double fov_deg = 70.0;
  int patch_size = 8;
  RenderOptions render;
  int threads = 1;
};

struct EnvironmentData {
  Scene scene;
  std::vector<PosedView> views;
};

struct Dataset {
  GenerateSpec spec;
  DatasetSplit split;
  double normalization = kPixelNormalization;
  std::map<EnvId, EnvironmentData> environments;

  const EnvironmentData& env(EnvId id) const;
  /// Views of the given environments, in environment then view order.
  std::vector<const PosedView*> views_of(std::span<const EnvId> envs) const;

  void save(const std::filesystem::path& root) const;
  static Dataset load(const std::filesystem::path& root);
  std::string manifest_json() const;
};

Dataset generate_dataset(const GenerateSpec& spec);

}  // namespace vsap
