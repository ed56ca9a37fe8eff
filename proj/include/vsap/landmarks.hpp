#pragma once

// Tentative landmarks and the positive / universe masks over patch-landmark
// pairs.
//
//   positive(i, j) = |p_i - l_j| <= rho_j          and e_i == env_j
//   universe(i, j) = |p_i - l_j| <= kappa * rho_j  and e_i == env_j
//
// Pairs outside the universe are "don't care": the ranking objective never
// reads their scores.

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "vsap/dataset.hpp"
#include "vsap/matrix.hpp"
#include "vsap/rng.hpp"

namespace vsap {

inline constexpr double kDefaultRadius = 0.2;
inline constexpr double kDefaultKappa = 3.0;

struct LandmarkPosition {
  WorldPoint position;
  double radius = kDefaultRadius;
  std::size_t source_patch = 0;  // record the position was drawn from
};

/// theta_j as a weighted sum of patch embeddings, so gradients can flow back
/// into the patches it was taken from.
struct LandmarkEmbedding {
  std::vector<std::pair<std::size_t, double>> sources;  // (patch index, weight)

  std::vector<double> materialize(const Matrix& embeddings) const;
};

struct TentativeLandmark {
  LandmarkPosition position;
  LandmarkEmbedding embedding;

  EnvId environment() const { return position.position.environment; }
};

enum class EmbeddingMode {
  kSinglePositive,  // one positive patch chosen uniformly at random
  kPositiveMean,    // (1/n) * sum_i positive(i, j) * phi(x_i)
};

/// Draws m positions, each the unprojected center of a patch chosen uniformly
/// (with replacement) among all records in the batch.
std::vector<LandmarkPosition> sample_landmark_positions(const PatchBatch& batch, std::size_t m,
                                                        Rng& rng, double radius = kDefaultRadius);

/// Indices of records inside the landmark's positive sphere.
std::vector<std::size_t> positive_set(const PatchBatch& batch, const LandmarkPosition& landmark);

/// Returns std::nullopt when the landmark has no positive patch (caller
/// should draw a new position).
std::optional<LandmarkEmbedding> sample_landmark_embedding(const PatchBatch& batch,
                                                           const LandmarkPosition& landmark,
                                                           EmbeddingMode mode, Rng& rng);

struct LandmarkSamplingSpec {
  std::size_t count = 64;
  double radius = kDefaultRadius;
  /// Landmarks with fewer positives are redrawn.
  std::size_t min_positives = 2;
  int max_redraws = 32;
  EmbeddingMode mode = EmbeddingMode::kSinglePositive;
};

/// Positions plus embeddings, redrawing positions whose positive set is too
/// small. May return fewer than `count` landmarks if redraws are exhausted.
std::vector<TentativeLandmark> sample_landmarks(const PatchBatch& batch,
                                                const LandmarkSamplingSpec& spec, Rng& rng);

struct MaskPair {
  std::size_t rows = 0;  // patches
  std::size_t cols = 0;  // landmarks
  std::vector<std::uint8_t> positive;  // row-major n x m; the vectorized form is this buffer
  std::vector<std::uint8_t> universe;
  double kappa = kDefaultKappa;

  bool pos(std::size_t i, std::size_t j) const { return positive[i * cols + j] != 0; }
  bool uni(std::size_t i, std::size_t j) const { return universe[i * cols + j] != 0; }
  std::size_t positive_count() const;
  std::size_t universe_count() const;
};

/// kappa must be > 1; pass +infinity to disable the don't-care region.
MaskPair build_masks(const PatchBatch& batch, std::span<const LandmarkPosition> landmarks,
                     double kappa);
MaskPair build_masks(const PatchBatch& batch, std::span<const TentativeLandmark> landmarks,
                     double kappa);

}  // namespace vsap
