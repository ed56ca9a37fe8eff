#pragma once

// Downstream evaluations of a frozen patch encoder: landmark retrieval,
// co-segmentation, linear-probe segmentation, and relative pose from patch
// matches.

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vsap/dataset.hpp"
#include "vsap/encoder.hpp"
#include "vsap/landmarks.hpp"
#include "vsap/objective.hpp"

namespace vsap {

/// Maps a batch of patches to embeddings (one row per record). Lets tests
/// plug in oracle encoders next to the trained one.
using Embedder = std::function<Matrix(const PatchBatch&)>;

Embedder encoder_embedder(const EncoderState& state);

// ---------------------------------------------------------------------------
// Retrieval

struct RetrievalSpec {
  std::uint64_t seed = 20240101;
  int num_batches = 8;
  int batch_views = 16;
  int envs_per_batch = 2;
  LandmarkSamplingSpec sampling;
  double kappa = kDefaultKappa;
  ObjectiveOptions objective;
};

struct RetrievalReport {
  double vsap = 0.0;      // mean smooth vectorized AP over eval batches
  double exact_ap = 0.0;  // mean exact AP over eval batches
  std::size_t batches = 0;
  std::size_t landmarks = 0;
  std::size_t positive_pairs = 0;
  std::size_t universe_pairs = 0;
  /// Expected AP of a random ranking that still puts single-patch
  /// landmarks' source pairs first, averaged like exact_ap.
  double chance_ap = 0.0;
};

/// Landmarks and masks are built exactly as in training but with a fixed
/// evaluation seed, so two encoders see identical retrieval problems.
RetrievalReport eval_retrieval(const Embedder& embedder, const Dataset& dataset,
                               std::span<const EnvId> envs, const RetrievalSpec& spec);

/// Expected AP of a ranking of `universe` items, `positives` of them
/// relevant, where `pinned` of the positives are ranked first and the rest
/// are ordered uniformly at random.
double random_ranking_ap(std::size_t positives, std::size_t universe, std::size_t pinned = 0);

// ---------------------------------------------------------------------------
// Per-view patch grids (all cells, including background-centered ones)

struct PatchGrid {
  int grid_w = 0;
  int grid_h = 0;
  int patch_size = 0;
  Matrix pixels;                      // grid_w*grid_h x P*P*3
  std::vector<std::uint8_t> valid;    // center pixel has depth
  std::vector<WorldPoint> points;     // meaningful where valid
  Matrix features;                    // filled by embed_grid

  std::size_t cells() const { return static_cast<std::size_t>(grid_w) * grid_h; }
  Eigen::Vector2d cell_center(std::size_t cell) const;
};

PatchGrid make_grid(const PosedView& view, int patch_size, double normalization = kPixelNormalization);
void embed_grid(PatchGrid& grid, const Embedder& embedder);

// ---------------------------------------------------------------------------
// Co-segmentation

struct CosegResult {
  /// Per view: selected grid cells (1 = cosine with query >= threshold).
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<std::vector<double>> scores;
};

CosegResult cosegment(const Embedder& embedder, const PosedView& query_view, int query_gx, int query_gy,
                      std::span<const PosedView* const> views, double threshold, int patch_size,
                      double normalization = kPixelNormalization);

/// RGB image with selected cells tinted.
std::vector<std::uint8_t> coseg_overlay(const PosedView& view, std::span<const std::uint8_t> mask,
                                        int patch_size);

// ---------------------------------------------------------------------------
// Linear probe segmentation

/// Stuff pixels keep their semantic class id (wall/floor/ceiling); object
/// pixels map to kThingLabelBase + library id, so the same object type is one
/// class across environments. Background is 0.
inline constexpr std::uint32_t kThingLabelBase = 100;

std::uint32_t panoptic_label(const Scene& scene, std::uint32_t semantic, std::uint32_t instance);
bool is_thing_label(std::uint32_t label);

/// Majority panoptic label per grid cell, ties to the lowest id.
std::vector<std::uint32_t> patch_labels(const PosedView& view, const Scene& scene, int patch_size);

struct ProbeState {
  Matrix weights;  // K x c
  std::vector<double> bias;
  std::vector<std::uint32_t> class_ids;  // class index -> panoptic label

  std::size_t num_classes() const { return class_ids.size(); }
  /// Softmax class probabilities, one row per feature row.
  Matrix predict_proba(const Matrix& features) const;
};

enum class ProbeOptimizer { kAdam, kGradientDescent };

struct ProbeTrainSpec {
  ProbeOptimizer optimizer = ProbeOptimizer::kAdam;
  double learning_rate = 1e-4;
  int max_steps = 3000;
  /// Stop when the loss improves by less than this (relative) over a step.
  double tolerance = 1e-9;
  std::uint64_t seed = 7;
};

struct ProbeTrainResult {
  ProbeState probe;
  std::vector<double> loss_history;  // full-batch loss before each step
};

/// Full-batch softmax regression over the labels present in `labels`.
/// Label 0 (background) is ignored. Throws if fewer than two classes remain.
ProbeTrainResult train_probe(const Matrix& features, std::span<const std::uint32_t> labels,
                             const ProbeTrainSpec& spec);

double probe_loss(const ProbeState& probe, const Matrix& features, std::span<const std::uint32_t> labels);

struct SegGroupMetrics {
  double map = 0.0;
  double miou = 0.0;
  // Both Jaccard variants pool TP/FP/FN over classes (mIoU averages per class).
  double jaccard_paper = 0.0;  // TP / (FP + FN), 1.0 when FP + FN == 0; unbounded above
  double jaccard = 0.0;        // TP / (TP + FP + FN)
  std::size_t classes = 0;
  std::size_t pixels = 0;
};

struct SegMetrics {
  SegGroupMetrics stuff;
  SegGroupMetrics things;
  SegGroupMetrics overall;
};

/// Pixel-level metrics on the pixels where `include` is set. `scores` holds
/// one column per entry of `class_ids`. Averages run over ground-truth
/// classes present among the included pixels.
SegGroupMetrics segmentation_metrics(std::span<const std::uint32_t> gt, std::span<const std::uint32_t> pred,
                                     const Matrix& scores, std::span<const std::uint32_t> class_ids,
                                     std::span<const std::uint8_t> include);

/// Runs the probe over every pixel of the given views (each pixel takes its
/// patch's prediction) and reports stuff / things / overall metrics. Ground
/// truth classes unknown to the probe are kept (they can never be predicted)
/// and reported once on stderr.
SegMetrics eval_segmentation(const ProbeState& probe, const Embedder& embedder, const Dataset& dataset,
                             std::span<const EnvId> envs, int patch_size);

/// Features and majority labels of every labelled grid cell of the views.
struct LabelledPatches {
  Matrix features;
  std::vector<std::uint32_t> labels;
};
/// `max_views_per_env` = 0 uses every view.
LabelledPatches labelled_patches(const Embedder& embedder, const Dataset& dataset, std::span<const EnvId> envs,
                                 int patch_size, int max_views_per_env = 0);

// ---------------------------------------------------------------------------
// Matching and relative pose

struct PatchMatch {
  std::size_t a = 0;  // cell index in view A
  std::size_t b = 0;  // cell index in view B
  double score = 0.0;
  friend bool operator==(const PatchMatch&, const PatchMatch&) = default;
};

/// Every valid (a, b) with cosine score >= threshold.
std::vector<PatchMatch> match_patches(const PatchGrid& a, const PatchGrid& b, double threshold = 0.7);

struct ContinuityConfig {
  bool enabled = true;
  bool mutual_best = true;
  /// Max L-inf deviation (grid cells) from the neighborhood median displacement.
  double max_deviation = 2.0;
};

/// Mutual-best consistency, then rejection of pairs whose grid displacement
/// deviates from the median of their 8-neighborhood (the worst offender is
/// removed first, repeatedly). Pairs without kept neighbors are retained.
/// The result is a fixpoint, so the filter is idempotent.
std::vector<PatchMatch> continuity_filter(std::span<const PatchMatch> pairs, int grid_w, int grid_h,
                                          const ContinuityConfig& config = {});

/// Minimal solver: normalized image points (x_b, x_a) -> candidate
/// essential matrices with x_a^T E x_b = 0.
using EssentialSolver = std::function<std::vector<Eigen::Matrix3d>(std::span<const Eigen::Vector3d> xb,
                                                                   std::span<const Eigen::Vector3d> xa)>;

/// Normalized 8-point (least squares for more points), projected to the
/// essential manifold (singular values 1, 1, 0).
std::vector<Eigen::Matrix3d> eight_point(std::span<const Eigen::Vector3d> xb, std::span<const Eigen::Vector3d> xa);

double sampson_distance(const Eigen::Matrix3d& e, const Eigen::Vector3d& xb, const Eigen::Vector3d& xa);

struct RelativeMotion {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // camera b -> camera a
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();   // unit length
  std::size_t in_front = 0;
};

/// The four (R, t) factorizations of E, best chirality first.
std::vector<RelativeMotion> decompose_essential(const Eigen::Matrix3d& e, std::span<const Eigen::Vector3d> xb,
                                                std::span<const Eigen::Vector3d> xa);

struct RansacConfig {
  int max_iterations = 1000;
  double confidence = 0.99;
  /// Sampson distance threshold in pixels (converted with the mean focal length).
  double inlier_threshold_px = 1.0;
  std::size_t top_pairs = 100;
  std::size_t sample_size = 8;
  std::uint64_t seed = 99;
  EssentialSolver solver = eight_point;
};

struct Correspondence {
  Eigen::Vector2d pixel_a;
  Eigen::Vector2d pixel_b;
  double score = 1.0;
};

struct PoseResult {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();  // scaled to the ground-truth norm
  std::size_t inliers = 0;
  std::size_t iterations = 0;
  bool near_zero_baseline = false;
  bool degenerate = false;
  double rotation_error_deg = 0.0;
  double translation_error_m = 0.0;
};

/// Throws Errc::kInsufficientMatches with fewer than sample_size pairs.
PoseResult estimate_relative_pose(std::span<const Correspondence> pairs, const Intrinsics& intr_a,
                                  const Intrinsics& intr_b, double gt_translation_norm,
                                  const RansacConfig& config = {});

/// Fills the error fields against a ground-truth b -> a motion.
void score_pose(PoseResult& result, const Pose& gt_b_to_a);

struct PosePair {
  EnvId environment = 0;
  std::uint32_t view_a = 0;
  std::uint32_t view_b = 0;
  double overlap = 0.0;

  friend bool operator==(const PosePair&, const PosePair&) = default;
};

/// Fraction of A's valid patch centers that are visible in B (projected
/// inside B with a depth consistent with B's depth map).
double covisibility(const PosedView& a, const PosedView& b, int patch_size);

/// Deterministic selection of view pairs whose co-visibility lies in
/// [min_overlap, max_overlap].
std::vector<PosePair> select_pose_pairs(const Dataset& dataset, std::span<const EnvId> envs, std::size_t count,
                                        std::uint64_t seed, double min_overlap = 0.1, double max_overlap = 0.4);

struct PosePairResult {
  PosePair pair;
  bool success = false;
  std::size_t raw_matches = 0;
  std::size_t filtered_matches = 0;
  PoseResult pose;
};

struct PoseSummary {
  double median_translation_m = 0.0;
  double mean_translation_m = 0.0;
  double fraction_translation_le_1m = 0.0;
  double median_rotation_deg = 0.0;
  double mean_rotation_deg = 0.0;
  double fraction_rotation_le_30deg = 0.0;
  std::size_t pairs = 0;
  std::size_t failures = 0;
};

/// Aggregates the per-pair error fields. eval_pose_benchmark stores failed
/// pairs with rotation error 180 deg and translation error 2 |t_gt| (the
/// antipodal estimate).
PoseSummary summarize_pose(std::span<const PosePairResult> results);

struct PoseBenchmarkSpec {
  double score_threshold = 0.7;
  ContinuityConfig continuity;
  RansacConfig ransac{.inlier_threshold_px = 4.0};
  int threads = 1;
};

struct PoseBenchmark {
  std::vector<PosePairResult> pairs;
  PoseSummary summary;
};

PoseBenchmark eval_pose_benchmark(const Embedder& embedder, const Dataset& dataset,
                                  std::span<const PosePair> pairs, const PoseBenchmarkSpec& spec);

}  // namespace vsap
