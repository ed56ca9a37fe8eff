#include "vsap/landmarks.hpp"

#include <cmath>

#include "vsap/error.hpp"

namespace vsap {
namespace {

bool within(const WorldPoint& p, const WorldPoint& l, double r) {
  return p.environment == l.environment && (p.xyz - l.xyz).norm() <= r;
}

}  // namespace

std::vector<double> LandmarkEmbedding::materialize(const Matrix& embeddings) const {
  std::vector<double> theta(embeddings.cols, 0.0);
  for (const auto& [idx, w] : sources) {
    const auto row = embeddings.row(idx);
    for (std::size_t c = 0; c < theta.size(); ++c) theta[c] += w * row[c];
  }
  return theta;
}

std::vector<LandmarkPosition> sample_landmark_positions(const PatchBatch& batch, std::size_t m,
                                                        Rng& rng, double radius) {
  if (batch.size() == 0) throw Error(Errc::kEmptyBatch, "cannot sample landmarks from an empty batch");
  if (!(radius > 0.0)) throw Error(Errc::kInvalidArgument, "landmark radius must be positive");
  std::vector<LandmarkPosition> out;
  out.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t i = rng.below(batch.size());
    out.push_back({batch.points[i], radius, i});
  }
  return out;
}

std::vector<std::size_t> positive_set(const PatchBatch& batch, const LandmarkPosition& landmark) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (within(batch.points[i], landmark.position, landmark.radius)) out.push_back(i);
  }
  return out;
}

std::optional<LandmarkEmbedding> sample_landmark_embedding(const PatchBatch& batch,
                                                           const LandmarkPosition& landmark,
                                                           EmbeddingMode mode, Rng& rng) {
  const auto positives = positive_set(batch, landmark);
  if (positives.empty()) return std::nullopt;
  LandmarkEmbedding e;
  if (mode == EmbeddingMode::kSinglePositive) {
    e.sources.emplace_back(positives[rng.below(positives.size())], 1.0);
  } else {
    // Divides by n (all patches), not by the positive count.
    const double w = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i : positives) e.sources.emplace_back(i, w);
  }
  return e;
}

std::vector<TentativeLandmark> sample_landmarks(const PatchBatch& batch,
                                                const LandmarkSamplingSpec& spec, Rng& rng) {
  std::vector<TentativeLandmark> out;
  out.reserve(spec.count);
  for (std::size_t j = 0; j < spec.count; ++j) {
    for (int attempt = 0; attempt <= spec.max_redraws; ++attempt) {
      const auto pos = sample_landmark_positions(batch, 1, rng, spec.radius).front();
      if (positive_set(batch, pos).size() < spec.min_positives) continue;
      auto emb = sample_landmark_embedding(batch, pos, spec.mode, rng);
      if (!emb) continue;
      out.push_back({pos, std::move(*emb)});
      break;
    }
  }
  return out;
}

std::size_t MaskPair::positive_count() const {
  std::size_t c = 0;
  for (auto v : positive) c += v;
  return c;
}

std::size_t MaskPair::universe_count() const {
  std::size_t c = 0;
  for (auto v : universe) c += v;
  return c;
}

MaskPair build_masks(const PatchBatch& batch, std::span<const LandmarkPosition> landmarks,
                     double kappa) {
  if (!(kappa > 1.0)) throw Error(Errc::kInvalidArgument, "kappa must exceed 1");
  MaskPair masks;
  masks.rows = batch.size();
  masks.cols = landmarks.size();
  masks.kappa = kappa;
  masks.positive.assign(masks.rows * masks.cols, 0);
  masks.universe.assign(masks.rows * masks.cols, 0);
  for (std::size_t i = 0; i < masks.rows; ++i) {
    const WorldPoint& p = batch.points[i];
    for (std::size_t j = 0; j < masks.cols; ++j) {
      const LandmarkPosition& l = landmarks[j];
      if (p.environment != l.position.environment) continue;
      const double d = (p.xyz - l.position.xyz).norm();
      const std::size_t q = i * masks.cols + j;
      masks.positive[q] = d <= l.radius ? 1 : 0;
      // kappa = inf makes the product inf (or nan for a zero radius, which
      // sample_landmark_positions rejects).
      masks.universe[q] = d <= kappa * l.radius ? 1 : 0;
    }
  }
  return masks;
}

MaskPair build_masks(const PatchBatch& batch, std::span<const TentativeLandmark> landmarks,
                     double kappa) {
  std::vector<LandmarkPosition> pos;
  pos.reserve(landmarks.size());
  for (const auto& l : landmarks) pos.push_back(l.position);
  return build_masks(batch, std::span<const LandmarkPosition>(pos), kappa);
}

}  // namespace vsap
