#include <algorithm>
#include <cmath>

#include "vsap/error.hpp"
#include "vsap/tasks.hpp"
#include "vsap/trainer.hpp"

namespace vsap {

Embedder encoder_embedder(const EncoderState& state) {
  return [state](const PatchBatch& batch) { return forward(state, batch.pixels); };
}

double random_ranking_ap(std::size_t positives, std::size_t universe, std::size_t pinned) {
  if (positives == 0 || universe < positives) throw Error(Errc::kInvalidArgument, "need 0 < positives <= universe");
  if (pinned > positives) throw Error(Errc::kInvalidArgument, "need pinned <= positives");
  // Pinned positives sit on top with precision 1. Each other positive lands
  // at rank r of the remaining N uniformly; given r, the expected number of
  // free positives above it is (r-1)(Q-1)/(N-1).
  const double s = static_cast<double>(pinned);
  const double q = static_cast<double>(positives - pinned);
  const std::size_t rest = universe - pinned;
  if (q == 0.0) return 1.0;
  if (rest == 1) return 1.0;
  const double n = static_cast<double>(rest);
  double free_total = 0.0;
  for (std::size_t r = 1; r <= rest; ++r) {
    const double rd = static_cast<double>(r);
    free_total += (1.0 + s + (rd - 1.0) * (q - 1.0) / (n - 1.0)) / (s + rd);
  }
  return (s + q * free_total / n) / (s + q);
}

RetrievalReport eval_retrieval(const Embedder& embedder, const Dataset& dataset, std::span<const EnvId> envs,
                               const RetrievalSpec& spec) {
  if (spec.num_batches < 1) throw Error(Errc::kInvalidArgument, "need at least one evaluation batch");
  auto plan = plan_epoch(dataset, envs, spec.batch_views, spec.envs_per_batch, spec.seed, 0);
  if (plan.empty()) throw Error(Errc::kEmptyBatch, "evaluation environments too small for one batch");
  if (plan.size() > static_cast<std::size_t>(spec.num_batches)) plan.resize(static_cast<std::size_t>(spec.num_batches));

  BatchSpec bs;
  bs.patch_size = dataset.spec.patch_size;
  bs.normalization = dataset.normalization;
  RetrievalReport report;
  for (std::size_t b = 0; b < plan.size(); ++b) {
    const PatchBatch batch = build_batch(std::span<const PosedView* const>(plan[b]), bs);
    Rng rng(derive_seed(spec.seed, "eval-landmarks", b));
    const auto landmarks = sample_landmarks(batch, spec.sampling, rng);
    if (landmarks.empty()) continue;
    const MaskPair masks = build_masks(batch, std::span<const TentativeLandmark>(landmarks), spec.kappa);
    const Matrix emb = embedder(batch);
    if (emb.rows != batch.size()) throw Error(Errc::kShapeMismatch, "embedder returned the wrong number of rows");
    Matrix thetas(landmarks.size(), emb.cols);
    for (std::size_t j = 0; j < landmarks.size(); ++j) {
      const auto theta = landmarks[j].embedding.materialize(emb);
      std::copy(theta.begin(), theta.end(), thetas.row(j).begin());
    }
    const Matrix scores = cosine_scores(emb, thetas);
    report.vsap += vectorized_smooth_ap(scores, masks, spec.objective);
    report.exact_ap += exact_ap(scores, masks);
    // A landmark built from one patch scores that patch at cosine 1, so its
    // source pair tops any ranking.
    const auto pinned = static_cast<std::size_t>(std::count_if(
        landmarks.begin(), landmarks.end(), [](const TentativeLandmark& l) { return l.embedding.sources.size() == 1; }));
    report.chance_ap += random_ranking_ap(masks.positive_count(), masks.universe_count(), pinned);
    report.landmarks += landmarks.size();
    report.positive_pairs += masks.positive_count();
    report.universe_pairs += masks.universe_count();
    ++report.batches;
  }
  if (report.batches == 0) throw Error(Errc::kEmptyPositiveSet, "no evaluation batch produced a landmark");
  const double nb = static_cast<double>(report.batches);
  report.vsap /= nb;
  report.exact_ap /= nb;
  report.chance_ap /= nb;
  return report;
}

Eigen::Vector2d PatchGrid::cell_center(std::size_t cell) const {
  const int gx = static_cast<int>(cell % static_cast<std::size_t>(grid_w));
  const int gy = static_cast<int>(cell / static_cast<std::size_t>(grid_w));
  return {gx * patch_size + patch_size / 2 + 0.5, gy * patch_size + patch_size / 2 + 0.5};
}

PatchGrid make_grid(const PosedView& view, int patch_size, double normalization) {
  if (patch_size < 1 || view.width % patch_size != 0 || view.height % patch_size != 0) {
    throw Error(Errc::kInvalidArgument, "patch size must divide the image dimensions");
  }
  PatchGrid g;
  g.patch_size = patch_size;
  g.grid_w = view.width / patch_size;
  g.grid_h = view.height / patch_size;
  const std::size_t dim = static_cast<std::size_t>(patch_size) * patch_size * 3;
  g.pixels = Matrix(g.cells(), dim);
  g.valid.assign(g.cells(), 0);
  g.points.assign(g.cells(), WorldPoint{Eigen::Vector3d::Zero(), view.environment});
  for (std::size_t cell = 0; cell < g.cells(); ++cell) {
    const int gx = static_cast<int>(cell % static_cast<std::size_t>(g.grid_w));
    const int gy = static_cast<int>(cell / static_cast<std::size_t>(g.grid_w));
    auto row = g.pixels.row(cell);
    std::size_t k = 0;
    for (int y = 0; y < patch_size; ++y) {
      for (int x = 0; x < patch_size; ++x) {
        const std::size_t src = view.index(gx * patch_size + x, gy * patch_size + y) * 3;
        for (int c = 0; c < 3; ++c) row[k++] = view.rgb[src + c] / normalization;
      }
    }
    const int cu = gx * patch_size + patch_size / 2;
    const int cv = gy * patch_size + patch_size / 2;
    const double depth = view.depth[view.index(cu, cv)];
    if (depth > 0.0) {
      g.valid[cell] = 1;
      g.points[cell] = unproject({cu + 0.5, cv + 0.5}, depth, view.intr, view.pose, view.environment);
    }
  }
  return g;
}

void embed_grid(PatchGrid& grid, const Embedder& embedder) {
  PatchBatch batch;
  batch.pixels = grid.pixels;
  batch.points = grid.points;
  batch.num_views = 1;
  for (std::size_t cell = 0; cell < grid.cells(); ++cell) {
    batch.view_envs.push_back(grid.points[cell].environment);
    batch.grid_x.push_back(static_cast<int>(cell % static_cast<std::size_t>(grid.grid_w)));
    batch.grid_y.push_back(static_cast<int>(cell / static_cast<std::size_t>(grid.grid_w)));
  }
  batch.view_ids.assign(grid.cells(), 0);
  batch.semantic.assign(grid.cells(), 0);
  batch.instance.assign(grid.cells(), 0);
  grid.features = embedder(batch);
  if (grid.features.rows != grid.cells()) throw Error(Errc::kShapeMismatch, "embedder returned the wrong number of rows");
}

CosegResult cosegment(const Embedder& embedder, const PosedView& query_view, int query_gx, int query_gy,
                      std::span<const PosedView* const> views, double threshold, int patch_size,
                      double normalization) {
  PatchGrid qg = make_grid(query_view, patch_size, normalization);
  if (query_gx < 0 || query_gy < 0 || query_gx >= qg.grid_w || query_gy >= qg.grid_h) {
    throw Error(Errc::kOutOfBounds, "query cell outside the grid");
  }
  embed_grid(qg, embedder);
  const std::size_t qcell = static_cast<std::size_t>(query_gy) * qg.grid_w + query_gx;
  Matrix query(1, qg.features.cols);
  std::copy(qg.features.row(qcell).begin(), qg.features.row(qcell).end(), query.row(0).begin());

  CosegResult out;
  for (const PosedView* v : views) {
    PatchGrid g = make_grid(*v, patch_size, normalization);
    embed_grid(g, embedder);
    const Matrix s = cosine_scores(g.features, query);
    std::vector<double> scores(s.data.begin(), s.data.end());
    std::vector<std::uint8_t> mask(scores.size());
    for (std::size_t k = 0; k < scores.size(); ++k) mask[k] = scores[k] >= threshold ? 1 : 0;
    // The query against itself is selected regardless of rounding in the norm.
    if (v == &query_view) mask[qcell] = 1;
    out.masks.push_back(std::move(mask));
    out.scores.push_back(std::move(scores));
  }
  return out;
}

std::vector<std::uint8_t> coseg_overlay(const PosedView& view, std::span<const std::uint8_t> mask, int patch_size) {
  const int gw = view.width / patch_size;
  if (mask.size() != static_cast<std::size_t>(gw) * (view.height / patch_size)) {
    throw Error(Errc::kShapeMismatch, "mask does not match the view grid");
  }
  std::vector<std::uint8_t> rgb = view.rgb;
  for (int v = 0; v < view.height; ++v) {
    for (int u = 0; u < view.width; ++u) {
      const std::size_t px = view.index(u, v) * 3;
      if (mask[static_cast<std::size_t>(v / patch_size) * gw + u / patch_size]) {
        rgb[px] = static_cast<std::uint8_t>((rgb[px] + 255) / 2);
        rgb[px + 1] = static_cast<std::uint8_t>(rgb[px + 1] / 2);
        rgb[px + 2] = static_cast<std::uint8_t>(rgb[px + 2] / 2);
      } else {
        for (int c = 0; c < 3; ++c) rgb[px + c] = static_cast<std::uint8_t>(rgb[px + c] / 3);
      }
    }
  }
  return rgb;
}

}  // namespace vsap
