#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <tuple>

#include "doctest.h"
#include "support.hpp"
#include "vsap/error.hpp"
#include "vsap/tasks.hpp"

using namespace vsap;

namespace {

const Dataset& dataset() {
  static const Dataset ds = [] {
    auto spec = test::small_spec(31);
    spec.num_train_envs = 2;
    spec.num_val_envs = 2;
    spec.views_per_env = 16;
    return generate_dataset(spec);
  }();
  return ds;
}

RetrievalSpec small_retrieval() {
  RetrievalSpec s;
  s.num_batches = 4;
  s.batch_views = 8;
  s.envs_per_batch = 2;
  s.sampling.count = 32;
  return s;
}

/// Fresh Gaussian features on every call: no information about the input.
Embedder iid_embedder(std::uint64_t seed) {
  auto calls = std::make_shared<std::uint64_t>(0);
  return [seed, calls](const PatchBatch& b) {
    Rng rng(derive_seed(seed, "iid", (*calls)++));
    Matrix out(b.size(), 16);
    for (double& x : out.data) x = rng.normal();
    return out;
  };
}

/// One-hot code of the voxel containing p_i (hashed into `dims` slots).
Matrix voxel_codes(const std::vector<WorldPoint>& pts, double voxel, std::size_t dims) {
  Matrix m(pts.size(), dims, 0.0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto key = (pts[i].xyz / voxel).array().floor().cast<long long>();
    const std::uint64_t h = derive_seed(static_cast<std::uint64_t>(key.x()) * 73856093ULL ^
                                            static_cast<std::uint64_t>(key.y()) * 19349663ULL ^
                                            static_cast<std::uint64_t>(key.z()) * 83492791ULL,
                                        "voxel", pts[i].environment);
    m(i, h % dims) = 1.0;
  }
  return m;
}

}  // namespace

TEST_CASE("random ranking AP matches Monte Carlo") {
  Rng rng(1);
  using Case = std::tuple<std::size_t, std::size_t, std::size_t>;
  for (auto [p, n, pinned] : std::vector<Case>{{1, 1, 0}, {1, 5, 0}, {3, 10, 0}, {7, 40, 0}, {20, 20, 0},
                                              {3, 10, 1}, {7, 40, 4}, {5, 30, 5}, {2, 2, 1}}) {
    // Pinned positives first, then a shuffled tail.
    std::vector<std::uint8_t> tail(n - pinned, 0);
    std::fill_n(tail.begin(), p - pinned, 1);
    double total = 0.0;
    const int trials = 40000;
    for (int t = 0; t < trials; ++t) {
      rng.shuffle(tail);
      double ap = 0.0, hits = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        if (r < pinned || tail[r - pinned]) hits += 1.0, ap += hits / double(r + 1);
      }
      total += ap / double(p);
    }
    CAPTURE(p);
    CAPTURE(n);
    CAPTURE(pinned);
    CHECK(random_ranking_ap(p, n, pinned) == doctest::Approx(total / trials).epsilon(0.01));
  }
  CHECK(random_ranking_ap(4, 4) == doctest::Approx(1.0));
  CHECK(random_ranking_ap(3, 9, 3) == 1.0);
  CHECK_THROWS_AS(random_ranking_ap(0, 3), Error);
  CHECK_THROWS_AS(random_ranking_ap(5, 3), Error);
  CHECK_THROWS_AS(random_ranking_ap(2, 5, 3), Error);
}

TEST_CASE("voxel oracle retrieves clustered landmarks perfectly") {
  // Tight clusters on a 0.3 m lattice: each cluster is exactly one landmark's
  // positive set, neighbouring clusters fall in the negative shell.
  Rng rng(2);
  PatchBatch batch;
  for (int cx = 0; cx < 4; ++cx) {
    for (int cy = 0; cy < 4; ++cy) {
      for (int k = 0; k < 5; ++k) {
        const Eigen::Vector3d c(0.3 * cx + 0.15, 0.3 * cy + 0.15, 0.15);
        batch.points.push_back({c + Eigen::Vector3d(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02), 0.0), 0});
      }
    }
  }
  const std::size_t n = batch.points.size();
  batch.pixels = Matrix(n, 1);
  batch.view_ids.assign(n, 0);
  batch.view_envs.assign(n, 0);
  batch.grid_x.assign(n, 0);
  batch.grid_y.assign(n, 0);
  batch.semantic.assign(n, 0);
  batch.instance.assign(n, 0);
  LandmarkSamplingSpec spec;
  spec.count = 20;
  const auto lms = sample_landmarks(batch, spec, rng);
  const MaskPair masks = build_masks(batch, std::span<const TentativeLandmark>(lms), 3.0);
  const Matrix emb = voxel_codes(batch.points, 0.3, 4096);
  Matrix thetas(lms.size(), emb.cols);
  for (std::size_t j = 0; j < lms.size(); ++j) {
    const auto t = lms[j].embedding.materialize(emb);
    std::copy(t.begin(), t.end(), thetas.row(j).begin());
  }
  const Matrix s = cosine_scores(emb, thetas);
  CHECK(masks.universe_count() > masks.positive_count());
  CHECK(exact_ap(s, masks) == doctest::Approx(1.0));
  CHECK(vectorized_smooth_ap(s, masks) > 0.999);
}

TEST_CASE("information-free embeddings score near chance") {
  const auto& ds = dataset();
  const auto r = eval_retrieval(iid_embedder(3), ds, ds.split.val, small_retrieval());
  CHECK(r.batches == 4u);
  CHECK(r.chance_ap > 0.0);
  CHECK(r.exact_ap <= 2.0 * r.chance_ap);
  CHECK(r.exact_ap >= 0.5 * r.chance_ap);
}

TEST_CASE("geometric oracle beats the random encoder") {
  const auto& ds = dataset();
  const auto spec = small_retrieval();
  const Embedder oracle = [](const PatchBatch& b) { return voxel_codes(b.points, 0.2, 4096); };
  const auto good = eval_retrieval(oracle, ds, ds.split.val, spec);
  const auto rnd = eval_retrieval(encoder_embedder(init_encoder(1)), ds, ds.split.val, spec);
  CHECK(good.exact_ap > rnd.exact_ap);
  CHECK(good.positive_pairs == rnd.positive_pairs);
  CHECK(good.universe_pairs == rnd.universe_pairs);
}

TEST_CASE("retrieval evaluation is deterministic") {
  const auto& ds = dataset();
  const auto e = encoder_embedder(init_encoder(4));
  const auto a = eval_retrieval(e, ds, ds.split.train, small_retrieval());
  const auto b = eval_retrieval(e, ds, ds.split.train, small_retrieval());
  CHECK(a.exact_ap == b.exact_ap);
  CHECK(a.vsap == b.vsap);
  CHECK(a.landmarks == b.landmarks);
}

TEST_CASE("patch grids cover every cell") {
  const auto& v = dataset().environments.begin()->second.views[0];
  const PatchGrid g = make_grid(v, 8);
  CHECK(g.cells() == 16u);
  CHECK(g.cell_center(5).x() == doctest::Approx(8 + 4.5));
  CHECK(g.cell_center(5).y() == doctest::Approx(8 + 4.5));
  const auto recs = extract_patches(v, 8);
  std::size_t valid = 0;
  for (auto x : g.valid) valid += x;
  CHECK(valid == recs.size());
  CHECK_THROWS_AS(make_grid(v, 5), Error);
}

TEST_CASE("co-segmentation selects the query in its own view") {
  const auto& env = dataset().environments.begin()->second;
  const Embedder e = encoder_embedder(init_encoder(5));
  std::vector<const PosedView*> views{&env.views[0], &env.views[1], &env.views[2]};
  for (double thr : {-0.99, 0.5, 0.99, 0.999999}) {
    const auto r = cosegment(e, env.views[0], 1, 2, views, thr, 8);
    REQUIRE(r.masks.size() == 3u);
    CHECK(r.masks[0][2 * 4 + 1] == 1);
    CHECK(r.scores[0][2 * 4 + 1] == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(cosegment(e, env.views[0], 4, 0, views, 0.5, 8), Error);
}

TEST_CASE("a near-one threshold with information-free features selects almost nothing") {
  const auto& env = dataset().environments.begin()->second;
  std::vector<const PosedView*> views;
  for (const auto& v : env.views) views.push_back(&v);
  const auto r = cosegment(iid_embedder(6), env.views[0], 2, 2, views, 0.9999, 8);
  std::size_t selected = 0, total = 0;
  for (std::size_t k = 0; k < r.masks.size(); ++k) {
    for (auto m : r.masks[k]) selected += m, total += 1;
  }
  CHECK(double(selected) / double(total) < 0.05);
  const auto overlay = coseg_overlay(env.views[0], r.masks[0], 8);
  CHECK(overlay.size() == env.views[0].rgb.size());
}
