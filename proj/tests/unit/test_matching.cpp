#include <algorithm>

#include "doctest.h"
#include "support.hpp"
#include "vsap/error.hpp"
#include "vsap/tasks.hpp"

using namespace vsap;

namespace {

constexpr int kW = 8, kH = 8;

std::size_t cell(int x, int y) { return static_cast<std::size_t>(y * kW + x); }

std::vector<PatchMatch> translation_field(int dx, int dy) {
  std::vector<PatchMatch> out;
  for (int y = 0; y < kH; ++y) {
    for (int x = 0; x < kW; ++x) {
      if (x + dx < 0 || x + dx >= kW || y + dy < 0 || y + dy >= kH) continue;
      out.push_back({cell(x, y), cell(x + dx, y + dy), 0.8 + 0.001 * double(x + y)});
    }
  }
  return out;
}

bool is_subset(const std::vector<PatchMatch>& sub, const std::vector<PatchMatch>& super) {
  return std::all_of(sub.begin(), sub.end(),
                     [&](const PatchMatch& m) { return std::find(super.begin(), super.end(), m) != super.end(); });
}

}  // namespace

TEST_CASE("a view matched against itself recovers the diagonal") {
  const Dataset ds = generate_dataset(test::small_spec(51));
  const auto& view = ds.environments.begin()->second.views[0];
  PatchGrid g = make_grid(view, 8);
  embed_grid(g, encoder_embedder(init_encoder(3)));
  const auto m = match_patches(g, g, 0.7);
  for (std::size_t c = 0; c < g.cells(); ++c) {
    if (!g.valid[c]) continue;
    const auto it = std::find_if(m.begin(), m.end(), [&](const PatchMatch& p) { return p.a == c && p.b == c; });
    REQUIRE(it != m.end());
    CHECK(it->score == doctest::Approx(1.0));
  }
  for (const auto& p : m) CHECK(p.score >= 0.7);
  CHECK(match_patches(g, g, 1.0 + 1e-9).empty());
  PatchGrid bare = make_grid(view, 8);
  CHECK_THROWS_AS(match_patches(bare, g), Error);
}

TEST_CASE("continuity filter keeps a pure translation field") {
  for (auto [dx, dy] : std::vector<std::pair<int, int>>{{0, 0}, {2, -1}, {-3, 3}}) {
    const auto field = translation_field(dx, dy);
    CHECK(continuity_filter(field, kW, kH) == field);
  }
}

TEST_CASE("continuity filter rejects a pair pointing across the image") {
  auto field = translation_field(1, 0);
  // Replace the match of cell (3, 4) with one that jumps to the far corner.
  for (auto& m : field) {
    if (m.a == cell(3, 4)) m.b = cell(0, 7), m.score = 0.95;
  }
  const auto kept = continuity_filter(field, kW, kH);
  CHECK(std::none_of(kept.begin(), kept.end(), [](const PatchMatch& m) { return m.a == cell(3, 4); }));
  CHECK(kept.size() == field.size() - 1);
}

TEST_CASE("mutual-best keeps only reciprocal best matches") {
  const std::vector<PatchMatch> pairs{{0, 5, 0.9}, {0, 6, 0.8}, {1, 5, 0.95}, {2, 7, 0.75}, {3, 7, 0.75}};
  ContinuityConfig cfg;
  cfg.max_deviation = 1e9;
  const auto kept = continuity_filter(pairs, kW, kH, cfg);
  // (1,5) beats (0,5) for cell 5; (0,6) is then not 0's best. Cell 7 ties go to the lower a.
  CHECK(kept == std::vector<PatchMatch>{{1, 5, 0.95}, {2, 7, 0.75}});
  cfg.enabled = false;
  CHECK(continuity_filter(pairs, kW, kH, cfg) == pairs);
  CHECK_THROWS_AS(continuity_filter(std::vector<PatchMatch>{{64, 0, 1.0}}, kW, kH), Error);
}

TEST_CASE("continuity filter output is a subset and a fixpoint") {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    auto field = translation_field(int(rng.below(3)) - 1, int(rng.below(3)) - 1);
    std::vector<PatchMatch> noisy;
    for (auto m : field) {
      if (rng.uniform() < 0.3) m.b = rng.below(kW * kH);
      m.score = rng.uniform(0.7, 1.0);
      if (rng.uniform() < 0.8) noisy.push_back(m);
    }
    for (int extra = 0; extra < 10; ++extra) noisy.push_back({rng.below(kW * kH), rng.below(kW * kH), rng.uniform(0.7, 1.0)});
    const auto once = continuity_filter(noisy, kW, kH);
    CHECK(is_subset(once, noisy));
    CHECK(continuity_filter(once, kW, kH) == once);
  }
}
