#include <algorithm>
#include <cmath>
#include <vector>

#include "vsap/error.hpp"
#include "vsap/tasks.hpp"

namespace vsap {
namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<PatchMatch> match_patches(const PatchGrid& a, const PatchGrid& b, double threshold) {
  if (a.features.rows != a.cells() || b.features.rows != b.cells() || a.features.cols != b.features.cols) {
    throw Error(Errc::kShapeMismatch, "grids must be embedded before matching");
  }
  auto norms = [](const Matrix& f) {
    std::vector<double> n(f.rows);
    for (std::size_t i = 0; i < f.rows; ++i) {
      double s = 0.0;
      for (double v : f.row(i)) s += v * v;
      n[i] = std::sqrt(s);
    }
    return n;
  };
  const auto na = norms(a.features), nb = norms(b.features);
  std::vector<PatchMatch> out;
  for (std::size_t i = 0; i < a.cells(); ++i) {
    if (!a.valid[i] || na[i] == 0.0) continue;
    const auto fa = a.features.row(i);
    for (std::size_t j = 0; j < b.cells(); ++j) {
      if (!b.valid[j] || nb[j] == 0.0) continue;
      const auto fb = b.features.row(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < fa.size(); ++c) dot += fa[c] * fb[c];
      const double s = dot / (na[i] * nb[j]);
      if (s >= threshold) out.push_back({i, j, s});
    }
  }
  return out;
}

std::vector<PatchMatch> continuity_filter(std::span<const PatchMatch> pairs, int grid_w, int grid_h,
                                          const ContinuityConfig& config) {
  const std::size_t cells = static_cast<std::size_t>(grid_w) * grid_h;
  for (const auto& p : pairs) {
    if (p.a >= cells || p.b >= cells) throw Error(Errc::kOutOfBounds, "match references a cell outside the grid");
  }
  std::vector<PatchMatch> kept(pairs.begin(), pairs.end());
  if (!config.enabled) return kept;

  if (config.mutual_best) {
    constexpr std::size_t kNone = SIZE_MAX;
    std::vector<std::size_t> best_for_a(cells, kNone), best_for_b(cells, kNone);
    auto better = [&](std::size_t cand, std::size_t cur, bool by_b) {
      if (cur == kNone) return true;
      if (kept[cand].score != kept[cur].score) return kept[cand].score > kept[cur].score;
      return by_b ? kept[cand].b < kept[cur].b : kept[cand].a < kept[cur].a;
    };
    for (std::size_t k = 0; k < kept.size(); ++k) {
      if (better(k, best_for_a[kept[k].a], true)) best_for_a[kept[k].a] = k;
      if (better(k, best_for_b[kept[k].b], false)) best_for_b[kept[k].b] = k;
    }
    std::vector<PatchMatch> mutual;
    for (std::size_t k = 0; k < kept.size(); ++k) {
      if (best_for_a[kept[k].a] == k && best_for_b[kept[k].b] == k) mutual.push_back(kept[k]);
    }
    kept = std::move(mutual);
  }

  // Drop the worst offender and re-evaluate until every pair agrees with its
  // neighborhood. Removing one at a time keeps a single outlier from dragging
  // a small neighborhood's median onto its inlier neighbors.
  auto gx = [&](std::size_t c) { return static_cast<int>(c % static_cast<std::size_t>(grid_w)); };
  auto gy = [&](std::size_t c) { return static_cast<int>(c / static_cast<std::size_t>(grid_w)); };
  for (;;) {
    double worst = config.max_deviation;
    std::size_t worst_k = SIZE_MAX;
    for (std::size_t k = 0; k < kept.size(); ++k) {
      std::vector<double> dx, dy;
      for (std::size_t q = 0; q < kept.size(); ++q) {
        const int ox = gx(kept[q].a) - gx(kept[k].a), oy = gy(kept[q].a) - gy(kept[k].a);
        if (std::max(std::abs(ox), std::abs(oy)) != 1) continue;
        dx.push_back(gx(kept[q].b) - gx(kept[q].a));
        dy.push_back(gy(kept[q].b) - gy(kept[q].a));
      }
      if (dx.empty()) continue;
      const double ddx = gx(kept[k].b) - gx(kept[k].a) - median(dx);
      const double ddy = gy(kept[k].b) - gy(kept[k].a) - median(dy);
      const double dev = std::max(std::abs(ddx), std::abs(ddy));
      if (dev > worst) worst = dev, worst_k = k;
    }
    if (worst_k == SIZE_MAX) break;
    kept.erase(kept.begin() + static_cast<std::ptrdiff_t>(worst_k));
  }
  return kept;
}

}  // namespace vsap
