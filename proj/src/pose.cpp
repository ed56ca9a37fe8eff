#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "vsap/error.hpp"
#include "vsap/parallel.hpp"
#include "vsap/rng.hpp"
#include "vsap/tasks.hpp"

namespace vsap {
namespace {

using Eigen::Matrix3d;
using Eigen::Vector3d;

// Similarity taking the dehomogenized points to zero mean and mean distance
// sqrt(2).
Matrix3d conditioning(std::span<const Vector3d> x) {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : x) mean += p.hnormalized();
  mean /= static_cast<double>(x.size());
  double dist = 0.0;
  for (const auto& p : x) dist += (p.hnormalized() - mean).norm();
  dist /= static_cast<double>(x.size());
  const double s = dist > 0.0 ? std::sqrt(2.0) / dist : 1.0;
  Matrix3d t;
  t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
  return t;
}

Matrix3d project_to_essential(const Matrix3d& e) {
  Eigen::JacobiSVD<Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal() * svd.matrixV().transpose();
}

Vector3d normalized_point(const Eigen::Vector2d& px, const Intrinsics& k) {
  return {(px.x() - k.cx) / k.fx, (px.y() - k.cy) / k.fy, 1.0};
}

struct Score {
  std::size_t inliers = 0;
  double error = INFINITY;  // summed truncated Sampson distance
  bool better_than(const Score& o) const { return inliers != o.inliers ? inliers > o.inliers : error < o.error; }
};

Score score_model(const Matrix3d& e, std::span<const Vector3d> xb, std::span<const Vector3d> xa, double thr,
                  std::vector<std::uint8_t>* mask) {
  Score s;
  s.error = 0.0;
  if (mask) mask->assign(xb.size(), 0);
  for (std::size_t i = 0; i < xb.size(); ++i) {
    const double d = sampson_distance(e, xb[i], xa[i]);
    if (d <= thr) {
      ++s.inliers;
      s.error += d;
      if (mask) (*mask)[i] = 1;
    } else {
      s.error += thr;
    }
  }
  return s;
}

}  // namespace

std::vector<Matrix3d> eight_point(std::span<const Vector3d> xb, std::span<const Vector3d> xa) {
  if (xb.size() != xa.size() || xb.size() < 8) throw Error(Errc::kInsufficientMatches, "eight-point needs 8 pairs");
  const Matrix3d tb = conditioning(xb), ta = conditioning(xa);
  Eigen::MatrixXd a(xb.size(), 9);
  for (std::size_t i = 0; i < xb.size(); ++i) {
    const Vector3d p = tb * (xb[i] / xb[i].z());
    const Vector3d q = ta * (xa[i] / xa[i].z());
    a.row(static_cast<Eigen::Index>(i)) << q.x() * p.x(), q.x() * p.y(), q.x(), q.y() * p.x(), q.y() * p.y(), q.y(),
        p.x(), p.y(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd v = svd.matrixV().col(8);
  Matrix3d en;
  en << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  const Matrix3d e = ta.transpose() * en * tb;
  if (!e.allFinite() || e.norm() == 0.0) return {};
  return {project_to_essential(e / e.norm())};
}

double sampson_distance(const Matrix3d& e, const Vector3d& xb, const Vector3d& xa) {
  const Vector3d ex = e * xb;
  const Vector3d etx = e.transpose() * xa;
  const double num = xa.dot(ex);
  const double den = ex.x() * ex.x() + ex.y() * ex.y() + etx.x() * etx.x() + etx.y() * etx.y();
  if (den <= 0.0) return num == 0.0 ? 0.0 : INFINITY;
  return std::abs(num) / std::sqrt(den);
}

std::vector<RelativeMotion> decompose_essential(const Matrix3d& e, std::span<const Vector3d> xb,
                                                std::span<const Vector3d> xa) {
  Eigen::JacobiSVD<Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3d u = svd.matrixU(), v = svd.matrixV();
  if (u.determinant() < 0) u = -u;
  if (v.determinant() < 0) v = -v;
  Matrix3d w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Matrix3d rs[2] = {u * w * v.transpose(), u * w.transpose() * v.transpose()};
  const Vector3d ts[2] = {u.col(2), -u.col(2)};
  std::vector<RelativeMotion> out;
  for (const auto& r : rs) {
    for (const auto& t : ts) {
      RelativeMotion m{r, t.normalized(), 0};
      for (std::size_t i = 0; i < xb.size(); ++i) {
        // lambda_a * xa = lambda_b * R xb + t, least squares in (lambda_a, lambda_b).
        Eigen::Matrix<double, 3, 2> a;
        a.col(0) = xa[i];
        a.col(1) = -(r * xb[i]);
        const Eigen::Vector2d lam = a.colPivHouseholderQr().solve(t);
        if (lam(0) > 0.0 && lam(1) > 0.0) ++m.in_front;
      }
      out.push_back(m);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& l, const auto& r) { return l.in_front > r.in_front; });
  return out;
}

PoseResult estimate_relative_pose(std::span<const Correspondence> pairs, const Intrinsics& intr_a,
                                  const Intrinsics& intr_b, double gt_translation_norm, const RansacConfig& config) {
  if (config.sample_size < 1 || !config.solver) throw Error(Errc::kInvalidArgument, "bad RANSAC configuration");
  if (pairs.size() < config.sample_size) {
    throw Error(Errc::kInsufficientMatches, "need at least " + std::to_string(config.sample_size) + " matches, got " +
                                                std::to_string(pairs.size()));
  }
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return pairs[l].score > pairs[r].score; });
  if (order.size() > config.top_pairs) order.resize(config.top_pairs);
  if (order.size() < config.sample_size) throw Error(Errc::kInsufficientMatches, "top_pairs below the sample size");

  const std::size_t n = order.size();
  std::vector<Vector3d> xa(n), xb(n);
  for (std::size_t k = 0; k < n; ++k) {
    xa[k] = normalized_point(pairs[order[k]].pixel_a, intr_a);
    xb[k] = normalized_point(pairs[order[k]].pixel_b, intr_b);
  }
  const double focal = 0.25 * (intr_a.fx + intr_a.fy + intr_b.fx + intr_b.fy);
  const double thr = config.inlier_threshold_px / focal;

  PoseResult result;
  Rng rng(config.seed);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<Vector3d> sb(config.sample_size), sa(config.sample_size);
  Matrix3d best_e = Matrix3d::Zero();
  Score best;
  best.error = INFINITY;
  bool have_model = false;
  double needed = config.max_iterations;
  std::size_t it = 0;
  for (; it < static_cast<std::size_t>(config.max_iterations) && static_cast<double>(it) < needed; ++it) {
    // Partial Fisher-Yates draw of a minimal sample.
    for (std::size_t k = 0; k < config.sample_size; ++k) {
      std::swap(idx[k], idx[k + static_cast<std::size_t>(rng.below(n - k))]);
      sb[k] = xb[idx[k]];
      sa[k] = xa[idx[k]];
    }
    for (const Matrix3d& e : config.solver(sb, sa)) {
      const Score s = score_model(e, xb, xa, thr, nullptr);
      if (!have_model || s.better_than(best)) {
        best = s;
        best_e = e;
        have_model = true;
        const double w = static_cast<double>(s.inliers) / static_cast<double>(n);
        const double miss = 1.0 - std::pow(w, static_cast<double>(config.sample_size));
        if (miss <= 0.0) {
          needed = 0.0;
        } else if (miss < 1.0) {
          needed = std::min<double>(config.max_iterations, std::ceil(std::log(1.0 - config.confidence) / std::log(miss)));
        }
      }
    }
  }
  result.iterations = it;
  result.near_zero_baseline = gt_translation_norm < 1e-9;
  if (!have_model) {
    result.degenerate = true;
    std::cerr << "warning: no essential matrix could be fitted, returning identity\n";
    return result;
  }

  std::vector<std::uint8_t> mask;
  score_model(best_e, xb, xa, thr, &mask);
  std::vector<Vector3d> ib, ia;
  for (std::size_t k = 0; k < n; ++k) {
    if (mask[k]) ib.push_back(xb[k]), ia.push_back(xa[k]);
  }
  // Least-squares refit on the consensus set, kept only if it does not lose support.
  if (ib.size() >= 8) {
    for (const Matrix3d& e : eight_point(ib, ia)) {
      const Score s = score_model(e, xb, xa, thr, nullptr);
      if (!best.better_than(s)) {
        best = s;
        best_e = e;
        score_model(best_e, xb, xa, thr, &mask);
        ib.clear();
        ia.clear();
        for (std::size_t k = 0; k < n; ++k) {
          if (mask[k]) ib.push_back(xb[k]), ia.push_back(xa[k]);
        }
      }
    }
  }
  result.inliers = best.inliers;
  const auto motions = decompose_essential(best_e, ib, ia);
  const RelativeMotion& m = motions.front();
  if (motions[1].in_front == m.in_front) {
    result.degenerate = true;
    std::cerr << "warning: chirality check is ambiguous (degenerate geometry)\n";
  }
  result.rotation = m.rotation;
  result.translation = m.translation * gt_translation_norm;
  return result;
}

void score_pose(PoseResult& result, const Pose& gt_b_to_a) {
  result.rotation_error_deg = rotation_angle_deg(result.rotation, gt_b_to_a.rotation);
  result.translation_error_m = (result.translation - gt_b_to_a.translation).norm();
}

double covisibility(const PosedView& a, const PosedView& b, int patch_size) {
  const PatchGrid g = make_grid(a, patch_size);
  std::size_t valid = 0, seen = 0;
  for (std::size_t cell = 0; cell < g.cells(); ++cell) {
    if (!g.valid[cell]) continue;
    ++valid;
    const Vector3d cam = b.pose.inverse().apply(g.points[cell].xyz);
    if (cam.z() <= 1e-6) continue;
    const Projection p = project(g.points[cell], b.intr, b.pose);
    if (!b.intr.contains(p.pixel)) continue;
    const double d = b.depth[b.index(static_cast<int>(p.pixel.x()), static_cast<int>(p.pixel.y()))];
    if (d > 0.0 && std::abs(d - p.depth) <= 0.05 * p.depth + 0.02) ++seen;
  }
  return valid ? static_cast<double>(seen) / static_cast<double>(valid) : 0.0;
}

std::vector<PosePair> select_pose_pairs(const Dataset& dataset, std::span<const EnvId> envs, std::size_t count,
                                        std::uint64_t seed, double min_overlap, double max_overlap) {
  std::vector<PosePair> candidates;
  for (EnvId e : envs) {
    const auto& views = dataset.env(e).views;
    for (std::size_t i = 0; i < views.size(); ++i) {
      for (std::size_t j = i + 1; j < views.size(); ++j) {
        candidates.push_back({e, views[i].view_id, views[j].view_id, 0.0});
      }
    }
  }
  Rng rng(derive_seed(seed, "pose-pairs"));
  rng.shuffle(candidates);
  auto find_view = [&](EnvId e, std::uint32_t id) -> const PosedView& {
    for (const auto& v : dataset.env(e).views) {
      if (v.view_id == id) return v;
    }
    throw Error(Errc::kOutOfBounds, "unknown view id");
  };
  std::vector<PosePair> out;
  for (auto& c : candidates) {
    if (out.size() >= count) break;
    c.overlap = covisibility(find_view(c.environment, c.view_a), find_view(c.environment, c.view_b),
                             dataset.spec.patch_size);
    if (c.overlap >= min_overlap && c.overlap <= max_overlap) out.push_back(c);
  }
  return out;
}

PoseSummary summarize_pose(std::span<const PosePairResult> results) {
  PoseSummary s;
  s.pairs = results.size();
  if (results.empty()) return s;
  std::vector<double> t, r;
  for (const auto& p : results) {
    t.push_back(p.pose.translation_error_m);
    r.push_back(p.pose.rotation_error_deg);
    s.failures += !p.success;
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  const double n = static_cast<double>(results.size());
  s.median_translation_m = median(t);
  s.median_rotation_deg = median(r);
  s.mean_translation_m = std::accumulate(t.begin(), t.end(), 0.0) / n;
  s.mean_rotation_deg = std::accumulate(r.begin(), r.end(), 0.0) / n;
  s.fraction_translation_le_1m = static_cast<double>(std::count_if(t.begin(), t.end(), [](double v) { return v <= 1.0; })) / n;
  s.fraction_rotation_le_30deg = static_cast<double>(std::count_if(r.begin(), r.end(), [](double v) { return v <= 30.0; })) / n;
  return s;
}

PoseBenchmark eval_pose_benchmark(const Embedder& embedder, const Dataset& dataset, std::span<const PosePair> pairs,
                                  const PoseBenchmarkSpec& spec) {
  PoseBenchmark bench;
  bench.pairs.resize(pairs.size());
  const int patch = dataset.spec.patch_size;
  parallel_for(pairs.size(), spec.threads, [&](std::size_t k) {
    const PosePair& pp = pairs[k];
    const PosedView* va = nullptr;
    const PosedView* vb = nullptr;
    for (const auto& v : dataset.env(pp.environment).views) {
      if (v.view_id == pp.view_a) va = &v;
      if (v.view_id == pp.view_b) vb = &v;
    }
    if (!va || !vb) throw Error(Errc::kOutOfBounds, "pose pair references an unknown view");
    PatchGrid ga = make_grid(*va, patch, dataset.normalization);
    PatchGrid gb = make_grid(*vb, patch, dataset.normalization);
    embed_grid(ga, embedder);
    embed_grid(gb, embedder);
    PosePairResult& out = bench.pairs[k];
    out.pair = pp;
    const auto raw = match_patches(ga, gb, spec.score_threshold);
    const auto kept = continuity_filter(raw, ga.grid_w, ga.grid_h, spec.continuity);
    out.raw_matches = raw.size();
    out.filtered_matches = kept.size();
    std::vector<Correspondence> corr;
    for (const auto& m : kept) corr.push_back({ga.cell_center(m.a), gb.cell_center(m.b), m.score});
    const Pose gt = relative_pose(va->pose, vb->pose);
    RansacConfig rc = spec.ransac;
    rc.seed = derive_seed(spec.ransac.seed, "pose-pair", k);
    try {
      out.pose = estimate_relative_pose(corr, va->intr, vb->intr, gt.translation.norm(), rc);
      score_pose(out.pose, gt);
      out.success = true;
    } catch (const Error& e) {
      if (e.code() != Errc::kInsufficientMatches) throw;
      out.success = false;
      out.pose = PoseResult{};
      out.pose.rotation_error_deg = 180.0;
      out.pose.translation_error_m = 2.0 * gt.translation.norm();
    }
  });
  bench.summary = summarize_pose(bench.pairs);
  return bench;
}

}  // namespace vsap
