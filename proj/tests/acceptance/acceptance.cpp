// Acceptance run: one PASS/FAIL line per criterion with the measured value,
// its tolerance and the runtime.
//
// Exit status is nonzero when a correctness check fails. Empirical claims
// (criteria 5, 6, 8 and the ordering half of 2) are reported but only
// affect the exit status under --strict.

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <Eigen/Geometry>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "vsap/cli.hpp"
#include "vsap/geometry.hpp"
#include "vsap/io.hpp"
#include "vsap/kernels.hpp"
#include "vsap/objective.hpp"
#include "vsap/rng.hpp"
#include "vsap/tasks.hpp"
#include "vsap/trainer.hpp"

using namespace vsap;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  // Verdict on the implementation-correctness part alone, where a criterion
  // also bundles an empirical claim.
  std::optional<bool> correctness;

  Outcome() = default;
  Outcome(bool p, std::string d, std::optional<bool> c = std::nullopt)
      : pass(p), detail(std::move(d)), correctness(c) {}
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int worker_threads() {
  return static_cast<int>(std::clamp(std::thread::hardware_concurrency(), 1u, 8u));
}

// Redirects stdout and stderr to /dev/null for its lifetime, so the report
// stays one line per criterion.
class Silence {
 public:
  Silence() {
    flush();
    out_ = ::dup(1);
    err_ = ::dup(2);
    const int null = ::open("/dev/null", O_WRONLY);
    ::dup2(null, 1);
    ::dup2(null, 2);
    ::close(null);
  }
  ~Silence() {
    flush();
    ::dup2(out_, 1);
    ::dup2(err_, 2);
    ::close(out_);
    ::close(err_);
  }
  Silence(const Silence&) = delete;
  Silence& operator=(const Silence&) = delete;

 private:
  static void flush() {
    std::cout.flush();
    std::cerr.flush();
    std::fflush(stdout);
    std::fflush(stderr);
  }
  int out_ = -1, err_ = -1;
};

// ---------------------------------------------------------------------------
// Oracles

/// AP by counting, for every positive pair, the universe pairs scored above
/// it (ties count half).
double brute_exact_ap(const Matrix& s, const MaskPair& mk) {
  double total = 0.0, count = 0.0;
  for (std::size_t p = 0; p < s.data.size(); ++p) {
    if (!mk.positive[p]) continue;
    double above_pos = 0.0, above_all = 0.0;
    for (std::size_t q = 0; q < s.data.size(); ++q) {
      if (q == p || !mk.universe[q]) continue;
      const double w = s.data[q] > s.data[p] ? 1.0 : (s.data[q] == s.data[p] ? 0.5 : 0.0);
      above_all += w;
      above_pos += mk.positive[q] * w;
    }
    total += (1.0 + above_pos) / (1.0 + above_all);
    count += 1.0;
  }
  return total / count;
}

MaskPair random_masks(Rng& rng, std::size_t n, std::size_t m) {
  MaskPair mk;
  mk.rows = n;
  mk.cols = m;
  mk.positive.assign(n * m, 0);
  mk.universe.assign(n * m, 0);
  for (std::size_t k = 0; k < n * m; ++k) {
    const double u = rng.uniform();
    mk.positive[k] = u < 0.25;
    mk.universe[k] = u < 0.65;
  }
  const std::size_t k = rng.below(n * m);
  mk.positive[k] = mk.universe[k] = 1;
  return mk;
}

Matrix random_scores(Rng& rng, std::size_t n, std::size_t m) {
  Matrix s(n, m);
  for (double& v : s.data) v = rng.uniform(-1.0, 1.0);
  return s;
}

// ---------------------------------------------------------------------------
// 1. End-to-end gradient

Outcome gradient_correctness() {
  Rng rng(101);
  const std::size_t d = 48;  // 4x4x3 patches keep full-parameter differencing cheap
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng.below(31), m = 1 + rng.below(4), c = 2 + rng.below(15);
    EncoderState state = init_encoder(rng.next_u64(), {d, 16, 16, c}, t % 3 == 2 ? Activation::kSoftplus : Activation::kTanh);
    Matrix patches(n, d);
    for (double& v : patches.data) v = rng.uniform(0.0, 1.0);
    MaskPair mk = random_masks(rng, n, m);
    std::vector<TentativeLandmark> lms(m);
    for (std::size_t j = 0; j < m; ++j) {
      std::vector<std::size_t> pos;
      for (std::size_t i = 0; i < n; ++i) {
        if (mk.pos(i, j)) pos.push_back(i);
      }
      if (pos.empty()) {
        const std::size_t i = rng.below(n);
        mk.positive[i * m + j] = mk.universe[i * m + j] = 1;
        pos.push_back(i);
      }
      if (t % 2) {
        for (std::size_t i : pos) lms[j].embedding.sources.push_back({i, 1.0 / double(n)});
      } else {
        lms[j].embedding.sources.push_back({pos[rng.below(pos.size())], 1.0});
      }
    }
    const ObjectiveOptions opt{0.1};
    const auto r = objective_and_param_grad(state, patches, lms, mk, opt);
    const double h = 1e-5;
    for (std::size_t k = 0; k < state.params.size(); ++k) {
      const double keep = state.params[k];
      state.params[k] = keep + h;
      const double fp = objective_and_param_grad(state, patches, lms, mk, opt, false).objective;
      state.params[k] = keep - h;
      const double fm = objective_and_param_grad(state, patches, lms, mk, opt, false).objective;
      state.params[k] = keep;
      const double fd = (fp - fm) / (2 * h);
      const double g = r.param_grad[k];
      worst = std::max(worst, std::fabs(fd - g) / std::max(1e-6, std::max(std::fabs(fd), std::fabs(g))));
    }
  }
  return {worst < 1e-4, fmt("max relative error %.3g (tol 1e-4, floor 1e-6)", worst)};
}

// ---------------------------------------------------------------------------
// 2. Small-temperature limit

Outcome limit_correctness() {
  Rng rng(102);
  double worst = 0.0, worst_order = 0.0;
  int ordered = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.below(31), m = 1 + rng.below(4);
    const Matrix s = random_scores(rng, n, m);  // continuous draws: tie-free
    const MaskPair mk = random_masks(rng, n, m);
    const double exact = brute_exact_ap(s, mk);
    worst = std::max(worst, std::fabs(vectorized_smooth_ap(s, mk, {1e-6}) - exact));
    const double smooth = vectorized_smooth_ap(s, mk, {0.01});
    ordered += exact >= smooth;
    worst_order = std::max(worst_order, smooth - exact);
  }
  // The ordering is an empirical claim, not a property of the relaxation: a
  // negative scored just above a positive costs a full rank in exact AP but
  // about half a rank in smooth AP.
  return {worst < 1e-3 && ordered == 200,
          fmt("max |smooth(1e-6) - exact| %.3g (tol 1e-3); exact >= smooth(0.01) on %d/200 (worst excess %.3g)",
              worst, ordered, worst_order),
          worst < 1e-3};
}

// ---------------------------------------------------------------------------
// 3. Mask laws

PatchBatch point_batch(Rng& rng, std::size_t n, int envs) {
  PatchBatch b;
  for (std::size_t i = 0; i < n; ++i) {
    const auto env = static_cast<EnvId>(rng.below(static_cast<std::size_t>(envs)));
    b.points.push_back({{rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 2.5)}, env});
    b.view_ids.push_back(0);
    b.view_envs.push_back(env);
    b.grid_x.push_back(0);
    b.grid_y.push_back(0);
    b.semantic.push_back(0);
    b.instance.push_back(0);
  }
  b.pixels = Matrix(n, 3);
  b.num_views = 1;
  return b;
}

Outcome mask_laws() {
  Rng rng(103);
  const double inf = std::numeric_limits<double>::infinity();
  std::size_t violations = 0, checked = 0;
  for (int t = 0; t < 1000; ++t) {
    const bool single_env = t % 4 == 0;
    const PatchBatch batch = point_batch(rng, 10 + rng.below(50), single_env ? 1 : 3);
    std::vector<LandmarkPosition> lm, wide;
    const std::size_t m = 1 + rng.below(8);
    for (std::size_t j = 0; j < m; ++j) {
      const double r = rng.uniform(0.05, 0.8);
      lm.push_back({batch.points[rng.below(batch.size())], r, 0});
      wide.push_back({lm.back().position, r * rng.uniform(1.0, 3.0), 0});
    }
    const double kappa = rng.uniform(1.5, 5.0);
    const auto mk = build_masks(batch, std::span<const LandmarkPosition>(lm), kappa);
    const auto big_kappa = build_masks(batch, std::span<const LandmarkPosition>(lm), kappa * 2);
    const auto big_rho = build_masks(batch, std::span<const LandmarkPosition>(wide), kappa);
    const auto unbounded = build_masks(batch, std::span<const LandmarkPosition>(lm), inf);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const bool same = batch.environment(i) == lm[j].position.environment;
        const double dist = (batch.points[i].xyz - lm[j].position.xyz).norm();
        bool ok = mk.pos(i, j) == (same && dist <= lm[j].radius);
        ok = ok && mk.uni(i, j) == (same && dist <= kappa * lm[j].radius);
        ok = ok && (!mk.pos(i, j) || mk.uni(i, j));
        ok = ok && (same || (!mk.pos(i, j) && !mk.uni(i, j) && !unbounded.uni(i, j)));
        ok = ok && (!mk.pos(i, j) || big_rho.pos(i, j)) && (!mk.uni(i, j) || big_rho.uni(i, j));
        ok = ok && big_kappa.pos(i, j) == mk.pos(i, j) && (!mk.uni(i, j) || big_kappa.uni(i, j));
        ok = ok && unbounded.uni(i, j) == same;
        if (single_env) ok = ok && unbounded.uni(i, j);
        violations += !ok;
        ++checked;
      }
    }
  }
  return {violations == 0, fmt("%zu violations in %zu pair checks", violations, checked)};
}

// ---------------------------------------------------------------------------
// 4. Don't-care invariance

Outcome dont_care_invariance() {
  Rng rng(104);
  std::size_t value_changes = 0, grad_changes = 0, nonzero_dont_care = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(31), m = 1 + rng.below(4);
    const Matrix s = random_scores(rng, n, m);
    const MaskPair mk = random_masks(rng, n, m);
    Matrix s2 = s;
    for (std::size_t k = 0; k < s.data.size(); ++k) {
      if (!mk.universe[k]) s2.data[k] = rng.uniform(-1.0, 1.0);
    }
    const auto a = vectorized_smooth_ap_with_grad(s, mk), b = vectorized_smooth_ap_with_grad(s2, mk);
    value_changes += a.value != b.value;
    for (std::size_t k = 0; k < s.data.size(); ++k) {
      grad_changes += a.grad.data[k] != b.grad.data[k];
      nonzero_dont_care += !mk.universe[k] && a.grad.data[k] != 0.0;
    }
  }
  return {value_changes == 0 && grad_changes == 0 && nonzero_dont_care == 0,
          fmt("value changes %zu, gradient entry changes %zu, nonzero don't-care gradients %zu (all must be 0)",
              value_changes, grad_changes, nonzero_dont_care)};
}

// ---------------------------------------------------------------------------
// Benchmark runs shared by 5, 6 and 8

struct SeedRun {
  std::uint64_t seed = 0;
  ordered_json config;
  Dataset dataset;
  EncoderState random;
  EncoderState trained;
  std::optional<EncoderState> trained_unbounded;  // kappa = inf
};

ordered_json benchmark_config(std::uint64_t seed) {
  ordered_json c = cli::default_config();
  c["seed"] = seed;
  c["threads"] = worker_threads();
  return c;
}

std::vector<SeedRun>& benchmark_runs() {
  static std::vector<SeedRun> runs = [] {
    std::vector<SeedRun> out;
    for (std::uint64_t seed : {1, 2, 3}) {
      SeedRun r;
      r.seed = seed;
      r.config = benchmark_config(seed);
      r.dataset = generate_dataset(cli::generate_spec(r.config));
      TrainConfig tc = cli::train_config(r.config);
      r.trained = train(tc, r.dataset).checkpoint.encoder;
      tc.epochs = 0;
      r.random = train(tc, r.dataset).checkpoint.encoder;
      out.push_back(std::move(r));
    }
    return out;
  }();
  return runs;
}

double val_exact_ap(const SeedRun& r, const EncoderState& enc) {
  return eval_retrieval(encoder_embedder(enc), r.dataset, r.dataset.split.val, cli::retrieval_spec(r.config)).exact_ap;
}

Outcome training_efficacy() {
  std::string detail;
  bool all = true;
  for (const SeedRun& r : benchmark_runs()) {
    const double trained = val_exact_ap(r, r.trained), random = val_exact_ap(r, r.random);
    all = all && trained >= 2.0 * random;
    detail += fmt("seed %llu: trained %.4f vs random %.4f (ratio %.3f); ", static_cast<unsigned long long>(r.seed),
                  trained, random, trained / random);
  }
  return {all, detail + "need ratio >= 2 on every seed"};
}

Outcome reusability_trend() {
  std::string detail;
  int wins = 0;
  for (SeedRun& r : benchmark_runs()) {
    TrainConfig tc = cli::train_config(r.config);
    tc.kappa = std::numeric_limits<double>::infinity();
    r.trained_unbounded = train(tc, r.dataset).checkpoint.encoder;
    const double bounded = val_exact_ap(r, r.trained), unbounded = val_exact_ap(r, *r.trained_unbounded);
    wins += bounded > unbounded;
    detail += fmt("seed %llu: kappa=3 %.4f vs kappa=inf %.4f; ", static_cast<unsigned long long>(r.seed), bounded,
                  unbounded);
  }
  return {wins >= 2, detail + fmt("kappa=3 better on %d/3 (need >= 2)", wins)};
}

// ---------------------------------------------------------------------------
// 7. Pose solver

const Intrinsics kIntr{500.0, 500.0, 320.0, 240.0, 640, 480};

struct Scenario {
  Pose gt;
  std::vector<Correspondence> pairs;
};

Scenario make_scenario(Rng& rng, std::size_t count, double outlier_rate) {
  Scenario s;
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  Eigen::Vector3d t(rng.normal(), rng.normal(), rng.normal());
  s.gt = {Eigen::AngleAxisd(rng.uniform(0.05, 0.5), axis.normalized()).toRotationMatrix(),
          t.normalized() * rng.uniform(0.3, 1.5)};
  while (s.pairs.size() < count) {
    const Eigen::Vector2d pb(rng.uniform(0, 640), rng.uniform(0, 480));
    const double z = rng.uniform(2.0, 8.0);
    const Eigen::Vector3d xb((pb.x() - kIntr.cx) / kIntr.fx * z, (pb.y() - kIntr.cy) / kIntr.fy * z, z);
    const Eigen::Vector3d xa = s.gt.apply(xb);
    if (xa.z() <= 0.1) continue;
    const Eigen::Vector2d pa(kIntr.fx * xa.x() / xa.z() + kIntr.cx, kIntr.fy * xa.y() / xa.z() + kIntr.cy);
    if (pa.x() < 0 || pa.x() >= 640 || pa.y() < 0 || pa.y() >= 480) continue;
    s.pairs.push_back({pa, pb, rng.uniform(0.7, 1.0)});
  }
  for (auto& p : s.pairs) {
    if (rng.uniform() < outlier_rate) p.pixel_b = {rng.uniform(0, 640), rng.uniform(0, 480)};
  }
  return s;
}

Outcome pose_solver() {
  Rng rng(107);
  double worst_rot = 0.0, worst_dir = 0.0;
  for (int t = 0; t < 20; ++t) {
    const auto s = make_scenario(rng, 60, 0.0);
    auto r = estimate_relative_pose(s.pairs, kIntr, kIntr, s.gt.translation.norm());
    score_pose(r, s.gt);
    worst_rot = std::max(worst_rot, r.rotation_error_deg);
    worst_dir = std::max(worst_dir, direction_angle_deg(r.translation, s.gt.translation));
  }
  int good = 0;
  for (int t = 0; t < 100; ++t) {
    const auto s = make_scenario(rng, 100, 0.3);
    RansacConfig cfg;
    cfg.seed = 5000 + t;
    auto r = estimate_relative_pose(s.pairs, kIntr, kIntr, s.gt.translation.norm(), cfg);
    score_pose(r, s.gt);
    good += r.rotation_error_deg < 0.5;
  }
  return {worst_rot < 0.1 && worst_dir < 0.1 && good >= 95,
          fmt("noiseless worst rotation %.2g deg, direction %.2g deg (tol 0.1); 30%% outliers: %d/100 within 0.5 deg "
              "(need >= 95)",
              worst_rot, worst_dir, good)};
}

// ---------------------------------------------------------------------------
// 8. Pose benchmark analogue

double summary_discrepancy(const PoseBenchmark& b) {
  std::vector<double> tr, rot;
  double le1 = 0, le30 = 0;
  for (const auto& r : b.pairs) {
    tr.push_back(r.pose.translation_error_m);
    rot.push_back(r.pose.rotation_error_deg);
    le1 += r.pose.translation_error_m <= 1.0;
    le30 += r.pose.rotation_error_deg <= 30.0;
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : (v[v.size() / 2 - 1] + v[v.size() / 2]) / 2;
  };
  const double n = double(b.pairs.size());
  const auto& s = b.summary;
  return std::max({std::fabs(s.median_translation_m - median(tr)), std::fabs(s.median_rotation_deg - median(rot)),
                   std::fabs(s.mean_translation_m - std::accumulate(tr.begin(), tr.end(), 0.0) / n),
                   std::fabs(s.mean_rotation_deg - std::accumulate(rot.begin(), rot.end(), 0.0) / n),
                   std::fabs(s.fraction_translation_le_1m - le1 / n),
                   std::fabs(s.fraction_rotation_le_30deg - le30 / n)});
}

Outcome pose_benchmark() {
  const SeedRun& r = benchmark_runs().front();
  const auto& e = r.config.at("eval");
  const auto pairs = select_pose_pairs(r.dataset, r.dataset.split.val, 100, cli::eval_seed(r.config),
                                       e.at("min_overlap").get<double>(), e.at("max_overlap").get<double>());
  const auto spec = cli::pose_benchmark_spec(r.config);
  PoseBenchmark trained, random;
  {
    const Silence quiet;  // per-pair chirality warnings are counted below instead
    trained = eval_pose_benchmark(encoder_embedder(r.trained), r.dataset, pairs, spec);
    random = eval_pose_benchmark(encoder_embedder(r.random), r.dataset, pairs, spec);
  }
  auto degenerate = [](const PoseBenchmark& b) {
    return std::count_if(b.pairs.begin(), b.pairs.end(), [](const PosePairResult& p) { return p.pose.degenerate; });
  };
  const double disc = std::max(summary_discrepancy(trained), summary_discrepancy(random));
  const double ft = trained.summary.fraction_rotation_le_30deg, fr = random.summary.fraction_rotation_le_30deg;
  return {pairs.size() == 100 && ft > fr && disc <= 1e-12,
          fmt("%zu pairs; rotation <= 30 deg: trained %.2f vs random %.2f (need strictly greater); failures %zu vs "
              "%zu; ambiguous chirality %td vs %td; summary discrepancy %.2g (tol 1e-12)",
              pairs.size(), ft, fr, trained.summary.failures, random.summary.failures, degenerate(trained),
              degenerate(random), disc)};
}

// ---------------------------------------------------------------------------
// 9. Segmentation metrics

struct SegReference {
  double map = 0, miou = 0, jaccard = 0, jaccard_paper = 0;
};

SegReference seg_brute_force(const std::vector<std::uint32_t>& gt, const std::vector<std::uint32_t>& pred,
                             const Matrix& scores, const std::vector<std::uint32_t>& ids,
                             const std::vector<std::uint8_t>& include) {
  std::set<std::uint32_t> classes;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (include[i]) classes.insert(gt[i]);
  }
  SegReference r;
  double tp_all = 0, err_all = 0;
  for (auto cls : classes) {
    const auto it = std::find(ids.begin(), ids.end(), cls);
    auto score = [&](std::size_t i) { return it == ids.end() ? 0.0 : scores(i, std::size_t(it - ids.begin())); };
    double ap = 0, npos = 0, tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (!include[i]) continue;
      tp += gt[i] == cls && pred[i] == cls;
      fp += gt[i] != cls && pred[i] == cls;
      fn += gt[i] == cls && pred[i] != cls;
      if (gt[i] != cls) continue;
      double above = 0, above_pos = 0;
      for (std::size_t k = 0; k < gt.size(); ++k) {
        if (!include[k] || k == i) continue;
        const double w = score(k) > score(i) ? 1.0 : score(k) == score(i) ? 0.5 : 0.0;
        above += w;
        above_pos += (gt[k] == cls) * w;
      }
      ap += (1 + above_pos) / (1 + above);
      npos += 1;
    }
    r.map += ap / npos;
    r.miou += tp / (tp + fp + fn);
    tp_all += tp;
    err_all += fp + fn;
  }
  r.map /= double(classes.size());
  r.miou /= double(classes.size());
  r.jaccard = tp_all / (tp_all + err_all);
  r.jaccard_paper = err_all == 0 ? 1.0 : tp_all / err_all;
  return r;
}

Outcome segmentation_correctness() {
  Rng rng(109);
  const std::vector<std::uint32_t> ids{1, 2, 3, 100, 104};
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t w = 4 + rng.below(13), h = 4 + rng.below(13), n = w * h;
    std::vector<std::uint32_t> gt(n), pred(n);
    std::vector<std::uint8_t> include(n);
    Matrix scores(n, ids.size());
    for (std::size_t i = 0; i < n; ++i) {
      gt[i] = ids[rng.below(ids.size())];
      pred[i] = rng.uniform() < 0.6 ? gt[i] : ids[rng.below(ids.size())];
      include[i] = rng.uniform() < 0.85;
      for (std::size_t c = 0; c < ids.size(); ++c) {
        scores(i, c) = t % 2 ? std::round(rng.uniform() * 4) / 4 : rng.uniform();
      }
    }
    include[0] = 1;
    const auto got = segmentation_metrics(gt, pred, scores, ids, include);
    const auto ref = seg_brute_force(gt, pred, scores, ids, include);
    worst = std::max({worst, std::fabs(got.map - ref.map), std::fabs(got.miou - ref.miou),
                      std::fabs(got.jaccard - ref.jaccard), std::fabs(got.jaccard_paper - ref.jaccard_paper)});
  }
  Rng prng(110);
  Matrix x(300, 10);
  for (double& v : x.data) v = prng.normal();
  std::vector<std::uint32_t> y(300);
  for (std::size_t i = 0; i < 300; ++i) y[i] = x(i, 0) + 0.5 * x(i, 1) > 0 ? 1 : (x(i, 2) > 0 ? 2 : 3);
  const auto probe = train_probe(
      x, y, {.optimizer = ProbeOptimizer::kGradientDescent, .learning_rate = 0.1, .max_steps = 500, .tolerance = 0.0});
  std::size_t increases = 0;
  for (std::size_t k = 1; k < probe.loss_history.size(); ++k) {
    increases += probe.loss_history[k] > probe.loss_history[k - 1];
  }
  return {worst <= 1e-9 && increases == 0 && probe.loss_history.size() > 1,
          fmt("max metric deviation %.2g (tol 1e-9); probe loss increases %zu over %zu GD steps (%.4f -> %.4f)", worst,
              increases, probe.loss_history.size(), probe.loss_history.front(), probe.loss_history.back())};
}

// ---------------------------------------------------------------------------
// 10. CLI determinism

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "vsap");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  const Silence quiet;
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = io::read_text(e.path());
  }
  return out;
}

Outcome cli_determinism() {
  const fs::path root = fs::temp_directory_path() / ("vsap_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  ordered_json cfg = ordered_json::parse(R"({
    "seed": 4, "threads": 2,
    "dataset": {"num_train_envs": 3, "num_val_envs": 2, "views_per_env": 12, "width": 32, "height": 32},
    "train": {"batch_views": 8, "envs_per_batch": 2, "landmarks": 16, "epochs": 2, "checkpoint_every": 2},
    "eval": {"num_batches": 2, "probe_steps": 100, "probe_views_per_env": 4, "pose_pairs": 5,
             "min_overlap": 0.0, "max_overlap": 1.0, "coseg_gx": 1, "coseg_gy": 1}
  })");
  const std::string cfg_path = (root / "config.json").string();
  std::ofstream(cfg_path) << cfg.dump(2);
  std::vector<std::string> mismatches;
  int bad_exit = 0;
  auto twice = [&](const std::string& name, std::vector<std::string> args) {
    for (const char* k : {"a", "b"}) {
      auto full = args;
      full.insert(full.end(), {"-c", cfg_path, "--out", (root / (name + "_" + k)).string()});
      bad_exit += run_cli(full) != cli::kExitOk;
    }
    // config.json records the output path, which differs by construction.
    auto a = tree(root / (name + "_a")), b = tree(root / (name + "_b"));
    a.erase("config.json");
    b.erase("config.json");
    if (a != b) mismatches.push_back(name);
  };
  twice("generate", {"generate"});
  const std::string ds = (root / "generate_a").string();
  twice("train", {"train", "--dataset", ds});
  // Interrupted twice, then resumed to completion.
  const std::string part = (root / "resumed").string();
  bad_exit += run_cli({"train", "-c", cfg_path, "--dataset", ds, "--out", part, "--max-steps", "1"}) != 0;
  bad_exit += run_cli({"train", "-c", cfg_path, "--dataset", ds, "--out", part, "--max-steps", "2"}) != 0;
  bad_exit += run_cli({"train", "-c", cfg_path, "--dataset", ds, "--out", part}) != 0;
  auto resumed = tree(part), full = tree(root / "train_a");
  resumed.erase("config.json");
  full.erase("config.json");
  if (resumed != full) mismatches.push_back("train-resume");
  const std::string ckpt = (root / "train_a" / "checkpoint.bin").string();
  for (const char* cmd : {"eval-retrieval", "eval-segment", "eval-pose", "coseg"}) {
    twice(cmd, {cmd, "--dataset", ds, "--checkpoint", ckpt});
  }
  fs::remove_all(root);
  std::string which;
  for (const auto& m : mismatches) which += " " + m;
  return {mismatches.empty() && bad_exit == 0,
          fmt("%zu differing outputs%s; %d nonzero exits", mismatches.size(), which.c_str(), bad_exit)};
}

struct Criterion {
  int id;
  const char* name;
  bool empirical;
  double budget_s;  // 0: no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vsap acceptance criteria"};
  bool strict = false;
  std::vector<int> only;
  app.add_flag("--strict", strict, "Benchmark criteria also decide the exit status");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "gradient correctness", false, 30, gradient_correctness},
      {2, "limit correctness", false, 30, limit_correctness},
      {3, "mask laws", false, 10, mask_laws},
      {4, "don't-care invariance", false, 0, dont_care_invariance},
      {5, "training efficacy", true, 20 * 60, training_efficacy},
      {6, "reusability trend", true, 40 * 60, reusability_trend},
      {7, "pose solver", false, 60, pose_solver},
      {8, "pose benchmark", true, 0, pose_benchmark},
      {9, "segmentation metrics", false, 60, segmentation_correctness},
      {10, "determinism", false, 0, cli_determinism},
  };
  std::printf("kernels: %s, threads for benchmark runs: %d\n", kernels::active().name, worker_threads());
  int hard_failures = 0, failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.budget_s == 0 || secs < c.budget_s;
    const bool pass = o.pass && in_time;
    std::string timing = fmt("%.1f s", secs);
    if (c.budget_s > 0) timing += fmt(" (budget %.0f s)", c.budget_s);
    std::printf("%s %2d %s: %s; %s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), timing.c_str());
    std::fflush(stdout);
    failures += !pass;
    const bool correct = in_time && o.correctness.value_or(o.pass);
    hard_failures += strict ? !pass : (!c.empirical && !correct);
  }
  std::printf("%d failed (%d affecting the exit status)\n", failures, hard_failures);
  return hard_failures == 0 ? 0 : 1;
}
