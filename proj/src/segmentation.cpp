#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include "vsap/error.hpp"
#include "vsap/tasks.hpp"

namespace vsap {
namespace {

using InstanceMap = std::unordered_map<std::uint32_t, std::uint32_t>;

InstanceMap thing_labels(const Scene& scene) {
  InstanceMap m;
  for (const auto& p : scene.primitives) {
    if (p.semantic == SemanticClass::kObject && p.library_id >= 0) {
      m[p.instance_id] = kThingLabelBase + static_cast<std::uint32_t>(p.library_id);
    }
  }
  return m;
}

std::uint32_t label_of(const InstanceMap& things, std::uint32_t semantic, std::uint32_t instance) {
  if (semantic == static_cast<std::uint32_t>(SemanticClass::kObject)) {
    const auto it = things.find(instance);
    if (it == things.end()) throw Error(Errc::kInvalidArgument, "object pixel with unknown instance id");
    return it->second;
  }
  return semantic;
}

// Softmax rows of W x + b, written into `proba` (n x K).
void softmax_forward(const ProbeState& probe, const Matrix& x, Matrix& proba) {
  const std::size_t k = probe.num_classes();
  proba = Matrix(x.rows, k);
  for (std::size_t i = 0; i < x.rows; ++i) {
    auto xi = x.row(i);
    auto pi = proba.row(i);
    double mx = -INFINITY;
    for (std::size_t c = 0; c < k; ++c) {
      auto wc = probe.weights.row(c);
      double z = probe.bias[c];
      for (std::size_t d = 0; d < x.cols; ++d) z += wc[d] * xi[d];
      pi[c] = z;
      mx = std::max(mx, z);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += (pi[c] = std::exp(pi[c] - mx));
    for (std::size_t c = 0; c < k; ++c) pi[c] /= sum;
  }
}

struct Encoded {
  std::vector<std::size_t> rows;     // rows of the feature matrix that carry a known label
  std::vector<std::size_t> targets;  // class index per row
};

Encoded encode_labels(const ProbeState& probe, std::span<const std::uint32_t> labels) {
  std::unordered_map<std::uint32_t, std::size_t> index;
  for (std::size_t c = 0; c < probe.class_ids.size(); ++c) index[probe.class_ids[c]] = c;
  Encoded e;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it = index.find(labels[i]);
    if (it == index.end()) continue;
    e.rows.push_back(i);
    e.targets.push_back(it->second);
  }
  return e;
}

// Mean cross-entropy over encoded rows; optionally the gradient w.r.t.
// (weights, bias), stored as K x (c + 1).
double cross_entropy(const ProbeState& probe, const Matrix& x, const Encoded& enc, Matrix* grad) {
  Matrix proba;
  softmax_forward(probe, x, proba);
  const std::size_t k = probe.num_classes();
  if (grad) *grad = Matrix(k, x.cols + 1);
  double loss = 0.0;
  for (std::size_t r = 0; r < enc.rows.size(); ++r) {
    const std::size_t i = enc.rows[r];
    auto pi = proba.row(i);
    loss -= std::log(std::max(pi[enc.targets[r]], 1e-300));
    if (!grad) continue;
    auto xi = x.row(i);
    for (std::size_t c = 0; c < k; ++c) {
      const double d = pi[c] - (c == enc.targets[r] ? 1.0 : 0.0);
      auto gc = grad->row(c);
      for (std::size_t q = 0; q < x.cols; ++q) gc[q] += d * xi[q];
      gc[x.cols] += d;
    }
  }
  const double n = static_cast<double>(enc.rows.size());
  if (grad) {
    for (double& g : grad->data) g /= n;
  }
  return loss / n;
}

// Tie-aware one-vs-all AP of `positive` items ranked by `score` descending.
double ranking_ap(std::span<const double> score, std::span<const std::uint8_t> positive) {
  std::vector<std::size_t> order(score.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  double total = 0.0;
  std::size_t npos = 0, above_all = 0, above_pos = 0;
  for (std::size_t s = 0; s < order.size();) {
    std::size_t e = s;
    std::size_t group_pos = 0;
    while (e < order.size() && score[order[e]] == score[order[s]]) {
      group_pos += positive[order[e]];
      ++e;
    }
    const std::size_t group = e - s;
    if (group_pos) {
      const double num = 1.0 + above_pos + 0.5 * static_cast<double>(group_pos - 1);
      const double den = 1.0 + above_all + 0.5 * static_cast<double>(group - 1);
      total += static_cast<double>(group_pos) * num / den;
      npos += group_pos;
    }
    above_all += group;
    above_pos += group_pos;
    s = e;
  }
  return npos ? total / static_cast<double>(npos) : 0.0;
}

}  // namespace

std::uint32_t panoptic_label(const Scene& scene, std::uint32_t semantic, std::uint32_t instance) {
  if (semantic == static_cast<std::uint32_t>(SemanticClass::kObject)) {
    const Primitive* p = scene.find_instance(instance);
    if (!p || p->library_id < 0) throw Error(Errc::kInvalidArgument, "object pixel with unknown instance id");
    return kThingLabelBase + static_cast<std::uint32_t>(p->library_id);
  }
  return semantic;
}

bool is_thing_label(std::uint32_t label) { return label >= kThingLabelBase; }

std::vector<std::uint32_t> patch_labels(const PosedView& view, const Scene& scene, int patch_size) {
  if (patch_size < 1 || view.width % patch_size != 0 || view.height % patch_size != 0) {
    throw Error(Errc::kInvalidArgument, "patch size must divide the image dimensions");
  }
  const InstanceMap things = thing_labels(scene);
  const int gw = view.width / patch_size, gh = view.height / patch_size;
  std::vector<std::uint32_t> out(static_cast<std::size_t>(gw) * gh);
  std::map<std::uint32_t, int> counts;
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      counts.clear();
      for (int y = 0; y < patch_size; ++y) {
        for (int x = 0; x < patch_size; ++x) {
          const std::size_t px = view.index(gx * patch_size + x, gy * patch_size + y);
          ++counts[label_of(things, view.semantic[px], view.instance[px])];
        }
      }
      // std::map iterates ascending, so strict > keeps the lowest id on ties.
      std::uint32_t best = 0;
      int best_count = -1;
      for (const auto& [label, c] : counts) {
        if (c > best_count) best = label, best_count = c;
      }
      out[static_cast<std::size_t>(gy) * gw + gx] = best;
    }
  }
  return out;
}

Matrix ProbeState::predict_proba(const Matrix& features) const {
  if (features.cols != weights.cols) throw Error(Errc::kShapeMismatch, "feature width does not match the probe");
  Matrix p;
  softmax_forward(*this, features, p);
  return p;
}

double probe_loss(const ProbeState& probe, const Matrix& features, std::span<const std::uint32_t> labels) {
  const Encoded enc = encode_labels(probe, labels);
  if (enc.rows.empty()) throw Error(Errc::kInvalidArgument, "no labelled rows for the probe loss");
  return cross_entropy(probe, features, enc, nullptr);
}

ProbeTrainResult train_probe(const Matrix& features, std::span<const std::uint32_t> labels,
                             const ProbeTrainSpec& spec) {
  if (labels.size() != features.rows) throw Error(Errc::kShapeMismatch, "one label per feature row required");
  if (!(spec.learning_rate > 0.0) || spec.max_steps < 0) throw Error(Errc::kInvalidArgument, "bad probe schedule");
  std::set<std::uint32_t> present;
  for (auto l : labels) {
    if (l != 0) present.insert(l);
  }
  if (present.size() < 2) throw Error(Errc::kInvalidArgument, "probe needs at least two classes");

  ProbeTrainResult r;
  ProbeState& p = r.probe;
  p.class_ids.assign(present.begin(), present.end());
  const std::size_t k = p.class_ids.size(), c = features.cols;
  p.weights = Matrix(k, c);
  p.bias.assign(k, 0.0);
  const Encoded enc = encode_labels(p, labels);

  // Flat parameter view: K x (c + 1), weights then bias per class.
  std::vector<double> params(k * (c + 1), 0.0);
  OptimizerState opt = init_optimizer(params.size(), {spec.learning_rate});
  auto unpack = [&] {
    for (std::size_t q = 0; q < k; ++q) {
      std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(q * (c + 1)), c, p.weights.row(q).begin());
      p.bias[q] = params[q * (c + 1) + c];
    }
  };
  Matrix grad;
  double prev = INFINITY;
  for (int step = 0; step < spec.max_steps; ++step) {
    const double loss = cross_entropy(p, features, enc, &grad);
    r.loss_history.push_back(loss);
    if (std::isfinite(prev) && prev - loss <= spec.tolerance * std::max(1.0, std::abs(prev))) break;
    prev = loss;
    if (spec.optimizer == ProbeOptimizer::kAdam) {
      adam_step(opt, params, grad.data);
    } else {
      for (std::size_t q = 0; q < params.size(); ++q) params[q] -= spec.learning_rate * grad.data[q];
    }
    unpack();
  }
  return r;
}

SegGroupMetrics segmentation_metrics(std::span<const std::uint32_t> gt, std::span<const std::uint32_t> pred,
                                     const Matrix& scores, std::span<const std::uint32_t> class_ids,
                                     std::span<const std::uint8_t> include) {
  const std::size_t n = gt.size();
  if (pred.size() != n || include.size() != n || scores.rows != n || scores.cols != class_ids.size()) {
    throw Error(Errc::kShapeMismatch, "segmentation inputs disagree in size");
  }
  std::vector<std::size_t> rows;
  std::set<std::uint32_t> classes;
  for (std::size_t i = 0; i < n; ++i) {
    if (!include[i]) continue;
    rows.push_back(i);
    classes.insert(gt[i]);
  }
  SegGroupMetrics m;
  m.pixels = rows.size();
  m.classes = classes.size();
  if (classes.empty()) return m;

  std::unordered_map<std::uint32_t, std::size_t> column;
  for (std::size_t c = 0; c < class_ids.size(); ++c) column[class_ids[c]] = c;
  std::vector<double> sc(rows.size());
  std::vector<std::uint8_t> pos(rows.size());
  std::size_t tp_all = 0, err_all = 0;
  for (std::uint32_t cls : classes) {
    const auto col = column.find(cls);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t i = rows[r];
      const bool is_gt = gt[i] == cls, is_pred = pred[i] == cls;
      tp += is_gt && is_pred;
      fp += !is_gt && is_pred;
      fn += is_gt && !is_pred;
      sc[r] = col == column.end() ? 0.0 : scores(i, col->second);
      pos[r] = is_gt;
    }
    m.map += ranking_ap(sc, pos);
    const double t = static_cast<double>(tp), e = static_cast<double>(fp + fn);
    m.miou += t / (t + e);
    tp_all += tp;
    err_all += fp + fn;
  }
  const double k = static_cast<double>(classes.size());
  m.map /= k;
  m.miou /= k;
  const double t = static_cast<double>(tp_all), e = static_cast<double>(err_all);
  m.jaccard = t / (t + e);
  m.jaccard_paper = err_all == 0 ? 1.0 : t / e;
  return m;
}

LabelledPatches labelled_patches(const Embedder& embedder, const Dataset& dataset, std::span<const EnvId> envs,
                                 int patch_size, int max_views_per_env) {
  LabelledPatches out;
  std::vector<double> rows;
  std::size_t width = 0;
  for (EnvId e : envs) {
    const auto& env = dataset.env(e);
    std::size_t nviews = env.views.size();
    if (max_views_per_env > 0) nviews = std::min(nviews, static_cast<std::size_t>(max_views_per_env));
    for (std::size_t v = 0; v < nviews; ++v) {
      PatchGrid g = make_grid(env.views[v], patch_size, dataset.normalization);
      embed_grid(g, embedder);
      const auto labels = patch_labels(env.views[v], env.scene, patch_size);
      width = g.features.cols;
      for (std::size_t cell = 0; cell < g.cells(); ++cell) {
        if (labels[cell] == 0) continue;
        out.labels.push_back(labels[cell]);
        rows.insert(rows.end(), g.features.row(cell).begin(), g.features.row(cell).end());
      }
    }
  }
  out.features = Matrix(out.labels.size(), width);
  out.features.data = std::move(rows);
  return out;
}

SegMetrics eval_segmentation(const ProbeState& probe, const Embedder& embedder, const Dataset& dataset,
                             std::span<const EnvId> envs, int patch_size) {
  std::vector<std::uint32_t> gt, pred;
  std::vector<double> score_rows;
  const std::size_t k = probe.num_classes();
  for (EnvId e : envs) {
    const auto& env = dataset.env(e);
    const InstanceMap things = thing_labels(env.scene);
    for (const auto& view : env.views) {
      PatchGrid g = make_grid(view, patch_size, dataset.normalization);
      embed_grid(g, embedder);
      const Matrix proba = probe.predict_proba(g.features);
      std::vector<std::uint32_t> cell_pred(g.cells());
      for (std::size_t cell = 0; cell < g.cells(); ++cell) {
        auto row = proba.row(cell);
        cell_pred[cell] = probe.class_ids[static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())];
      }
      for (int v = 0; v < view.height; ++v) {
        for (int u = 0; u < view.width; ++u) {
          const std::size_t px = view.index(u, v);
          const std::uint32_t label = label_of(things, view.semantic[px], view.instance[px]);
          if (label == 0) continue;
          const std::size_t cell = static_cast<std::size_t>(v / patch_size) * g.grid_w + u / patch_size;
          gt.push_back(label);
          pred.push_back(cell_pred[cell]);
          score_rows.insert(score_rows.end(), proba.row(cell).begin(), proba.row(cell).end());
        }
      }
    }
  }
  Matrix scores(gt.size(), k);
  scores.data = std::move(score_rows);

  std::set<std::uint32_t> known(probe.class_ids.begin(), probe.class_ids.end());
  std::set<std::uint32_t> missing;
  for (auto l : gt) {
    if (!known.count(l)) missing.insert(l);
  }
  for (auto l : missing) std::cerr << "warning: evaluation label " << l << " was never seen by the probe\n";

  std::vector<std::uint8_t> stuff(gt.size()), thing(gt.size()), all(gt.size(), 1);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    thing[i] = is_thing_label(gt[i]);
    stuff[i] = !thing[i];
  }
  SegMetrics m;
  m.stuff = segmentation_metrics(gt, pred, scores, probe.class_ids, stuff);
  m.things = segmentation_metrics(gt, pred, scores, probe.class_ids, thing);
  m.overall = segmentation_metrics(gt, pred, scores, probe.class_ids, all);
  return m;
}

}  // namespace vsap
