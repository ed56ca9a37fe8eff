#include "vsap/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vsap/error.hpp"
#include "vsap/kernels.hpp"

namespace vsap {
namespace {

// Universe pairs flattened into parallel arrays; `outer` lists which entries
// act as the anchor positives p.
struct RankingProblem {
  std::vector<double> scores;
  std::vector<double> weights;      // 1 for positives, 0 for shell negatives
  std::vector<std::size_t> source;  // flat index i * m + j
  std::vector<std::size_t> outer;   // indices into the arrays above
};

RankingProblem gather_all(const Matrix& s, const MaskPair& masks) {
  if (s.rows != masks.rows || s.cols != masks.cols) {
    throw Error(Errc::kShapeMismatch, "score matrix and masks differ in shape");
  }
  RankingProblem pr;
  for (std::size_t q = 0; q < masks.universe.size(); ++q) {
    if (!masks.universe[q]) continue;
    if (masks.positive[q]) pr.outer.push_back(pr.scores.size());
    pr.scores.push_back(s.data[q]);
    pr.weights.push_back(masks.positive[q] ? 1.0 : 0.0);
    pr.source.push_back(q);
  }
  return pr;
}

RankingProblem gather_column(const Matrix& s, const MaskPair& masks, std::size_t j) {
  if (s.rows != masks.rows || s.cols != masks.cols) {
    throw Error(Errc::kShapeMismatch, "score matrix and masks differ in shape");
  }
  if (j >= masks.cols) throw Error(Errc::kInvalidArgument, "landmark index out of range");
  RankingProblem pr;
  for (std::size_t i = 0; i < masks.rows; ++i) {
    const std::size_t q = i * masks.cols + j;
    if (!masks.universe[q]) continue;
    if (masks.positive[q]) pr.outer.push_back(pr.scores.size());
    pr.scores.push_back(s.data[q]);
    pr.weights.push_back(masks.positive[q] ? 1.0 : 0.0);
    pr.source.push_back(q);
  }
  return pr;
}

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(Errc::kInvalidArgument, "tau must be positive");
}

// Mean of N_p / D_p over pr.outer; fills d(value)/d(score) per universe entry
// when `grad` is non-null.
double smooth_ap(const RankingProblem& pr, const ObjectiveOptions& opt, std::vector<double>* grad) {
  check_tau(opt.tau);
  if (pr.outer.empty()) throw Error(Errc::kUndefinedAp, "no positive pairs");
  const auto& k = kernels::active();
  const double inv_tau = 1.0 / opt.tau;
  const std::size_t u = pr.scores.size();
  // The kernels evaluate the (p, p) term as sig(0) = 0.5 exactly with slope
  // 0.25 / tau; both are removed or kept here.
  const double self_sigma = opt.exclude_self ? 0.5 : 0.0;
  const double self_slope = 0.25 * inv_tau;
  if (grad) grad->assign(u, 0.0);

  double total = 0.0;
  for (std::size_t p : pr.outer) {
    const double anchor = pr.scores[p];
    const kernels::SigmoidSums sums = k.sigmoid_sums(anchor, pr.scores.data(), pr.weights.data(), u, inv_tau);
    const double num = 1.0 + sums.pos_sigma - self_sigma;
    const double den = 1.0 + sums.all_sigma - self_sigma;
    total += num / den;
    if (grad) {
      const double alpha = 1.0 / den;
      const double beta = num / (den * den);
      k.sigmoid_scatter(anchor, pr.scores.data(), pr.weights.data(), u, inv_tau, alpha, -beta,
                        grad->data());
      const double pos_slope = sums.pos_slope - self_slope;
      const double all_slope = sums.all_slope - self_slope;
      (*grad)[p] += -self_slope * (alpha - beta) - alpha * pos_slope + beta * all_slope;
    }
  }
  const double scale = 1.0 / static_cast<double>(pr.outer.size());
  if (grad) {
    for (double& g : *grad) g *= scale;
  }
  return total * scale;
}

double hard_ap(const RankingProblem& pr) {
  if (pr.outer.empty()) throw Error(Errc::kUndefinedAp, "no positive pairs");
  std::vector<double> all = pr.scores;
  std::vector<double> pos;
  pos.reserve(pr.outer.size());
  for (std::size_t p : pr.outer) pos.push_back(pr.scores[p]);
  std::sort(all.begin(), all.end());
  std::sort(pos.begin(), pos.end());
  double total = 0.0;
  for (std::size_t p : pr.outer) {
    const double s = pr.scores[p];
    const auto all_range = std::equal_range(all.begin(), all.end(), s);
    const auto pos_range = std::equal_range(pos.begin(), pos.end(), s);
    const auto all_above = static_cast<double>(all.end() - all_range.second);
    const auto pos_above = static_cast<double>(pos.end() - pos_range.second);
    // Ties exclude the pair itself.
    const auto all_ties = static_cast<double>(all_range.second - all_range.first) - 1.0;
    const auto pos_ties = static_cast<double>(pos_range.second - pos_range.first) - 1.0;
    total += (1.0 + pos_above + 0.5 * pos_ties) / (1.0 + all_above + 0.5 * all_ties);
  }
  return total / static_cast<double>(pr.outer.size());
}

std::vector<double> normalized_rows(const Matrix& m, std::vector<double>& norms) {
  const auto& k = kernels::active();
  std::vector<double> out(m.data.size());
  norms.assign(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto row = m.row(r);
    const double nrm = std::sqrt(k.dot(row.data(), row.data(), m.cols));
    if (!(nrm > 0.0) || !std::isfinite(nrm)) {
      throw Error(Errc::kZeroNorm, "embedding row " + std::to_string(r) + " has zero or non-finite norm");
    }
    norms[r] = nrm;
    for (std::size_t c = 0; c < m.cols; ++c) out[r * m.cols + c] = row[c] / nrm;
  }
  return out;
}

}  // namespace

Matrix cosine_scores(const Matrix& embeddings, const Matrix& thetas) {
  if (embeddings.cols != thetas.cols) throw Error(Errc::kShapeMismatch, "embedding widths differ");
  const auto& k = kernels::active();
  std::vector<double> na, nb;
  const auto a = normalized_rows(embeddings, na);
  const auto b = normalized_rows(thetas, nb);
  const std::size_t c = embeddings.cols;
  Matrix s(embeddings.rows, thetas.rows);
  for (std::size_t i = 0; i < s.rows; ++i) {
    for (std::size_t j = 0; j < s.cols; ++j) {
      s(i, j) = k.dot(a.data() + i * c, b.data() + j * c, c);
    }
  }
  return s;
}

CosineGradient cosine_backward(const Matrix& embeddings, const Matrix& thetas, const Matrix& scores,
                               const Matrix& d_scores) {
  if (scores.rows != embeddings.rows || scores.cols != thetas.rows || d_scores.rows != scores.rows ||
      d_scores.cols != scores.cols) {
    throw Error(Errc::kShapeMismatch, "cosine backward shapes disagree");
  }
  const auto& k = kernels::active();
  std::vector<double> na, nb;
  const auto a = normalized_rows(embeddings, na);
  const auto b = normalized_rows(thetas, nb);
  const std::size_t c = embeddings.cols;
  CosineGradient g{Matrix(embeddings.rows, c), Matrix(thetas.rows, c)};
  std::vector<double> acc_b(thetas.rows, 0.0);
  for (std::size_t i = 0; i < scores.rows; ++i) {
    double acc_a = 0.0;
    double* gi = g.d_embeddings.row(i).data();
    for (std::size_t j = 0; j < scores.cols; ++j) {
      const double ds = d_scores(i, j);
      if (ds == 0.0) continue;
      // ds/da_i = (b^_j - s a^_i) / |a_i|, ds/db_j = (a^_i - s b^_j) / |b_j|
      k.axpy(ds / na[i], b.data() + j * c, gi, c);
      k.axpy(ds / nb[j], a.data() + i * c, g.d_thetas.row(j).data(), c);
      acc_a += ds * scores(i, j);
      acc_b[j] += ds * scores(i, j);
    }
    if (acc_a != 0.0) k.axpy(-acc_a / na[i], a.data() + i * c, gi, c);
  }
  for (std::size_t j = 0; j < thetas.rows; ++j) {
    if (acc_b[j] != 0.0) k.axpy(-acc_b[j] / nb[j], b.data() + j * c, g.d_thetas.row(j).data(), c);
  }
  return g;
}

double smooth_ap_per_landmark(const Matrix& scores, const MaskPair& masks, std::size_t j,
                              const ObjectiveOptions& options, LandmarkQuery query) {
  if (query == LandmarkQuery::kColumn) return smooth_ap(gather_column(scores, masks, j), options, nullptr);
  RankingProblem pr = gather_all(scores, masks);
  std::vector<std::size_t> outer;
  for (std::size_t p : pr.outer) {
    if (pr.source[p] % masks.cols == j) outer.push_back(p);
  }
  pr.outer = std::move(outer);
  return smooth_ap(pr, options, nullptr);
}

std::vector<double> smooth_ap_all_landmarks(const Matrix& scores, const MaskPair& masks,
                                            const ObjectiveOptions& options, LandmarkQuery query) {
  std::vector<double> out(masks.cols, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 0; j < masks.cols; ++j) {
    bool any = false;
    for (std::size_t i = 0; i < masks.rows && !any; ++i) any = masks.pos(i, j);
    if (any) out[j] = smooth_ap_per_landmark(scores, masks, j, options, query);
  }
  return out;
}

double vectorized_smooth_ap(const Matrix& scores, const MaskPair& masks, const ObjectiveOptions& options) {
  return smooth_ap(gather_all(scores, masks), options, nullptr);
}

ObjectiveWithGradient vectorized_smooth_ap_with_grad(const Matrix& scores, const MaskPair& masks,
                                                     const ObjectiveOptions& options) {
  const RankingProblem pr = gather_all(scores, masks);
  std::vector<double> g;
  ObjectiveWithGradient out;
  out.value = smooth_ap(pr, options, &g);
  out.grad = Matrix(scores.rows, scores.cols);
  for (std::size_t q = 0; q < g.size(); ++q) out.grad.data[pr.source[q]] = g[q];
  return out;
}

Matrix grad_vectorized_smooth_ap(const Matrix& scores, const MaskPair& masks, const ObjectiveOptions& options) {
  return vectorized_smooth_ap_with_grad(scores, masks, options).grad;
}

double exact_ap(const Matrix& scores, const MaskPair& masks) { return hard_ap(gather_all(scores, masks)); }

double exact_ap_per_landmark(const Matrix& scores, const MaskPair& masks, std::size_t j) {
  return hard_ap(gather_column(scores, masks, j));
}

std::vector<std::size_t> top_k_landmarks(std::span<const double> ap, std::size_t k) {
  if (k > ap.size()) throw Error(Errc::kInvalidArgument, "k exceeds the number of landmarks");
  std::vector<std::size_t> idx(ap.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto key_less = [&](std::size_t a, std::size_t b) {
    const bool na = std::isnan(ap[a]), nb = std::isnan(ap[b]);
    if (na != nb) return nb;  // non-NaN first
    if (!na && ap[a] != ap[b]) return ap[a] > ap[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), key_less);
  idx.resize(k);
  return idx;
}

ObjectiveReport evaluate_objective(const Matrix& scores, const MaskPair& masks, const ObjectiveOptions& options) {
  ObjectiveReport r;
  r.tau = options.tau;
  r.vectorized_smooth_ap = vectorized_smooth_ap(scores, masks, options);
  r.per_landmark = smooth_ap_all_landmarks(scores, masks, options);
  r.exact_ap = exact_ap(scores, masks);
  return r;
}

}  // namespace vsap
