#pragma once

// Ranking objective over patch-landmark scores.
//
// For the set P of positive pairs and the universe U (positives plus the
// negative shell), the smooth average precision of a positive pair p is
//
//   N_p / D_p,  N_p = 1 + sum_{q in P, q != p} sig((s_q - s_p) / tau)
//               D_p = 1 + sum_{q in U, q != p} sig((s_q - s_p) / tau)
//
// The vectorized objective averages N_p / D_p over every positive pair of
// every landmark as one ranking problem; the per-landmark variant averages
// over the positives of a single landmark. Scores of pairs outside U are
// never read.

#include <cstddef>
#include <span>
#include <vector>

#include "vsap/landmarks.hpp"
#include "vsap/matrix.hpp"

namespace vsap {

inline constexpr double kDefaultTau = 0.01;

struct ObjectiveOptions {
  double tau = kDefaultTau;
  /// Drop the (p, p) term from the inner sums. With it included (the literal
  /// textbook form) each ratio gains +0.5 in numerator and denominator and
  /// the tau -> 0 limit no longer equals exact AP.
  bool exclude_self = true;
};

/// Inner sums of the per-landmark score: only landmark j's column (the
/// landmark is the query), or every pair of the batch.
enum class LandmarkQuery { kColumn, kAllPairs };

/// s_ij = <a_i, b_j> / (|a_i| |b_j|). Throws Errc::kZeroNorm on a zero row.
Matrix cosine_scores(const Matrix& embeddings, const Matrix& thetas);

struct CosineGradient {
  Matrix d_embeddings;  // n x c
  Matrix d_thetas;      // m x c
};

/// Chains dObjective/dS through the cosine scores.
CosineGradient cosine_backward(const Matrix& embeddings, const Matrix& thetas, const Matrix& scores,
                               const Matrix& d_scores);

double smooth_ap_per_landmark(const Matrix& scores, const MaskPair& masks, std::size_t j,
                              const ObjectiveOptions& options = {},
                              LandmarkQuery query = LandmarkQuery::kColumn);

/// Per-landmark values; landmarks without positives get NaN.
std::vector<double> smooth_ap_all_landmarks(const Matrix& scores, const MaskPair& masks,
                                            const ObjectiveOptions& options = {},
                                            LandmarkQuery query = LandmarkQuery::kColumn);

double vectorized_smooth_ap(const Matrix& scores, const MaskPair& masks,
                            const ObjectiveOptions& options = {});

struct ObjectiveWithGradient {
  double value = 0.0;
  Matrix grad;  // n x m; zero outside the universe mask
};

ObjectiveWithGradient vectorized_smooth_ap_with_grad(const Matrix& scores, const MaskPair& masks,
                                                     const ObjectiveOptions& options = {});

Matrix grad_vectorized_smooth_ap(const Matrix& scores, const MaskPair& masks,
                                 const ObjectiveOptions& options = {});

/// Hard AP over the vectorized universe; a distinct pair with an equal score
/// counts as half ranked above.
double exact_ap(const Matrix& scores, const MaskPair& masks);

/// Exact AP of a single landmark column.
double exact_ap_per_landmark(const Matrix& scores, const MaskPair& masks, std::size_t j);

/// Indices of the k largest values, ties broken by lower index. NaN entries
/// rank last.
std::vector<std::size_t> top_k_landmarks(std::span<const double> per_landmark_ap, std::size_t k);

struct ObjectiveReport {
  double vectorized_smooth_ap = 0.0;
  std::vector<double> per_landmark;
  double exact_ap = 0.0;
  double tau = kDefaultTau;
};

ObjectiveReport evaluate_objective(const Matrix& scores, const MaskPair& masks,
                                   const ObjectiveOptions& options = {});

}  // namespace vsap
