// AVX2/FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after a CPUID check (see dispatch.cpp).

#include <immintrin.h>

#include <cmath>

#include "vsap/kernels.hpp"

namespace vsap::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// exp(y) for y <= 0. Cody-Waite reduction y = n ln2 + r, |r| <= ln2/2, then a
// degree-13 Taylor polynomial (truncation error < 2e-16 relative). Inputs
// below -708 flush to zero. exp(0) is exactly 1.
inline __m256d exp_nonpositive(__m256d y) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
  const __m256d ln2_hi = _mm256_set1_pd(6.93147180369123816490e-01);
  const __m256d ln2_lo = _mm256_set1_pd(1.90821492927058770002e-10);
  const __m256d floor_limit = _mm256_set1_pd(-708.0);

  const __m256d underflow = _mm256_cmp_pd(y, floor_limit, _CMP_LT_OQ);
  y = _mm256_max_pd(y, floor_limit);

  const __m256d n = _mm256_round_pd(_mm256_mul_pd(y, log2e),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, ln2_hi, y);
  r = _mm256_fnmadd_pd(n, ln2_lo, r);

  __m256d p = _mm256_set1_pd(1.0 / 6227020800.0);  // 1/13!
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 479001600.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 39916800.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 3628800.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 362880.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 40320.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 5040.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 720.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 120.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 24.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 6.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(0.5));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));

  // 2^n via the exponent field; n is in [-1022, 0] after clamping.
  __m128i n32 = _mm256_cvtpd_epi32(n);
  __m256i n64 = _mm256_cvtepi32_epi64(n32);
  n64 = _mm256_add_epi64(n64, _mm256_set1_epi64x(1023));
  const __m256d scale = _mm256_castsi256_pd(_mm256_slli_epi64(n64, 52));

  return _mm256_andnot_pd(underflow, _mm256_mul_pd(p, scale));
}

inline void logistic(__m256d x, __m256d inv_tau, __m256d& sigma, __m256d& slope) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d neg_abs = _mm256_or_pd(x, sign_mask);
  const __m256d e = exp_nonpositive(neg_abs);
  const __m256d inv = _mm256_div_pd(one, _mm256_add_pd(one, e));
  const __m256d nonneg = _mm256_cmp_pd(x, _mm256_setzero_pd(), _CMP_GE_OQ);
  sigma = _mm256_blendv_pd(_mm256_mul_pd(e, inv), inv, nonneg);
  slope = _mm256_mul_pd(_mm256_mul_pd(_mm256_mul_pd(e, inv), inv), inv_tau);
}

inline void logistic_scalar(double x, double inv_tau, double& sigma, double& slope) {
  const double e = std::exp(-std::fabs(x));
  const double inv = 1.0 / (1.0 + e);
  sigma = x >= 0.0 ? inv : e * inv;
  slope = e * inv * inv * inv_tau;
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  __m256d acc2 = _mm256_setzero_pd();
  __m256d acc3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    acc2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), acc2);
    acc3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), acc3);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(_mm256_add_pd(acc0, acc1), _mm256_add_pd(acc2, acc3)));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    _mm256_storeu_pd(y + i + 4,
                     _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

SigmoidSums sigmoid_sums_avx2(double anchor, const double* scores, const double* weights,
                              std::size_t n, double inv_tau) {
  const __m256d va = _mm256_set1_pd(anchor);
  const __m256d vt = _mm256_set1_pd(inv_tau);
  __m256d pos_sigma = _mm256_setzero_pd();
  __m256d all_sigma = _mm256_setzero_pd();
  __m256d pos_slope = _mm256_setzero_pd();
  __m256d all_slope = _mm256_setzero_pd();
  std::size_t q = 0;
  for (; q + 4 <= n; q += 4) {
    const __m256d x = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(scores + q), va), vt);
    const __m256d w = _mm256_loadu_pd(weights + q);
    __m256d sigma, slope;
    logistic(x, vt, sigma, slope);
    pos_sigma = _mm256_fmadd_pd(w, sigma, pos_sigma);
    all_sigma = _mm256_add_pd(all_sigma, sigma);
    pos_slope = _mm256_fmadd_pd(w, slope, pos_slope);
    all_slope = _mm256_add_pd(all_slope, slope);
  }
  SigmoidSums s{hsum(pos_sigma), hsum(all_sigma), hsum(pos_slope), hsum(all_slope)};
  for (; q < n; ++q) {
    double sigma, slope;
    logistic_scalar((scores[q] - anchor) * inv_tau, inv_tau, sigma, slope);
    s.pos_sigma += weights[q] * sigma;
    s.all_sigma += sigma;
    s.pos_slope += weights[q] * slope;
    s.all_slope += slope;
  }
  return s;
}

void sigmoid_scatter_avx2(double anchor, const double* scores, const double* weights,
                          std::size_t n, double inv_tau, double pos_coeff, double all_coeff,
                          double* grad) {
  const __m256d va = _mm256_set1_pd(anchor);
  const __m256d vt = _mm256_set1_pd(inv_tau);
  const __m256d vp = _mm256_set1_pd(pos_coeff);
  const __m256d vc = _mm256_set1_pd(all_coeff);
  std::size_t q = 0;
  for (; q + 4 <= n; q += 4) {
    const __m256d x = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(scores + q), va), vt);
    __m256d sigma, slope;
    logistic(x, vt, sigma, slope);
    const __m256d coeff = _mm256_fmadd_pd(_mm256_loadu_pd(weights + q), vp, vc);
    _mm256_storeu_pd(grad + q, _mm256_fmadd_pd(slope, coeff, _mm256_loadu_pd(grad + q)));
  }
  for (; q < n; ++q) {
    double sigma, slope;
    logistic_scalar((scores[q] - anchor) * inv_tau, inv_tau, sigma, slope);
    grad[q] += slope * (weights[q] * pos_coeff + all_coeff);
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{Isa::kAvx2, "avx2", &dot_avx2, &axpy_avx2, &sigmoid_sums_avx2,
                                 &sigmoid_scatter_avx2};
  return &table;
}

}  // namespace vsap::kernels
