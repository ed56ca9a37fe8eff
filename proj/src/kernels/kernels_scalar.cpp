#include <cmath>

#include "vsap/kernels.hpp"

namespace vsap::kernels {
namespace {

double dot_ref(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_ref(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// Branch on the sign so exp never overflows: e = exp(-|x|) is in (0, 1].
inline void logistic(double x, double inv_tau, double& sigma, double& slope) {
  const double e = std::exp(-std::fabs(x));
  const double inv = 1.0 / (1.0 + e);
  sigma = x >= 0.0 ? inv : e * inv;
  slope = e * inv * inv * inv_tau;
}

SigmoidSums sigmoid_sums_ref(double anchor, const double* scores, const double* weights,
                             std::size_t n, double inv_tau) {
  SigmoidSums s;
  for (std::size_t q = 0; q < n; ++q) {
    double sigma, slope;
    logistic((scores[q] - anchor) * inv_tau, inv_tau, sigma, slope);
    s.pos_sigma += weights[q] * sigma;
    s.all_sigma += sigma;
    s.pos_slope += weights[q] * slope;
    s.all_slope += slope;
  }
  return s;
}

void sigmoid_scatter_ref(double anchor, const double* scores, const double* weights,
                         std::size_t n, double inv_tau, double pos_coeff, double all_coeff,
                         double* grad) {
  for (std::size_t q = 0; q < n; ++q) {
    double sigma, slope;
    logistic((scores[q] - anchor) * inv_tau, inv_tau, sigma, slope);
    grad[q] += slope * (weights[q] * pos_coeff + all_coeff);
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::kScalar, "scalar", &dot_ref, &axpy_ref, &sigmoid_sums_ref,
                                 &sigmoid_scatter_ref};
  return table;
}

}  // namespace vsap::kernels
