#pragma once

// Data-parallel inner loops used by the encoder and the ranking objective.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2/FMA variant. The variant is picked once at runtime (CPUID, overridable
// through VSAP_KERNELS=scalar|avx2|auto) and all callers go through
// kernels::active(). The two variants agree to ~1e-13 relative; they are not
// bitwise identical because the vector paths use different summation order.

#include <cstddef>
#include <string_view>

namespace vsap::kernels {

enum class Isa { kScalar, kAvx2 };

/// Accumulated logistic terms for one anchor score against a list of scores.
/// sigma_q = 1 / (1 + exp(-(s_q - anchor) / tau)), slope_q = d sigma_q / d s_q.
struct SigmoidSums {
  double pos_sigma = 0.0;  // sum of weight_q * sigma_q
  double all_sigma = 0.0;  // sum of sigma_q
  double pos_slope = 0.0;  // sum of weight_q * slope_q
  double all_slope = 0.0;  // sum of slope_q
};

struct KernelTable {
  Isa isa;
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  /// y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  SigmoidSums (*sigmoid_sums)(double anchor, const double* scores, const double* weights,
                              std::size_t n, double inv_tau);
  /// grad_q += slope_q * (weight_q * pos_coeff + all_coeff)
  void (*sigmoid_scatter)(double anchor, const double* scores, const double* weights,
                          std::size_t n, double inv_tau, double pos_coeff, double all_coeff,
                          double* grad);
};

const KernelTable& scalar_table();
/// nullptr when the variant was not compiled in.
const KernelTable* avx2_table();

bool cpu_supports(Isa isa);
/// Table for the requested ISA; throws if the CPU or build lacks it.
const KernelTable& table(Isa isa);

/// The process-wide selection. First call resolves VSAP_KERNELS / CPUID.
const KernelTable& active();
void select(Isa isa);
Isa parse_isa(std::string_view name);

}  // namespace vsap::kernels
