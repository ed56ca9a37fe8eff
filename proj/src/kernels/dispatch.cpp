#include <atomic>
#include <cstdlib>
#include <string>

#include "vsap/error.hpp"
#include "vsap/kernels.hpp"

namespace vsap::kernels {

#ifndef VSAP_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(VSAP_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return avx2_table() != nullptr && __builtin_cpu_supports("avx2") &&
             __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!cpu_supports(isa)) {
    throw Error(Errc::kInvalidArgument, "kernel variant not available on this CPU/build");
  }
  return isa == Isa::kAvx2 ? *avx2_table() : scalar_table();
}

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::kScalar;
  if (name == "avx2") return Isa::kAvx2;
  throw Error(Errc::kInvalidArgument, "unknown kernel variant '" + std::string(name) + "'");
}

namespace {

const KernelTable* resolve_default() {
  const char* env = std::getenv("VSAP_KERNELS");
  if (env != nullptr && std::string_view(env) != "auto" && std::string_view(env) != "") {
    return &table(parse_isa(env));
  }
  return cpu_supports(Isa::kAvx2) ? avx2_table() : &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{resolve_default()};
  return current;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

void select(Isa isa) { slot().store(&table(isa), std::memory_order_release); }

}  // namespace vsap::kernels
