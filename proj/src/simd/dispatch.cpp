#include <atomic>
#include <cstdlib>
#include <string_view>

#include "bms/simd/kernels.hpp"

namespace bms::simd {

#if BMS_HAVE_AVX2
namespace detail {
const KernelTable& avx2_table();
}
#endif

namespace {

bool cpu_has_avx2() {
#if BMS_HAVE_AVX2 && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const KernelTable* best = avx2_kernels();
  if (const char* env = std::getenv("BMS_KERNELS")) {
    const std::string_view want{env};
    if (want == "scalar") return &scalar_kernels();
    if (want == "avx2" && best != nullptr) return best;
  }
  return best != nullptr ? best : &scalar_kernels();
}

std::atomic<const KernelTable*>& active() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable* avx2_kernels() {
#if BMS_HAVE_AVX2
  static const bool supported = cpu_has_avx2();
  return supported ? &detail::avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& kernels() { return *active().load(std::memory_order_acquire); }

bool select_kernels(std::string_view name) {
  if (name == "scalar") {
    active().store(&scalar_kernels(), std::memory_order_release);
    return true;
  }
  if (name == "avx2") {
    if (const KernelTable* t = avx2_kernels()) {
      active().store(t, std::memory_order_release);
      return true;
    }
  }
  return false;
}

}  // namespace bms::simd
