#include <atomic>

#include "sctts/error.hpp"
#include "sctts/numkit/kernels.hpp"

namespace sctts::kernels {
namespace {

constexpr KernelTable kScalar{&scalar::dot, &scalar::sq_dist, &scalar::axpy};
#if defined(__x86_64__) || defined(_M_X64)
constexpr KernelTable kAvx2{&avx2::dot, &avx2::sq_dist, &avx2::axpy};
#endif
#if defined(__aarch64__) || defined(__ARM_NEON)
constexpr KernelTable kNeon{&neon::dot, &neon::sq_dist, &neon::axpy};
#endif

Isa detect() noexcept {
  if (isa_available(Isa::Avx2)) return Isa::Avx2;
  if (isa_available(Isa::Neon)) return Isa::Neon;
  return Isa::Scalar;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> active{&table(detect())};
  return active;
}

std::atomic<Isa>& current_isa() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) throw ContractError("kernel operands differ in length");
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

bool isa_available(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2:
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Isa::Neon:
#if defined(__aarch64__) || defined(__ARM_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  switch (isa) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::Avx2: return kAvx2;
#endif
#if defined(__aarch64__) || defined(__ARM_NEON)
    case Isa::Neon: return kNeon;
#endif
    default: return kScalar;
  }
}

Isa active_isa() noexcept { return current_isa().load(std::memory_order_relaxed); }

void force_isa(std::optional<Isa> isa) {
  const Isa chosen = isa.value_or(detect());
  if (!isa_available(chosen)) {
    throw ContractError("kernel variant not available: " + std::string(isa_name(chosen)));
  }
  current().store(&table(chosen), std::memory_order_relaxed);
  current_isa().store(chosen, std::memory_order_relaxed);
}

double dot(std::span<const double> a, std::span<const double> b) {
  check_sizes(a.size(), b.size());
  return current().load(std::memory_order_relaxed)->dot(a.data(), b.data(), a.size());
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  check_sizes(a.size(), b.size());
  return current().load(std::memory_order_relaxed)->sq_dist(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_sizes(x.size(), y.size());
  current().load(std::memory_order_relaxed)->axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace sctts::kernels
