#pragma once

// Data-parallel inner loops shared by every trainable module.
//
// The scalar kernels are the reference: they fix a summation order of four
// interleaved partial sums (lane j accumulates elements i with i % 4 == j),
// folded as (s0 + s1) + (s2 + s3), then the tail added in order. The AVX2 and
// NEON variants reproduce that order exactly and use separate multiply and
// add (no FMA), so every variant is bit-identical to the reference. Runtime
// dispatch therefore never changes results or checkpoint bytes.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

namespace sctts::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa) noexcept;

// True when the variant was compiled in and the running CPU supports it.
bool isa_available(Isa isa) noexcept;

// Variant used by the dispatching entry points below.
Isa active_isa() noexcept;

// Pins the dispatcher to one variant (tests, benchmarks). std::nullopt
// restores automatic selection. Throws ContractError if unavailable.
void force_isa(std::optional<Isa> isa);

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sq_dist)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

const KernelTable& table(Isa isa);

double dot(std::span<const double> a, std::span<const double> b);
double sq_dist(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double sq_dist(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double sq_dist(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2
#endif

#if defined(__aarch64__) || defined(__ARM_NEON)
namespace neon {
double dot(const double* a, const double* b, std::size_t n);
double sq_dist(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace neon
#endif

}  // namespace sctts::kernels
