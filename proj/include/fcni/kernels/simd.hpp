#pragma once

// Dense f64 primitives used by every hot loop in the project. Each operation
// has a scalar reference implementation and an AVX2/FMA variant; the variant
// is picked once at startup based on what the CPU reports, and can be forced
// (e.g. by the equivalence tests or the --simd flag).

#include <cstddef>

namespace fcni::kern {

enum class Level { scalar, avx2 };

// Level currently in use for all kernel calls.
Level active();

// Force a level. Forcing avx2 on a CPU without AVX2+FMA throws.
void force(Level level);

// Pick the best level the CPU supports.
void force_auto();

const char* level_name(Level level);
bool cpu_has_avx2();

double dot(const double* a, const double* b, std::size_t n);

// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);

// x *= alpha
void scale(double alpha, double* x, std::size_t n);

double sum(const double* x, std::size_t n);

// Maximum element; n must be >= 1.
double vmax(const double* x, std::size_t n);

// y = max(x, 0)
void relu(const double* x, double* y, std::size_t n);

namespace detail {
double dot_scalar(const double*, const double*, std::size_t);
void axpy_scalar(double, const double*, double*, std::size_t);
void scale_scalar(double, double*, std::size_t);
double sum_scalar(const double*, std::size_t);
double vmax_scalar(const double*, std::size_t);
void relu_scalar(const double*, double*, std::size_t);

double dot_avx2(const double*, const double*, std::size_t);
void axpy_avx2(double, const double*, double*, std::size_t);
void scale_avx2(double, double*, std::size_t);
double sum_avx2(const double*, std::size_t);
double vmax_avx2(const double*, std::size_t);
void relu_avx2(const double*, double*, std::size_t);
}  // namespace detail

}  // namespace fcni::kern
