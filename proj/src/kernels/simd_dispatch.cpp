#include "fcni/kernels/simd.hpp"

#include <atomic>
#include <stdexcept>

#if defined(__x86_64__) || defined(__i386__)
#define FCNI_X86 1
#else
#define FCNI_X86 0
#endif

namespace fcni::kern {

namespace {

struct Table {
    double (*dot)(const double*, const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scale)(double, double*, std::size_t);
    double (*sum)(const double*, std::size_t);
    double (*vmax)(const double*, std::size_t);
    void (*relu)(const double*, double*, std::size_t);
};

constexpr Table kScalar{detail::dot_scalar, detail::axpy_scalar, detail::scale_scalar,
                        detail::sum_scalar, detail::vmax_scalar, detail::relu_scalar};

#if FCNI_X86
constexpr Table kAvx2{detail::dot_avx2, detail::axpy_avx2, detail::scale_avx2,
                      detail::sum_avx2, detail::vmax_avx2, detail::relu_avx2};
#endif

std::atomic<const Table*> g_table{nullptr};
std::atomic<Level> g_level{Level::scalar};

const Table* resolve() {
    const Table* t = g_table.load(std::memory_order_acquire);
    if (t) return t;
    force_auto();
    return g_table.load(std::memory_order_acquire);
}

}  // namespace

bool cpu_has_avx2() {
#if FCNI_X86
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

void force(Level level) {
    if (level == Level::avx2) {
#if FCNI_X86
        if (!cpu_has_avx2()) throw std::runtime_error("avx2 kernels requested but CPU lacks AVX2/FMA");
        g_table.store(&kAvx2, std::memory_order_release);
#else
        throw std::runtime_error("avx2 kernels unavailable on this architecture");
#endif
    } else {
        g_table.store(&kScalar, std::memory_order_release);
    }
    g_level.store(level, std::memory_order_release);
}

void force_auto() {
    force(cpu_has_avx2() ? Level::avx2 : Level::scalar);
}

Level active() {
    resolve();
    return g_level.load(std::memory_order_acquire);
}

const char* level_name(Level level) {
    return level == Level::avx2 ? "avx2" : "scalar";
}

double dot(const double* a, const double* b, std::size_t n) { return resolve()->dot(a, b, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { resolve()->axpy(alpha, x, y, n); }
void scale(double alpha, double* x, std::size_t n) { resolve()->scale(alpha, x, n); }
double sum(const double* x, std::size_t n) { return resolve()->sum(x, n); }
double vmax(const double* x, std::size_t n) { return resolve()->vmax(x, n); }
void relu(const double* x, double* y, std::size_t n) { resolve()->relu(x, y, n); }

}  // namespace fcni::kern
