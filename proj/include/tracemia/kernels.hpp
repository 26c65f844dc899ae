#pragma once

// Data-parallel inner loops shared by the lens, the feature extractors and the
// toy transformer. Every kernel has a portable scalar reference and an AVX2+FMA
// variant; the table is chosen once at startup from CPUID and can be forced
// for equivalence testing.

#include <cstddef>
#include <string_view>

namespace tracemia::kernels {

enum class Backend { scalar, avx2 };

struct KernelTable {
    double (*dot)(const double* a, const double* b, std::size_t n);
    // sum_i (a_i - b_i)^2
    double (*squared_distance)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // out[j] = sum_i x[i] * w[i * cols + j]; w is row-major rows x cols
    void (*vecmat)(const double* x, const double* w, std::size_t rows, std::size_t cols, double* out);
    void (*widen)(const float* in, double* out, std::size_t n);
    double (*sum)(const double* x, std::size_t n);
    double (*max_value)(const double* x, std::size_t n);
    // First index of the largest split score
    //   (l1^2 * (n - ln) + (ones - l1)^2 * ln) / (ln * (n - ln))
    // with ln = left_n[i], l1 = left_ones[i]. NaN in left_n marks a position
    // that is not a candidate. Returns count when there is none; the score is
    // written to *best. Bit-identical across backends.
    std::size_t (*split_argmax)(const double* left_n, const double* left_ones, std::size_t count, double n,
                                double ones, double* best);
};

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void vecmat(const double* x, const double* w, std::size_t rows, std::size_t cols, double* out);
void widen(const float* in, double* out, std::size_t n);
double sum(const double* x, std::size_t n);
double max_value(const double* x, std::size_t n);
std::size_t split_argmax(const double* left_n, const double* left_ones, std::size_t count, double n, double ones,
                         double* best);
} // namespace scalar

namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void vecmat(const double* x, const double* w, std::size_t rows, std::size_t cols, double* out);
void widen(const float* in, double* out, std::size_t n);
double sum(const double* x, std::size_t n);
double max_value(const double* x, std::size_t n);
std::size_t split_argmax(const double* left_n, const double* left_ones, std::size_t count, double n, double ones,
                         double* best);
} // namespace avx2

bool avx2_available();

const KernelTable& table(Backend backend);

// Table used by library code.
const KernelTable& active();
Backend active_backend();

// Overrides the CPUID choice; throws if avx2 is requested on a CPU without it.
void force_backend(Backend backend);

std::string_view backend_name(Backend backend);

} // namespace tracemia::kernels
