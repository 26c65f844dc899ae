// Compiled with -mavx2 -mfma; only reached after a CPUID check.

#include "tracemia/kernels.hpp"

#include <immintrin.h>

#include <algorithm>

namespace tracemia::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

} // namespace

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        const __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4));
        acc0 = _mm256_fmadd_pd(d0, d0, acc0);
        acc1 = _mm256_fmadd_pd(d1, d1, acc1);
    }
    for (; i + 4 <= n; i += 4) {
        const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        const double diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void vecmat(const double* x, const double* w, std::size_t rows, std::size_t cols, double* out) {
    std::fill(out, out + cols, 0.0);
    std::size_t j = 0;
    // 16-column panels stay in registers across the whole reduction.
    for (; j + 16 <= cols; j += 16) {
        __m256d o0 = _mm256_setzero_pd();
        __m256d o1 = _mm256_setzero_pd();
        __m256d o2 = _mm256_setzero_pd();
        __m256d o3 = _mm256_setzero_pd();
        for (std::size_t i = 0; i < rows; ++i) {
            const __m256d xi = _mm256_set1_pd(x[i]);
            const double* row = w + i * cols + j;
            o0 = _mm256_fmadd_pd(xi, _mm256_loadu_pd(row), o0);
            o1 = _mm256_fmadd_pd(xi, _mm256_loadu_pd(row + 4), o1);
            o2 = _mm256_fmadd_pd(xi, _mm256_loadu_pd(row + 8), o2);
            o3 = _mm256_fmadd_pd(xi, _mm256_loadu_pd(row + 12), o3);
        }
        _mm256_storeu_pd(out + j, o0);
        _mm256_storeu_pd(out + j + 4, o1);
        _mm256_storeu_pd(out + j + 8, o2);
        _mm256_storeu_pd(out + j + 12, o3);
    }
    for (; j + 4 <= cols; j += 4) {
        __m256d o0 = _mm256_setzero_pd();
        for (std::size_t i = 0; i < rows; ++i) {
            o0 = _mm256_fmadd_pd(_mm256_set1_pd(x[i]), _mm256_loadu_pd(w + i * cols + j), o0);
        }
        _mm256_storeu_pd(out + j, o0);
    }
    for (; j < cols; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < rows; ++i) acc += x[i] * w[i * cols + j];
        out[j] = acc;
    }
}

void widen(const float* in, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_cvtps_pd(_mm_loadu_ps(in + i)));
    for (; i < n; ++i) out[i] = static_cast<double>(in[i]);
}

double sum(const double* x, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
        acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
    }
    for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i];
    return acc;
}

double max_value(const double* x, std::size_t n) {
    if (n < 4) return *std::max_element(x, x + n);
    __m256d m = _mm256_loadu_pd(x);
    std::size_t i = 4;
    for (; i + 4 <= n; i += 4) m = _mm256_max_pd(m, _mm256_loadu_pd(x + i));
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, m);
    double best = std::max(std::max(lanes[0], lanes[1]), std::max(lanes[2], lanes[3]));
    for (; i < n; ++i) best = std::max(best, x[i]);
    return best;
}

} // namespace tracemia::kernels::avx2
