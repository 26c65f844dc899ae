// Compiled with -mavx2 -ffp-contract=off so every lane rounds exactly like the
// scalar reference.

#include "tracemia/kernels.hpp"

#include <immintrin.h>

#include <cstdint>

namespace tracemia::kernels::avx2 {

std::size_t split_argmax(const double* left_n, const double* left_ones, std::size_t count, double n, double ones,
                         double* best) {
    const __m256d vn = _mm256_set1_pd(n);
    const __m256d vones = _mm256_set1_pd(ones);
    __m256d top = _mm256_set1_pd(-1.0);
    __m256i arg = _mm256_set1_epi64x(-1);
    __m256i idx = _mm256_setr_epi64x(0, 1, 2, 3);
    const __m256i step = _mm256_set1_epi64x(4);
    std::size_t i = 0;
    for (; i + 4 <= count; i += 4) {
        const __m256d ln = _mm256_loadu_pd(left_n + i);
        const __m256d l1 = _mm256_loadu_pd(left_ones + i);
        const __m256d rn = _mm256_sub_pd(vn, ln);
        const __m256d r1 = _mm256_sub_pd(vones, l1);
        const __m256d num =
            _mm256_add_pd(_mm256_mul_pd(_mm256_mul_pd(l1, l1), rn), _mm256_mul_pd(_mm256_mul_pd(r1, r1), ln));
        const __m256d score = _mm256_div_pd(num, _mm256_mul_pd(ln, rn));
        // each lane keeps its first maximum; NaN never compares greater
        const __m256d take = _mm256_cmp_pd(score, top, _CMP_GT_OQ);
        top = _mm256_blendv_pd(top, score, take);
        arg = _mm256_castpd_si256(
            _mm256_blendv_pd(_mm256_castsi256_pd(arg), _mm256_castsi256_pd(idx), take));
        idx = _mm256_add_epi64(idx, step);
    }
    alignas(32) double lane_top[4];
    alignas(32) std::int64_t lane_arg[4];
    _mm256_store_pd(lane_top, top);
    _mm256_store_si256(reinterpret_cast<__m256i*>(lane_arg), arg);
    double best_score = -1.0;
    std::size_t best_arg = count;
    for (int l = 0; l < 4; ++l) {
        if (lane_arg[l] < 0) continue;
        const auto a = static_cast<std::size_t>(lane_arg[l]);
        if (lane_top[l] > best_score || (lane_top[l] == best_score && a < best_arg)) {
            best_score = lane_top[l];
            best_arg = a;
        }
    }
    for (; i < count; ++i) {
        const double ln = left_n[i];
        const double l1 = left_ones[i];
        const double rn = n - ln;
        const double r1 = ones - l1;
        const double score = (l1 * l1 * rn + r1 * r1 * ln) / (ln * rn);
        if (score > best_score) {
            best_score = score;
            best_arg = i;
        }
    }
    *best = best_score;
    return best_arg;
}

} // namespace tracemia::kernels::avx2
