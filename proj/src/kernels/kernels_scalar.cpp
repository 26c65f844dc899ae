#include "tracemia/kernels.hpp"

#include <algorithm>

namespace tracemia::kernels::scalar {

double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void vecmat(const double* x, const double* w, std::size_t rows, std::size_t cols, double* out) {
    std::fill(out, out + cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        const double xi = x[i];
        const double* row = w + i * cols;
        for (std::size_t j = 0; j < cols; ++j) out[j] += xi * row[j];
    }
}

void widen(const float* in, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(in[i]);
}

double sum(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

double max_value(const double* x, std::size_t n) {
    double m = x[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
    return m;
}

std::size_t split_argmax(const double* left_n, const double* left_ones, std::size_t count, double n, double ones,
                         double* best) {
    double top = -1.0;
    std::size_t arg = count;
    for (std::size_t i = 0; i < count; ++i) {
        const double ln = left_n[i];
        const double l1 = left_ones[i];
        const double rn = n - ln;
        const double r1 = ones - l1;
        const double score = (l1 * l1 * rn + r1 * r1 * ln) / (ln * rn);
        if (score > top) {
            top = score;
            arg = i;
        }
    }
    *best = top;
    return arg;
}

} // namespace tracemia::kernels::scalar
