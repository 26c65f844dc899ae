#include "tracemia/kernels.hpp"

#include <atomic>
#include <stdexcept>

namespace tracemia::kernels {

namespace {

constexpr KernelTable scalar_table{
    scalar::dot, scalar::squared_distance, scalar::axpy, scalar::vecmat,
    scalar::widen, scalar::sum, scalar::max_value, scalar::split_argmax,
};

#if defined(TRACEMIA_HAVE_AVX2)
constexpr KernelTable avx2_table{
    avx2::dot, avx2::squared_distance, avx2::axpy, avx2::vecmat,
    avx2::widen, avx2::sum, avx2::max_value, avx2::split_argmax,
};
#endif

Backend detect() { return avx2_available() ? Backend::avx2 : Backend::scalar; }

std::atomic<Backend>& current() {
    static std::atomic<Backend> backend{detect()};
    return backend;
}

} // namespace

bool avx2_available() {
#if defined(TRACEMIA_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    static const bool ok = [] {
        __builtin_cpu_init();
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    }();
    return ok;
#else
    return false;
#endif
}

const KernelTable& table(Backend backend) {
#if defined(TRACEMIA_HAVE_AVX2)
    if (backend == Backend::avx2) return avx2_table;
#else
    (void)backend;
#endif
    return scalar_table;
}

const KernelTable& active() { return table(current().load(std::memory_order_relaxed)); }

Backend active_backend() { return current().load(std::memory_order_relaxed); }

void force_backend(Backend backend) {
    if (backend == Backend::avx2 && !avx2_available()) {
        throw std::runtime_error("avx2 kernels requested but not supported on this CPU");
    }
    current().store(backend);
}

std::string_view backend_name(Backend backend) {
    return backend == Backend::avx2 ? "avx2" : "scalar";
}

} // namespace tracemia::kernels
