#include "laytext/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace laytext {

namespace {
std::atomic<int> g_threads{0};  // 0 = library default
}

void set_threads(int n) {
    g_threads.store(n < 1 ? 1 : n);
#ifdef _OPENMP
    if (n >= 1) omp_set_num_threads(n);
#endif
}

int thread_count() {
    const int n = g_threads.load();
    if (n >= 1) return n;
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace kernels {

namespace {
// Below this many multiply-adds the fork/join overhead dominates.
constexpr int64_t kParallelCutoff = 64 * 1024;

inline bool go_parallel(int64_t work) {
    return thread_count() > 1 && work >= kParallelCutoff;
}
}  // namespace

// ---------------------------------------------------------------- matmul_nn

static inline void nn_row(const double* a, const double* b, double* c, int k, int n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(n));
    for (int kk = 0; kk < k; ++kk) {
        const double av = a[kk];
        if (av == 0.0) continue;
        const double* brow = b + static_cast<int64_t>(kk) * n;
        for (int j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

void matmul_nn_serial(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i)
        nn_row(a + static_cast<int64_t>(i) * k, b, c + static_cast<int64_t>(i) * n, k, n, accumulate);
}

void matmul_nn_omp(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
        nn_row(a + static_cast<int64_t>(i) * k, b, c + static_cast<int64_t>(i) * n, k, n, accumulate);
}

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    if (go_parallel(static_cast<int64_t>(m) * k * n))
        matmul_nn_omp(a, b, c, m, k, n, accumulate);
    else
        matmul_nn_serial(a, b, c, m, k, n, accumulate);
}

// ---------------------------------------------------------------- matmul_nt

static inline void nt_row(const double* a, const double* b, double* c, int k, int n, bool accumulate) {
    for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<int64_t>(j) * k;
        double acc = 0.0;
        for (int kk = 0; kk < k; ++kk) acc += a[kk] * brow[kk];
        if (accumulate)
            c[j] += acc;
        else
            c[j] = acc;
    }
}

void matmul_nt_serial(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i)
        nt_row(a + static_cast<int64_t>(i) * k, b, c + static_cast<int64_t>(i) * n, k, n, accumulate);
}

void matmul_nt_omp(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
        nt_row(a + static_cast<int64_t>(i) * k, b, c + static_cast<int64_t>(i) * n, k, n, accumulate);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    if (go_parallel(static_cast<int64_t>(m) * k * n))
        matmul_nt_omp(a, b, c, m, k, n, accumulate);
    else
        matmul_nt_serial(a, b, c, m, k, n, accumulate);
}

// ---------------------------------------------------------------- matmul_tn

static inline void tn_row(const double* a, const double* b, double* c, int i, int k, int m, int n, bool accumulate) {
    // c row i of A^T B: c[j] = sum_kk A[kk, i] * B[kk, j]
    if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(n));
    for (int kk = 0; kk < k; ++kk) {
        const double av = a[static_cast<int64_t>(kk) * m + i];
        if (av == 0.0) continue;
        const double* brow = b + static_cast<int64_t>(kk) * n;
        for (int j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

void matmul_tn_serial(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i)
        tn_row(a, b, c + static_cast<int64_t>(i) * n, i, k, m, n, accumulate);
}

void matmul_tn_omp(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
        tn_row(a, b, c + static_cast<int64_t>(i) * n, i, k, m, n, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    if (go_parallel(static_cast<int64_t>(m) * k * n))
        matmul_tn_omp(a, b, c, m, k, n, accumulate);
    else
        matmul_tn_serial(a, b, c, m, k, n, accumulate);
}

// ------------------------------------------------------------------ softmax

static inline void causal_softmax_row(double* row, int i, int t) {
    double mx = row[0];
    for (int j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j <= i; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j <= i; ++j) row[j] *= inv;
    for (int j = i + 1; j < t; ++j) row[j] = 0.0;
}

void causal_softmax_rows_serial(double* x, int t) {
    for (int i = 0; i < t; ++i) causal_softmax_row(x + static_cast<int64_t>(i) * t, i, t);
}

void causal_softmax_rows_omp(double* x, int t) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < t; ++i) causal_softmax_row(x + static_cast<int64_t>(i) * t, i, t);
}

void causal_softmax_rows(double* x, int t) {
    if (go_parallel(static_cast<int64_t>(t) * t))
        causal_softmax_rows_omp(x, t);
    else
        causal_softmax_rows_serial(x, t);
}

// ------------------------------------------------------------------ rmsnorm

static inline void rmsnorm_row(const double* x, const double* gain, double* y, double* rms_out, int cols, double eps) {
    double ss = 0.0;
    for (int j = 0; j < cols; ++j) ss += x[j] * x[j];
    const double rms = std::sqrt(ss / cols + eps);
    const double inv = 1.0 / rms;
    for (int j = 0; j < cols; ++j) y[j] = x[j] * gain[j] * inv;
    *rms_out = rms;
}

void rmsnorm_rows_serial(const double* x, const double* gain, double* y, double* rms_out, int rows, int cols, double eps) {
    for (int i = 0; i < rows; ++i)
        rmsnorm_row(x + static_cast<int64_t>(i) * cols, gain, y + static_cast<int64_t>(i) * cols, rms_out + i, cols, eps);
}

void rmsnorm_rows_omp(const double* x, const double* gain, double* y, double* rms_out, int rows, int cols, double eps) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i)
        rmsnorm_row(x + static_cast<int64_t>(i) * cols, gain, y + static_cast<int64_t>(i) * cols, rms_out + i, cols, eps);
}

void rmsnorm_rows(const double* x, const double* gain, double* y, double* rms_out, int rows, int cols, double eps) {
    if (go_parallel(static_cast<int64_t>(rows) * cols * 4))
        rmsnorm_rows_omp(x, gain, y, rms_out, rows, cols, eps);
    else
        rmsnorm_rows_serial(x, gain, y, rms_out, rows, cols, eps);
}

}  // namespace kernels
}  // namespace laytext
