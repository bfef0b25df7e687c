#pragma once

#include <cstdint>

namespace laytext {

// Worker cap shared by every parallel region (also settable through the
// LAYTEXT_THREADS environment variable in the CLI).
void set_threads(int n);
int thread_count();

namespace kernels {

// Dense f64 kernels, row-major. Every kernel ships a serial reference and an
// OpenMP variant; the unsuffixed entry point dispatches on thread_count().
// Each output element is written by exactly one thread with a fixed inner
// reduction order, so serial and parallel results are bitwise identical.

// C[m x n] = A[m x k] * B[k x n]            (+= C when accumulate)
void matmul_nn_serial(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void matmul_nn_omp(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);

// C[m x n] = A[m x k] * B[n x k]^T
void matmul_nt_serial(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void matmul_nt_omp(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);

// C[m x n] = A[k x m]^T * B[k x n]
void matmul_tn_serial(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void matmul_tn_omp(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);

// Row-wise softmax over the causal prefix: row i spans columns 0..i, the
// rest is zeroed. In-place.
void causal_softmax_rows_serial(double* x, int t);
void causal_softmax_rows_omp(double* x, int t);
void causal_softmax_rows(double* x, int t);

// y = x * gain / rms(x) per row; rms_out (length rows) receives the row rms.
void rmsnorm_rows_serial(const double* x, const double* gain, double* y, double* rms_out, int rows, int cols, double eps);
void rmsnorm_rows_omp(const double* x, const double* gain, double* y, double* rms_out, int rows, int cols, double eps);
void rmsnorm_rows(const double* x, const double* gain, double* y, double* rms_out, int rows, int cols, double eps);

}  // namespace kernels
}  // namespace laytext
