#pragma once

#include <cstddef>

namespace crashchat::kernels {

// Dense math used by the model, double precision, row-major.
//
// The default entry points run the OpenMP variants when compiled with
// OpenMP. Work is split so that every output element is produced by
// exactly one thread with a fixed-order inner loop, so results are
// bitwise identical to the serial reference in kernels::ref regardless
// of thread count. The ref:: twins are kept for tests and for the
// bench_kernels comparison target.

// y = W x + b          W: [rows x cols]; b may be null
void matvec(const double* w, const double* b, const double* x, double* y, int rows, int cols);

// Y = X W^T + b        X: [n x cols] -> Y: [n x rows]
void linear_forward(const double* w, const double* b, const double* x, double* y,
                    int n, int rows, int cols);

// dX += dY W ; dW += dY^T X ; db += column sums of dY. Any of dx/dw/db may be null.
void linear_backward(const double* w, const double* x, const double* dy,
                     double* dx, double* dw, double* db, int n, int rows, int cols);

// Causal multi-head attention over one sequence of length n.
// q,k,v,out: [n x heads*head_dim]; probs: [heads x n x n] (lower triangle used).
void attention_forward(const double* q, const double* k, const double* v,
                       double* probs, double* out, int n, int heads, int head_dim);

// dprobs is caller-provided scratch of the same shape as probs.
void attention_backward(const double* q, const double* k, const double* v,
                        const double* probs, const double* dout,
                        double* dq, double* dk, double* dv, double* dprobs,
                        int n, int heads, int head_dim);

// Row-wise RMS normalization; inv_norms (length n) saves 1/rms for backward.
void rmsnorm_forward(const double* x, double* y, double* inv_norms, int n, int dim);
void rmsnorm_backward(const double* x, const double* dy, const double* inv_norms,
                      double* dx, int n, int dim);

// Adam update with bias correction; bias1/bias2 are beta^t powers.
void adam_step(double* params, const double* grads, double* m, double* v, std::size_t count,
               double lr, double beta1, double beta2, double eps, double bias1, double bias2);

namespace ref {

void matvec(const double* w, const double* b, const double* x, double* y, int rows, int cols);
void linear_forward(const double* w, const double* b, const double* x, double* y,
                    int n, int rows, int cols);
void linear_backward(const double* w, const double* x, const double* dy,
                     double* dx, double* dw, double* db, int n, int rows, int cols);
void attention_forward(const double* q, const double* k, const double* v,
                       double* probs, double* out, int n, int heads, int head_dim);
void attention_backward(const double* q, const double* k, const double* v,
                        const double* probs, const double* dout,
                        double* dq, double* dk, double* dv, double* dprobs,
                        int n, int heads, int head_dim);
void rmsnorm_forward(const double* x, double* y, double* inv_norms, int n, int dim);
void rmsnorm_backward(const double* x, const double* dy, const double* inv_norms,
                      double* dx, int n, int dim);
void adam_step(double* params, const double* grads, double* m, double* v, std::size_t count,
               double lr, double beta1, double beta2, double eps, double bias1, double bias2);

}  // namespace ref

}  // namespace crashchat::kernels
