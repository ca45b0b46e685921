#include "crashchat/kernels.hpp"

#include <cmath>

namespace crashchat::kernels {

namespace {
constexpr double kRmsEps = 1e-6;
}

// ---------------------------------------------------------------- serial ref

namespace ref {

void matvec(const double* w, const double* b, const double* x, double* y, int rows, int cols) {
  for (int o = 0; o < rows; ++o) {
    const double* row = w + static_cast<std::size_t>(o) * cols;
    double acc = b ? b[o] : 0.0;
    for (int i = 0; i < cols; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

void linear_forward(const double* w, const double* b, const double* x, double* y,
                    int n, int rows, int cols) {
  for (int t = 0; t < n; ++t) {
    for (int o = 0; o < rows; ++o) {
      const double* row = w + static_cast<std::size_t>(o) * cols;
      const double* xt = x + static_cast<std::size_t>(t) * cols;
      double acc = b ? b[o] : 0.0;
      for (int i = 0; i < cols; ++i) acc += row[i] * xt[i];
      y[static_cast<std::size_t>(t) * rows + o] = acc;
    }
  }
}

void linear_backward(const double* w, const double* x, const double* dy,
                     double* dx, double* dw, double* db, int n, int rows, int cols) {
  if (dx) {
    for (int t = 0; t < n; ++t) {
      for (int i = 0; i < cols; ++i) {
        const double* dyt = dy + static_cast<std::size_t>(t) * rows;
        double acc = 0.0;
        for (int o = 0; o < rows; ++o) acc += dyt[o] * w[static_cast<std::size_t>(o) * cols + i];
        dx[static_cast<std::size_t>(t) * cols + i] += acc;
      }
    }
  }
  if (dw) {
    for (int o = 0; o < rows; ++o) {
      for (int i = 0; i < cols; ++i) {
        double acc = 0.0;
        for (int t = 0; t < n; ++t)
          acc += dy[static_cast<std::size_t>(t) * rows + o] * x[static_cast<std::size_t>(t) * cols + i];
        dw[static_cast<std::size_t>(o) * cols + i] += acc;
      }
    }
  }
  if (db) {
    for (int o = 0; o < rows; ++o) {
      double acc = 0.0;
      for (int t = 0; t < n; ++t) acc += dy[static_cast<std::size_t>(t) * rows + o];
      db[o] += acc;
    }
  }
}

void attention_forward(const double* q, const double* k, const double* v,
                       double* probs, double* out, int n, int heads, int head_dim) {
  const int d = heads * head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (int h = 0; h < heads; ++h) {
    for (int t = 0; t < n; ++t) {
      const double* qt = q + static_cast<std::size_t>(t) * d + h * head_dim;
      double* p = probs + (static_cast<std::size_t>(h) * n + t) * n;
      double max_score = -1e300;
      for (int s = 0; s <= t; ++s) {
        const double* ks = k + static_cast<std::size_t>(s) * d + h * head_dim;
        double acc = 0.0;
        for (int i = 0; i < head_dim; ++i) acc += qt[i] * ks[i];
        p[s] = acc * scale;
        if (p[s] > max_score) max_score = p[s];
      }
      double sum = 0.0;
      for (int s = 0; s <= t; ++s) {
        p[s] = std::exp(p[s] - max_score);
        sum += p[s];
      }
      const double inv = 1.0 / sum;
      for (int s = 0; s <= t; ++s) p[s] *= inv;
      double* ot = out + static_cast<std::size_t>(t) * d + h * head_dim;
      for (int i = 0; i < head_dim; ++i) {
        double acc = 0.0;
        for (int s = 0; s <= t; ++s) acc += p[s] * v[static_cast<std::size_t>(s) * d + h * head_dim + i];
        ot[i] = acc;
      }
    }
  }
}

void attention_backward(const double* q, const double* k, const double* v,
                        const double* probs, const double* dout,
                        double* dq, double* dk, double* dv, double* dprobs,
                        int n, int heads, int head_dim) {
  const int d = heads * head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  // per (h, t): probability gradients, softmax backward, dq
  for (int h = 0; h < heads; ++h) {
    for (int t = 0; t < n; ++t) {
      const double* p = probs + (static_cast<std::size_t>(h) * n + t) * n;
      double* dp = dprobs + (static_cast<std::size_t>(h) * n + t) * n;
      const double* dot_ = dout + static_cast<std::size_t>(t) * d + h * head_dim;
      for (int s = 0; s <= t; ++s) {
        const double* vs = v + static_cast<std::size_t>(s) * d + h * head_dim;
        double acc = 0.0;
        for (int i = 0; i < head_dim; ++i) acc += dot_[i] * vs[i];
        dp[s] = acc;
      }
      double dsum = 0.0;
      for (int s = 0; s <= t; ++s) dsum += p[s] * dp[s];
      for (int s = 0; s <= t; ++s) dp[s] = p[s] * (dp[s] - dsum);  // now d(score)
      double* dqt = dq + static_cast<std::size_t>(t) * d + h * head_dim;
      for (int i = 0; i < head_dim; ++i) {
        double acc = 0.0;
        for (int s = 0; s <= t; ++s) acc += dp[s] * k[static_cast<std::size_t>(s) * d + h * head_dim + i];
        dqt[i] += acc * scale;
      }
    }
  }
  // per (h, s): dk, dv gathered over queries t >= s
  for (int h = 0; h < heads; ++h) {
    for (int s = 0; s < n; ++s) {
      double* dks = dk + static_cast<std::size_t>(s) * d + h * head_dim;
      double* dvs = dv + static_cast<std::size_t>(s) * d + h * head_dim;
      for (int i = 0; i < head_dim; ++i) {
        double acc_k = 0.0;
        double acc_v = 0.0;
        for (int t = s; t < n; ++t) {
          const std::size_t row = (static_cast<std::size_t>(h) * n + t) * n + s;
          acc_k += dprobs[row] * q[static_cast<std::size_t>(t) * d + h * head_dim + i];
          acc_v += probs[row] * dout[static_cast<std::size_t>(t) * d + h * head_dim + i];
        }
        dks[i] += acc_k * scale;
        dvs[i] += acc_v;
      }
    }
  }
}

void rmsnorm_forward(const double* x, double* y, double* inv_norms, int n, int dim) {
  for (int t = 0; t < n; ++t) {
    const double* xt = x + static_cast<std::size_t>(t) * dim;
    double ms = 0.0;
    for (int i = 0; i < dim; ++i) ms += xt[i] * xt[i];
    const double inv = 1.0 / std::sqrt(ms / dim + kRmsEps);
    inv_norms[t] = inv;
    double* yt = y + static_cast<std::size_t>(t) * dim;
    for (int i = 0; i < dim; ++i) yt[i] = xt[i] * inv;
  }
}

void rmsnorm_backward(const double* x, const double* dy, const double* inv_norms,
                      double* dx, int n, int dim) {
  for (int t = 0; t < n; ++t) {
    const double* xt = x + static_cast<std::size_t>(t) * dim;
    const double* dyt = dy + static_cast<std::size_t>(t) * dim;
    double* dxt = dx + static_cast<std::size_t>(t) * dim;
    const double inv = inv_norms[t];
    double dot_ = 0.0;
    for (int i = 0; i < dim; ++i) dot_ += dyt[i] * xt[i];
    const double coeff = dot_ * inv * inv * inv / dim;
    for (int i = 0; i < dim; ++i) dxt[i] += dyt[i] * inv - coeff * xt[i];
  }
}

void adam_step(double* params, const double* grads, double* m, double* v, std::size_t count,
               double lr, double beta1, double beta2, double eps, double bias1, double bias2) {
  const double inv1 = 1.0 / (1.0 - bias1);
  const double inv2 = 1.0 / (1.0 - bias2);
  for (std::size_t i = 0; i < count; ++i) {
    const double g = grads[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    params[i] -= lr * (m[i] * inv1) / (std::sqrt(v[i] * inv2) + eps);
  }
}

}  // namespace ref

// ---------------------------------------------------------------- OpenMP

void matvec(const double* w, const double* b, const double* x, double* y, int rows, int cols) {
#pragma omp parallel for schedule(static)
  for (int o = 0; o < rows; ++o) {
    const double* row = w + static_cast<std::size_t>(o) * cols;
    double acc = b ? b[o] : 0.0;
    for (int i = 0; i < cols; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

void linear_forward(const double* w, const double* b, const double* x, double* y,
                    int n, int rows, int cols) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int t = 0; t < n; ++t) {
    for (int o = 0; o < rows; ++o) {
      const double* row = w + static_cast<std::size_t>(o) * cols;
      const double* xt = x + static_cast<std::size_t>(t) * cols;
      double acc = b ? b[o] : 0.0;
      for (int i = 0; i < cols; ++i) acc += row[i] * xt[i];
      y[static_cast<std::size_t>(t) * rows + o] = acc;
    }
  }
}

void linear_backward(const double* w, const double* x, const double* dy,
                     double* dx, double* dw, double* db, int n, int rows, int cols) {
  if (dx) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int t = 0; t < n; ++t) {
      for (int i = 0; i < cols; ++i) {
        const double* dyt = dy + static_cast<std::size_t>(t) * rows;
        double acc = 0.0;
        for (int o = 0; o < rows; ++o) acc += dyt[o] * w[static_cast<std::size_t>(o) * cols + i];
        dx[static_cast<std::size_t>(t) * cols + i] += acc;
      }
    }
  }
  if (dw) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int o = 0; o < rows; ++o) {
      for (int i = 0; i < cols; ++i) {
        double acc = 0.0;
        for (int t = 0; t < n; ++t)
          acc += dy[static_cast<std::size_t>(t) * rows + o] * x[static_cast<std::size_t>(t) * cols + i];
        dw[static_cast<std::size_t>(o) * cols + i] += acc;
      }
    }
  }
  if (db) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < rows; ++o) {
      double acc = 0.0;
      for (int t = 0; t < n; ++t) acc += dy[static_cast<std::size_t>(t) * rows + o];
      db[o] += acc;
    }
  }
}

void attention_forward(const double* q, const double* k, const double* v,
                       double* probs, double* out, int n, int heads, int head_dim) {
  const int d = heads * head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
#pragma omp parallel for collapse(2) schedule(static)
  for (int h = 0; h < heads; ++h) {
    for (int t = 0; t < n; ++t) {
      const double* qt = q + static_cast<std::size_t>(t) * d + h * head_dim;
      double* p = probs + (static_cast<std::size_t>(h) * n + t) * n;
      double max_score = -1e300;
      for (int s = 0; s <= t; ++s) {
        const double* ks = k + static_cast<std::size_t>(s) * d + h * head_dim;
        double acc = 0.0;
        for (int i = 0; i < head_dim; ++i) acc += qt[i] * ks[i];
        p[s] = acc * scale;
        if (p[s] > max_score) max_score = p[s];
      }
      double sum = 0.0;
      for (int s = 0; s <= t; ++s) {
        p[s] = std::exp(p[s] - max_score);
        sum += p[s];
      }
      const double inv = 1.0 / sum;
      for (int s = 0; s <= t; ++s) p[s] *= inv;
      double* ot = out + static_cast<std::size_t>(t) * d + h * head_dim;
      for (int i = 0; i < head_dim; ++i) {
        double acc = 0.0;
        for (int s = 0; s <= t; ++s) acc += p[s] * v[static_cast<std::size_t>(s) * d + h * head_dim + i];
        ot[i] = acc;
      }
    }
  }
}

void attention_backward(const double* q, const double* k, const double* v,
                        const double* probs, const double* dout,
                        double* dq, double* dk, double* dv, double* dprobs,
                        int n, int heads, int head_dim) {
  const int d = heads * head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
#pragma omp parallel for collapse(2) schedule(static)
  for (int h = 0; h < heads; ++h) {
    for (int t = 0; t < n; ++t) {
      const double* p = probs + (static_cast<std::size_t>(h) * n + t) * n;
      double* dp = dprobs + (static_cast<std::size_t>(h) * n + t) * n;
      const double* dot_ = dout + static_cast<std::size_t>(t) * d + h * head_dim;
      for (int s = 0; s <= t; ++s) {
        const double* vs = v + static_cast<std::size_t>(s) * d + h * head_dim;
        double acc = 0.0;
        for (int i = 0; i < head_dim; ++i) acc += dot_[i] * vs[i];
        dp[s] = acc;
      }
      double dsum = 0.0;
      for (int s = 0; s <= t; ++s) dsum += p[s] * dp[s];
      for (int s = 0; s <= t; ++s) dp[s] = p[s] * (dp[s] - dsum);
      double* dqt = dq + static_cast<std::size_t>(t) * d + h * head_dim;
      for (int i = 0; i < head_dim; ++i) {
        double acc = 0.0;
        for (int s = 0; s <= t; ++s) acc += dp[s] * k[static_cast<std::size_t>(s) * d + h * head_dim + i];
        dqt[i] += acc * scale;
      }
    }
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int h = 0; h < heads; ++h) {
    for (int s = 0; s < n; ++s) {
      double* dks = dk + static_cast<std::size_t>(s) * d + h * head_dim;
      double* dvs = dv + static_cast<std::size_t>(s) * d + h * head_dim;
      for (int i = 0; i < head_dim; ++i) {
        double acc_k = 0.0;
        double acc_v = 0.0;
        for (int t = s; t < n; ++t) {
          const std::size_t row = (static_cast<std::size_t>(h) * n + t) * n + s;
          acc_k += dprobs[row] * q[static_cast<std::size_t>(t) * d + h * head_dim + i];
          acc_v += probs[row] * dout[static_cast<std::size_t>(t) * d + h * head_dim + i];
        }
        dks[i] += acc_k * scale;
        dvs[i] += acc_v;
      }
    }
  }
}

void rmsnorm_forward(const double* x, double* y, double* inv_norms, int n, int dim) {
#pragma omp parallel for schedule(static)
  for (int t = 0; t < n; ++t) {
    const double* xt = x + static_cast<std::size_t>(t) * dim;
    double ms = 0.0;
    for (int i = 0; i < dim; ++i) ms += xt[i] * xt[i];
    const double inv = 1.0 / std::sqrt(ms / dim + kRmsEps);
    inv_norms[t] = inv;
    double* yt = y + static_cast<std::size_t>(t) * dim;
    for (int i = 0; i < dim; ++i) yt[i] = xt[i] * inv;
  }
}

void rmsnorm_backward(const double* x, const double* dy, const double* inv_norms,
                      double* dx, int n, int dim) {
#pragma omp parallel for schedule(static)
  for (int t = 0; t < n; ++t) {
    const double* xt = x + static_cast<std::size_t>(t) * dim;
    const double* dyt = dy + static_cast<std::size_t>(t) * dim;
    double* dxt = dx + static_cast<std::size_t>(t) * dim;
    const double inv = inv_norms[t];
    double dot_ = 0.0;
    for (int i = 0; i < dim; ++i) dot_ += dyt[i] * xt[i];
    const double coeff = dot_ * inv * inv * inv / dim;
    for (int i = 0; i < dim; ++i) dxt[i] += dyt[i] * inv - coeff * xt[i];
  }
}

void adam_step(double* params, const double* grads, double* m, double* v, std::size_t count,
               double lr, double beta1, double beta2, double eps, double bias1, double bias2) {
  const double inv1 = 1.0 / (1.0 - bias1);
  const double inv2 = 1.0 / (1.0 - bias2);
  const auto n = static_cast<long long>(count);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    const double g = grads[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    params[i] -= lr * (m[i] * inv1) / (std::sqrt(v[i] * inv2) + eps);
  }
}

}  // namespace crashchat::kernels
