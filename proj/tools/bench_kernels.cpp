// SPDX-License-Identifier: Apache-2.0
//
// Times the serial reference kernels against their OpenMP variants and
// verifies that both produce bit-identical outputs.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "psfl/kernels.hpp"
#include "psfl/rng.hpp"

using psfl::Rng;
namespace k = psfl::kernels;

namespace {

template <typename F>
double time_best_of(int reps, F&& f) {
  double best = 1e100;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

bool identical(const std::vector<double>& a, const std::vector<double>& b) {
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void bench_matmul(int64_t n) {
  Rng rng(7);
  std::vector<double> a(static_cast<size_t>(n * n)), b(a.size()), c1(a.size()), c2(a.size());
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  const double ts = time_best_of(3, [&] { k::matmul_serial(a.data(), b.data(), c1.data(), n, n, n); });
  const double tp = time_best_of(3, [&] { k::matmul(a.data(), b.data(), c2.data(), n, n, n); });
  std::printf("matmul %4lldx%-4lld  serial %8.2f ms  omp %8.2f ms  speedup %5.2fx  %s\n",
              static_cast<long long>(n), static_cast<long long>(n), ts * 1e3, tp * 1e3, ts / tp,
              identical(c1, c2) ? "bit-exact" : "MISMATCH");
}

void bench_conv(int64_t c, int64_t hw) {
  Rng rng(11);
  const int64_t co = c, kk = 3, stride = 1, pad = 1;
  std::vector<double> x(static_cast<size_t>(c * hw * hw)), w(static_cast<size_t>(co * c * kk * kk)),
      bias(static_cast<size_t>(co));
  for (auto& v : x) v = rng.normal();
  for (auto& v : w) v = rng.normal();
  for (auto& v : bias) v = rng.normal();
  std::vector<double> y1(static_cast<size_t>(co * hw * hw)), y2(y1.size());
  const double ts = time_best_of(3, [&] {
    k::conv2d_serial(x.data(), w.data(), bias.data(), y1.data(), c, hw, hw, co, kk, kk, stride, pad);
  });
  const double tp = time_best_of(3, [&] {
    k::conv2d(x.data(), w.data(), bias.data(), y2.data(), c, hw, hw, co, kk, kk, stride, pad);
  });
  std::printf("conv2d %2lldx%3lldx%-3lld serial %8.2f ms  omp %8.2f ms  speedup %5.2fx  %s\n",
              static_cast<long long>(c), static_cast<long long>(hw), static_cast<long long>(hw),
              ts * 1e3, tp * 1e3, ts / tp, identical(y1, y2) ? "bit-exact" : "MISMATCH");
}

}  // namespace

int main() {
  std::printf("kernel benchmark (best of 3)\n");
  bench_matmul(128);
  bench_matmul(256);
  bench_matmul(512);
  bench_conv(8, 64);
  bench_conv(16, 128);
  return 0;
}
