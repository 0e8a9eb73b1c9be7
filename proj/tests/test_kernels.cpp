// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <vector>

#include "doctest.h"
#include "psfl/kernels.hpp"
#include "psfl/rng.hpp"

using psfl::Rng;
namespace k = psfl::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, int64_t n) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.normal();
  return v;
}

bool bit_exact(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matmul matches a hand-rolled 2x3 * 3x2 product") {
  // A = [[1,2,3],[4,5,6]], B = [[7,8],[9,10],[11,12]]
  const std::vector<double> a = {1, 2, 3, 4, 5, 6};
  const std::vector<double> b = {7, 8, 9, 10, 11, 12};
  std::vector<double> c(4);
  k::matmul_serial(a.data(), b.data(), c.data(), 2, 3, 2);
  CHECK(c[0] == doctest::Approx(58));
  CHECK(c[1] == doctest::Approx(64));
  CHECK(c[2] == doctest::Approx(139));
  CHECK(c[3] == doctest::Approx(154));
}

TEST_CASE("matmul transpose flags agree with explicit transposition") {
  Rng rng(3);
  const int64_t m = 5, kk = 4, n = 3;
  const auto a = random_vec(rng, m * kk);   // m x k
  const auto b = random_vec(rng, kk * n);   // k x n
  std::vector<double> at(static_cast<size_t>(kk * m)), bt(static_cast<size_t>(n * kk));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t l = 0; l < kk; ++l) at[static_cast<size_t>(l * m + i)] = a[static_cast<size_t>(i * kk + l)];
  for (int64_t l = 0; l < kk; ++l)
    for (int64_t j = 0; j < n; ++j) bt[static_cast<size_t>(j * kk + l)] = b[static_cast<size_t>(l * n + j)];

  std::vector<double> base(static_cast<size_t>(m * n)), viaT(base.size());
  k::matmul_serial(a.data(), b.data(), base.data(), m, kk, n, false, false);
  k::matmul_serial(at.data(), bt.data(), viaT.data(), m, kk, n, true, true);
  for (size_t i = 0; i < base.size(); ++i) CHECK(base[i] == doctest::Approx(viaT[i]));
}

TEST_CASE("OpenMP kernels are bit-exact against the serial reference") {
  Rng rng(11);
  SUBCASE("matmul") {
    for (int64_t n : {1, 7, 33, 64}) {
      const auto a = random_vec(rng, n * n);
      const auto b = random_vec(rng, n * n);
      std::vector<double> c1(static_cast<size_t>(n * n)), c2(c1.size());
      k::matmul_serial(a.data(), b.data(), c1.data(), n, n, n);
      k::matmul(a.data(), b.data(), c2.data(), n, n, n);
      CHECK(bit_exact(c1, c2));
    }
  }
  SUBCASE("conv2d and weight grad") {
    const int64_t ci = 3, h = 9, w = 9, co = 4, kk = 3, stride = 2, pad = 1;
    const auto x = random_vec(rng, ci * h * w);
    const auto wt = random_vec(rng, co * ci * kk * kk);
    const auto bias = random_vec(rng, co);
    const int64_t ho = (h + 2 * pad - kk) / stride + 1;
    const int64_t wo = (w + 2 * pad - kk) / stride + 1;
    std::vector<double> y1(static_cast<size_t>(co * ho * wo)), y2(y1.size());
    k::conv2d_serial(x.data(), wt.data(), bias.data(), y1.data(), ci, h, w, co, kk, kk, stride, pad);
    k::conv2d(x.data(), wt.data(), bias.data(), y2.data(), ci, h, w, co, kk, kk, stride, pad);
    CHECK(bit_exact(y1, y2));

    const auto go = random_vec(rng, co * ho * wo);
    std::vector<double> dw1(static_cast<size_t>(co * ci * kk * kk)), dw2(dw1.size());
    k::conv2d_weight_grad_serial(go.data(), x.data(), dw1.data(), co, ho, wo, ci, h, w, kk, kk,
                                 stride, pad);
    k::conv2d_weight_grad(go.data(), x.data(), dw2.data(), co, ho, wo, ci, h, w, kk, kk, stride,
                          pad);
    CHECK(bit_exact(dw1, dw2));
  }
  SUBCASE("conv_transpose2d") {
    const int64_t ci = 4, h = 5, w = 5, co = 2, kk = 3, stride = 2, pad = 1;
    const int64_t ho = (h - 1) * stride - 2 * pad + kk + 1;  // output padding 1
    const auto x = random_vec(rng, ci * h * w);
    const auto wt = random_vec(rng, ci * co * kk * kk);
    const auto bias = random_vec(rng, co);
    std::vector<double> y1(static_cast<size_t>(co * ho * ho)), y2(y1.size());
    k::conv_transpose2d_serial(x.data(), wt.data(), bias.data(), y1.data(), ci, h, w, co, kk, kk,
                               stride, pad, ho, ho);
    k::conv_transpose2d(x.data(), wt.data(), bias.data(), y2.data(), ci, h, w, co, kk, kk,
                        stride, pad, ho, ho);
    CHECK(bit_exact(y1, y2));
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  // <conv(x), y> == <x, tconv(y)> for every stride/pad combination used here.
  Rng rng(17);
  for (int64_t stride : {1, 2}) {
    const int64_t ci = 2, h = 8, w = 8, co = 3, kk = 3, pad = 1;
    const int64_t ho = (h + 2 * pad - kk) / stride + 1;
    const auto x = random_vec(rng, ci * h * w);
    const auto wt = random_vec(rng, co * ci * kk * kk);
    const auto y = random_vec(rng, co * ho * ho);

    std::vector<double> cx(static_cast<size_t>(co * ho * ho));
    k::conv2d_serial(x.data(), wt.data(), nullptr, cx.data(), ci, h, w, co, kk, kk, stride, pad);
    std::vector<double> ty(static_cast<size_t>(ci * h * w));
    k::conv_transpose2d_serial(y.data(), wt.data(), nullptr, ty.data(), co, ho, ho, ci, kk, kk,
                               stride, pad, h, w);

    double lhs = 0.0, rhs = 0.0;
    for (size_t i = 0; i < cx.size(); ++i) lhs += cx[i] * y[i];
    for (size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}
