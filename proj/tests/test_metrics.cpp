// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "psfl/errors.hpp"
#include "psfl/metrics.hpp"
#include "psfl/rng.hpp"

using namespace psfl;
namespace mt = psfl::metrics;

TEST_CASE("psnr") {
  Rng rng(1);
  const Tensor m = rng.uniform_tensor({8, 8, 1});
  SUBCASE("identical images give the infinity sentinel") {
    CHECK(std::isinf(mt::psnr({m, m, 1.0})));
  }
  SUBCASE("MSE equal to MAX^2 gives exactly 0 dB") {
    Tensor zero = Tensor::zeros({4, 4, 1});
    Tensor off = Tensor::full({4, 4, 1}, 255.0);
    CHECK(mt::psnr({zero, off, 255.0}) == 0.0);
  }
  SUBCASE("MAX=255, MSE=100") {
    Tensor a = Tensor::zeros({10, 10, 1});
    Tensor b = Tensor::full({10, 10, 1}, 10.0);  // squared error 100 everywhere
    CHECK(mt::psnr({a, b, 255.0}) ==
          doctest::Approx(10.0 * std::log10(650.25)).epsilon(1e-14));
  }
  SUBCASE("permutation invariance and monotonicity in MSE") {
    Tensor a = rng.uniform_tensor({16});
    Tensor b = rng.uniform_tensor({16});
    const double base = mt::psnr({a, b, 1.0});
    Tensor ap = a, bp = b;
    std::reverse(ap.values().begin(), ap.values().end());
    std::reverse(bp.values().begin(), bp.values().end());
    CHECK(mt::psnr({ap, bp, 1.0}) == doctest::Approx(base).epsilon(1e-12));

    Tensor worse = b;
    for (int64_t i = 0; i < worse.numel(); ++i) worse[i] += 0.5;
    CHECK(mt::psnr({a, worse, 1.0}) < base);
  }
}

TEST_CASE("ssim") {
  Rng rng(2);
  SUBCASE("identical nonconstant images give exactly 1") {
    const Tensor m = rng.uniform_tensor({8, 8, 1});
    CHECK(mt::ssim({m, m, 1.0}) == 1.0);
  }
  SUBCASE("constant-zero reconstruction matches the scalar oracle") {
    const Tensor m = rng.uniform_tensor({6, 6, 1});
    const Tensor z = Tensor::zeros({6, 6, 1});
    // Scalar oracle: mu2 = 0, var2 = 0, cov = 0.
    double mu = 0.0;
    for (int64_t i = 0; i < m.numel(); ++i) mu += m[i];
    mu /= static_cast<double>(m.numel());
    double var = 0.0;
    for (int64_t i = 0; i < m.numel(); ++i) var += (m[i] - mu) * (m[i] - mu);
    var /= static_cast<double>(m.numel());
    const double c1 = 0.0001, c2 = 0.0009;
    const double expected = (c1 * c2) / ((mu * mu + c1) * (var + c2));
    const double got = mt::ssim({m, z, 1.0}, c1, c2);
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
    CHECK(got > 0.0);
    CHECK(got < 1.0);
  }
  SUBCASE("positive affine rescale keeps structure (near 1 with small constants)") {
    const Tensor m = rng.uniform_tensor({8, 8, 1});
    Tensor scaled = m;
    for (int64_t i = 0; i < m.numel(); ++i) scaled[i] = 0.9 * m[i] + 0.05;
    // Structure term is exactly 1 for a positive affine map; luminance and
    // contrast dominate the residual.
    CHECK(mt::ssim({m, scaled, 1.0}, 1e-6, 1e-6) > 0.8);
    CHECK(mt::ssim({m, scaled, 1.0}) > 0.9);
  }
  SUBCASE("symmetric in its arguments to 1e-12") {
    for (int i = 0; i < 100; ++i) {
      const Tensor a = rng.uniform_tensor({5, 5, 1});
      const Tensor b = rng.uniform_tensor({5, 5, 1});
      CHECK(std::abs(mt::ssim({a, b, 1.0}) - mt::ssim({b, a, 1.0})) <= 1e-12);
    }
  }
  SUBCASE("invariant to identical reshaping") {
    const Tensor a = rng.uniform_tensor({4, 9, 1});
    const Tensor b = rng.uniform_tensor({4, 9, 1});
    const Tensor a2 = a.reshaped({6, 6, 1});
    const Tensor b2 = b.reshaped({6, 6, 1});
    CHECK(mt::ssim({a, b, 1.0}) == mt::ssim({a2, b2, 1.0}));
    CHECK(mt::psnr({a, b, 1.0}) == mt::psnr({a2, b2, 1.0}));
  }
}

TEST_CASE("accuracy") {
  CHECK(mt::accuracy({1, 2, 3}, {1, 2, 3}) == doctest::Approx(1.0));
  CHECK(mt::accuracy({1, 2, 3}, {0, 0, 0}) == doctest::Approx(0.0));
  CHECK(mt::accuracy({1, 2, 3, 4}, {1, 2, 3, 0}) == doctest::Approx(0.75));
  CHECK_THROWS_AS(mt::accuracy({}, {}), ProtocolError);
  CHECK_THROWS_AS(mt::accuracy({1}, {1, 2}), std::invalid_argument);
}
