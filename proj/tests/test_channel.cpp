// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "psfl/autodiff.hpp"
#include "psfl/channel.hpp"

using namespace psfl;
namespace ch = psfl::channel;

TEST_CASE("snr dB to linear conversion") {
  CHECK(ch::snr_db_to_linear(0.0) == doctest::Approx(1.0));
  CHECK(ch::snr_db_to_linear(10.0) == doctest::Approx(10.0));
  CHECK(ch::snr_db_to_linear(25.0) == doctest::Approx(316.22776601683793).epsilon(1e-14));
}

TEST_CASE("noiseless sentinel returns the signal unchanged") {
  Rng rng(1);
  const Tensor x = rng.normal_tensor({64});
  Rng noise_rng(2);
  const Tensor y = ch::awgn_transmit(x, ch::kNoiselessSnrDb, noise_rng);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("empirical post-channel SNR matches the target within 0.5 dB") {
  const int64_t n = 100000;
  for (double target : {0.0, 5.0, 10.0, 15.0, 20.0, 25.0}) {
    Rng sig_rng(42);
    const Tensor x = sig_rng.normal_tensor({n});
    Rng noise_rng(static_cast<uint64_t>(1000 + target));
    const Tensor y = ch::awgn_transmit(x, target, noise_rng);
    double sig = 0.0, noise = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      sig += x[i] * x[i];
      const double d = y[i] - x[i];
      noise += d * d;
    }
    const double snr_db = 10.0 * std::log10(sig / noise);
    CHECK(std::abs(snr_db - target) < 0.5);
  }
}

TEST_CASE("awgn noise is unbiased") {
  const int64_t n = 100000;
  Rng sig_rng(7);
  const Tensor x = sig_rng.normal_tensor({n});
  Rng noise_rng(8);
  const Tensor y = ch::awgn_transmit(x, 10.0, noise_rng);
  double mean = 0.0;
  for (int64_t i = 0; i < n; ++i) mean += y[i] - x[i];
  mean /= static_cast<double>(n);
  const double sigma = std::sqrt(1.0 / 10.0);  // unit signal power at 10 dB
  CHECK(std::abs(mean) < 3.0 * sigma / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("zero-power signal falls back to the reference power floor") {
  Rng rng(3);
  const Tensor x = Tensor::zeros({16});
  const Tensor y = ch::awgn_transmit(x, 10.0, rng);
  CHECK(y.all_finite());
  double power = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i) power += y[i] * y[i];
  CHECK(power > 0.0);
  CHECK(power < 1e-9);  // scaled by the 1e-12 floor
}

TEST_CASE("gradient passes straight through the channel") {
  Rng rng(4);
  const Tensor xv = rng.normal_tensor({8});
  SUBCASE("d/dX of |Y|^2 equals 2Y") {
    ad::Graph g;
    auto x = g.param("x", xv);
    Rng noise(5);
    auto re = ch::make_realization(8, 12.0, noise);
    auto y = ch::awgn(x, re);
    auto loss = ad::scale(ad::mse(y, g.constant(Tensor::zeros({8}))), 8.0);  // = |Y|^2
    g.backward(loss);
    const Tensor grad = g.param_grads().at("x");
    for (int64_t i = 0; i < 8; ++i) CHECK(grad[i] == doctest::Approx(2.0 * y.val()[i]));
  }
  SUBCASE("zeroed noise gives the no-channel gradient") {
    auto grad_with = [&](bool through_channel) {
      ad::Graph g;
      auto x = g.param("x", xv);
      ad::Value y = x;
      if (through_channel) {
        ch::ChannelRealization re;
        re.snr_db = 12.0;
        re.unit_noise = Tensor::zeros({8});
        y = ch::awgn(x, re);
      }
      auto loss = ad::mse(y, g.constant(Tensor::zeros({8})));
      g.backward(loss);
      return g.param_grads().at("x");
    };
    const Tensor a = grad_with(true);
    const Tensor b = grad_with(false);
    for (int64_t i = 0; i < 8; ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("schedule sampling") {
  SUBCASE("degenerate interval") {
    Rng rng(1);
    auto s = ch::sample_schedule(4, 3, 10.0, 10.0, rng);
    for (double v : s.snr_db) CHECK(v == 10.0);
  }
  SUBCASE("deterministic under seed") {
    Rng a(9), b(9);
    auto s1 = ch::sample_schedule(5, 4, 0.0, 25.0, a);
    auto s2 = ch::sample_schedule(5, 4, 0.0, 25.0, b);
    CHECK(s1.snr_db == s2.snr_db);
  }
  SUBCASE("uniform marginal mean") {
    Rng rng(11);
    auto s = ch::sample_schedule(100, 100, 0.0, 25.0, rng);  // 10^4 draws
    double mean = 0.0;
    for (double v : s.snr_db) {
      CHECK(v >= 0.0);
      CHECK(v <= 25.0);
      mean += v;
    }
    mean /= static_cast<double>(s.snr_db.size());
    CHECK(std::abs(mean - 12.5) < 0.3);
  }
  SUBCASE("inverted bounds rejected") {
    Rng rng(1);
    CHECK_THROWS_AS(ch::sample_schedule(1, 1, 5.0, 0.0, rng), std::invalid_argument);
  }
}
