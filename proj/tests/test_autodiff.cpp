// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>

#include "doctest.h"
#include "psfl/autodiff.hpp"
#include "psfl/errors.hpp"
#include "psfl/params.hpp"
#include "psfl/rng.hpp"

using namespace psfl;

namespace {

constexpr int kSeeds = 20;

Tensor random_margin(Rng& rng, std::vector<int64_t> shape, double margin = 0.0) {
  Tensor t = rng.normal_tensor(std::move(shape));
  if (margin > 0.0)
    for (int64_t i = 0; i < t.numel(); ++i) t[i] += t[i] >= 0.0 ? margin : -margin;
  return t;
}

/// Max FD error of `fn` over fresh random instances from `make`, kSeeds seeds.
double fd_sweep(const std::function<std::pair<ParameterSet, ad::LossFn>(Rng&)>& make,
                int samples = 10, double eps = 1e-5) {
  double worst = 0.0;
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(1000 + 17 * s);
    auto [params, fn] = make(rng);
    Rng coords(7000 + s);
    worst = std::max(worst, ad::finite_difference_check(fn, params, eps, samples, coords));
  }
  return worst;
}

}  // namespace

TEST_CASE("softmax basics") {
  ad::Graph g;
  SUBCASE("symmetry") {
    auto s = ad::softmax_rows(g.constant(Tensor::row({0.0, 0.0})));
    CHECK(s.val()[0] == doctest::Approx(0.5));
    CHECK(s.val()[1] == doctest::Approx(0.5));
  }
  SUBCASE("max subtraction prevents overflow") {
    auto s = ad::softmax_rows(g.constant(Tensor::row({1000.0, 0.0})));
    CHECK(s.val()[0] == doctest::Approx(1.0));
    CHECK(s.val()[1] == doctest::Approx(0.0));
    CHECK(s.val().all_finite());
  }
  SUBCASE("matches extended-precision evaluation") {
    auto s = ad::softmax_rows(g.constant(Tensor::row({1.0, 2.0, 3.0})));
    long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L);
    long double sum = e1 + e2 + e3;
    CHECK(s.val()[0] == doctest::Approx(static_cast<double>(e1 / sum)).epsilon(1e-14));
    CHECK(s.val()[1] == doctest::Approx(static_cast<double>(e2 / sum)).epsilon(1e-14));
    CHECK(s.val()[2] == doctest::Approx(static_cast<double>(e3 / sum)).epsilon(1e-14));
  }
}

TEST_CASE("softmax properties: normalization and shift invariance") {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(50 + s);
    const int64_t n = 2 + rng.uniform_int(6);
    Tensor x = rng.normal_tensor({n}, 0.0, 3.0);
    ad::Graph g;
    const Tensor sm = ad::softmax_rows(g.constant(x)).val();
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      CHECK(sm[i] >= 0.0);
      sum += sm[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);

    for (double c : {1e-3, 1.0, 500.0, 1e3}) {
      Tensor shifted = x;
      for (int64_t i = 0; i < n; ++i) shifted[i] += c;
      const Tensor sm2 = ad::softmax_rows(g.constant(shifted)).val();
      for (int64_t i = 0; i < n; ++i) CHECK(std::abs(sm[i] - sm2[i]) < 1e-9);
    }
  }
}

TEST_CASE("cross entropy values and errors") {
  ad::Graph g;
  SUBCASE("perfect prediction") {
    auto l = ad::cross_entropy(g.constant(Tensor::row({1, 0})), g.constant(Tensor::row({1, 0})));
    CHECK(l.val()[0] == doctest::Approx(0.0));
  }
  SUBCASE("uniform prediction") {
    auto l = ad::cross_entropy(g.constant(Tensor::row({0, 1})),
                               g.constant(Tensor::row({0.5, 0.5})));
    CHECK(l.val()[0] == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("direct evaluation") {
    auto l = ad::cross_entropy(g.constant(Tensor::row({1, 0, 0})),
                               g.constant(Tensor::row({0.7, 0.2, 0.1})));
    CHECK(l.val()[0] == doctest::Approx(-std::log(0.7)).epsilon(1e-14));
  }
  SUBCASE("length mismatch is a contract violation") {
    CHECK_THROWS_AS(ad::cross_entropy(g.constant(Tensor::row({1, 0, 0})),
                                      g.constant(Tensor::row({0.5, 0.5}))),
                    std::invalid_argument);
  }
  SUBCASE("probability floor keeps the loss finite") {
    auto l = ad::cross_entropy(g.constant(Tensor::row({1, 0})), g.constant(Tensor::row({0, 1})));
    CHECK(l.val()[0] == doctest::Approx(-std::log(ad::kLogFloor)));
  }
}

TEST_CASE("KL divergence values") {
  ad::Graph g;
  SUBCASE("identical distributions") {
    auto l = ad::kl_divergence(g.constant(Tensor::row({0.5, 0.5})),
                               g.constant(Tensor::row({0.5, 0.5})));
    CHECK(l.val()[0] == doctest::Approx(0.0));
  }
  SUBCASE("one-sided mass") {
    auto l = ad::kl_divergence(g.constant(Tensor::row({1, 0})),
                               g.constant(Tensor::row({0.5, 0.5})));
    CHECK(l.val()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("high-precision scalar evaluation") {
    const long double expected =
        0.7L * std::log(0.7L / 0.4L) + 0.3L * std::log(0.3L / 0.6L);
    auto l = ad::kl_divergence(g.constant(Tensor::row({0.7, 0.3})),
                               g.constant(Tensor::row({0.4, 0.6})));
    CHECK(l.val()[0] == doctest::Approx(static_cast<double>(expected)).epsilon(1e-14));
  }
}

TEST_CASE("CE and KL are non-negative on random probability vectors") {
  for (int s = 0; s < kSeeds * 5; ++s) {
    Rng rng(400 + s);
    const int64_t n = 2 + rng.uniform_int(8);
    ad::Graph g;
    auto p = ad::softmax_rows(g.constant(rng.normal_tensor({n}, 0.0, 2.0))).val();
    auto q = ad::softmax_rows(g.constant(rng.normal_tensor({n}, 0.0, 2.0))).val();
    Tensor onehot({n});
    onehot[rng.uniform_int(n)] = 1.0;
    CHECK(ad::cross_entropy(g.constant(onehot), g.constant(p)).val()[0] >= 0.0);
    CHECK(ad::kl_divergence(g.constant(p), g.constant(q)).val()[0] >= 0.0);
    // zero iff equal (within the floor)
    CHECK(ad::kl_divergence(g.constant(p), g.constant(p)).val()[0] ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("quadratic loss has exact derivative") {
  ParameterSet params;
  params.add("theta", Tensor::row({3.0}));
  ad::LossFn fn = [](const ParameterSet& p) {
    ad::Graph g;
    auto theta = g.param("theta", p.value("theta"));
    auto loss = ad::scale(ad::mse(theta, g.constant(Tensor::row({0.0}))), 0.5);
    g.backward(loss);
    return ad::LossEval{loss.val()[0], g.param_grads()};
  };
  ad::LossEval e = fn(params);
  CHECK(e.grads.at("theta")[0] == doctest::Approx(3.0));
  Rng rng(1);
  CHECK(ad::finite_difference_check(fn, params, 1e-5, 4, rng) < 1e-6);
}

TEST_CASE("finite differences: matmul chain (single linear layer + MSE)") {
  auto make = [](Rng& rng) {
    ParameterSet params;
    params.add("w", rng.normal_tensor({4, 3}));
    params.add("b", rng.normal_tensor({3}));
    const Tensor x = rng.normal_tensor({2, 4});
    const Tensor target = rng.normal_tensor({2, 3});
    ad::LossFn fn = [x, target](const ParameterSet& p) {
      ad::Graph g;
      auto y = ad::add_bias(ad::matmul(g.constant(x), g.param("w", p.value("w"))),
                            g.param("b", p.value("b")));
      auto loss = ad::mse(y, g.constant(target));
      g.backward(loss);
      return ad::LossEval{loss.val()[0], g.param_grads()};
    };
    return std::make_pair(std::move(params), std::move(fn));
  };
  CHECK(fd_sweep(make) < 1e-4);
}

TEST_CASE("finite differences: matmul_nt, scale, add") {
  auto make = [](Rng& rng) {
    ParameterSet params;
    params.add("a", rng.normal_tensor({3, 4}));
    params.add("b", rng.normal_tensor({5, 4}));
    params.add("c", rng.normal_tensor({3, 5}));
    const Tensor target = rng.normal_tensor({3, 5});
    ad::LossFn fn = [target](const ParameterSet& p) {
      ad::Graph g;
      auto prod = ad::matmul_nt(g.param("a", p.value("a")), g.param("b", p.value("b")));
      auto y = ad::add(ad::scale(prod, 0.7), g.param("c", p.value("c")));
      auto loss = ad::mse(y, g.constant(target));
      g.backward(loss);
      return ad::LossEval{loss.val()[0], g.param_grads()};
    };
    return std::make_pair(std::move(params), std::move(fn));
  };
  CHECK(fd_sweep(make) < 1e-4);
}

TEST_CASE("finite differences: relu away from the kink") {
  auto make = [](Rng& rng) {
    ParameterSet params;
    params.add("x", random_margin(rng, {4, 4}, 0.05));
    const Tensor target = rng.normal_tensor({4, 4});
    ad::LossFn fn = [target](const ParameterSet& p) {
      ad::Graph g;
      auto loss = ad::mse(ad::relu(g.param("x", p.value("x"))), g.constant(target));
      g.backward(loss);
      return ad::LossEval{loss.val()[0], g.param_grads()};
    };
    return std::make_pair(std::move(params), std::move(fn));
  };
  CHECK(fd_sweep(make) < 1e-4);
}

TEST_CASE("finite differences: layer_norm") {
  auto make = [](Rng& rng) {
    ParameterSet params;
    params.add("x", rng.normal_tensor({3, 6}));
    params.add("g", rng.normal_tensor({6}, 1.0, 0.2));
    params.add("b", rng.normal_tensor({6}, 0.0, 0.2));
    const Tensor target = rng.normal_tensor({3, 6});
    ad::LossFn fn = [target](const ParameterSet& p) {
      ad::Graph g;
      auto y = ad::layer_norm(g.param("x", p.value("x")), g.param("g", p.value("g")),
                              g.param("b", p.value("b")));
      auto loss = ad::mse(y, g.constant(target));
      g.backward(loss);
      return ad::LossEval{loss.val()[0], g.param_grads()};
    };
    return std::make_pair(std::move(params), std::move(fn));
  };
  CHECK(fd_sweep(make) < 1e-4);
}

TEST_CASE("finite differences: softmax, cross entropy, KL") {
  auto make = [](Rng& rng) {
    ParameterSet params;
    params.add("zp", rng.normal_tensor({5}));
    params.add("zq", rng.normal_tensor({5}));
    Tensor onehot({5});
    onehot[rng.uniform_int(5)] = 1.0;
    ad::LossFn fn = [onehot](const ParameterSet& p) {
      ad::Graph g;
      auto sp = ad::softmax_rows(g.param("zp", p.value("zp")));
      auto sq = ad::softmax_rows(g.param("zq", p.value("zq")));
      auto loss = ad::add(ad::cross_entropy(g.constant(onehot), sp), ad::kl_divergence(sp, sq));
      g.backward(loss);
      return ad::LossEval{loss.val()[0], g.param_grads()};
    };
    return std::make_pair(std::move(params), std::move(fn));
  };
  CHECK(fd_sweep(make) < 1e-4);
}

TEST_CASE("finite differences: conv2d and conv_transpose2d") {
  auto make = [](Rng& rng) {
    ParameterSet params;
    params.add("x", rng.normal_tensor({2, 6, 6}));
    params.add("w", rng.normal_tensor({3, 2, 3, 3}));
    params.add("b", rng.normal_tensor({3}));
    params.add("tw", rng.normal_tensor({3, 2, 3, 3}));
    params.add("tb", rng.normal_tensor({2}));
    const Tensor target = rng.normal_tensor({2, 6, 6});
    ad::LossFn fn = [target](const ParameterSet& p) {
      ad::Graph g;
      auto y = ad::conv2d(g.param("x", p.value("x")), g.param("w", p.value("w")),
                          g.param("b", p.value("b")), 2, 1);  // [3,3,3]
      auto up = ad::conv_transpose2d(y, g.param("tw", p.value("tw")),
                                     g.param("tb", p.value("tb")), 2, 1, 6, 6);
      auto loss = ad::mse(up, g.constant(target));
      g.backward(loss);
      return ad::LossEval{loss.val()[0], g.param_grads()};
    };
    return std::make_pair(std::move(params), std::move(fn));
  };
  CHECK(fd_sweep(make) < 1e-4);
}

TEST_CASE("finite differences: patchify, unpatchify, layout moves, concat") {
  auto make = [](Rng& rng) {
    ParameterSet params;
    params.add("img", rng.normal_tensor({4, 4, 2}));
    params.add("left", rng.normal_tensor({4, 3}));
    const Tensor target = rng.normal_tensor({4, 4, 2});
    const Tensor target2 = rng.normal_tensor({4, 11});
    ad::LossFn fn = [target, target2](const ParameterSet& p) {
      ad::Graph g;
      auto img = g.param("img", p.value("img"));
      auto rows = ad::patchify(img, 2);  // [4, 8]
      auto back = ad::unpatchify(rows, 2, 4, 4, 2);
      auto moved = ad::chw_to_hwc(ad::hwc_to_chw(back));
      auto l1 = ad::mse(moved, g.constant(target));
      auto cat = ad::concat_cols({g.param("left", p.value("left")), rows});
      auto l2 = ad::mse(cat, g.constant(target2));
      auto loss = ad::add(l1, l2);
      g.backward(loss);
      return ad::LossEval{loss.val()[0], g.param_grads()};
    };
    return std::make_pair(std::move(params), std::move(fn));
  };
  CHECK(fd_sweep(make) < 1e-4);
}

TEST_CASE("gradients of parameters off the loss path are zero") {
  ad::Graph g;
  auto used = g.param("used", Tensor::row({2.0}));
  auto unused = g.param("unused", Tensor::row({5.0}));
  (void)unused;
  auto loss = ad::mse(used, g.constant(Tensor::row({0.0})));
  g.backward(loss);
  auto grads = g.param_grads();
  CHECK(grads.at("used")[0] == doctest::Approx(4.0));  // d/dx (x^2) = 2x
  CHECK(grads.at("unused")[0] == 0.0);
}

TEST_CASE("forward passes are bit-identical across repeated runs") {
  auto run = [] {
    Rng rng(77);
    ad::Graph g;
    auto x = g.constant(rng.normal_tensor({4, 4}));
    auto w = g.param("w", rng.normal_tensor({4, 4}));
    auto y = ad::softmax_rows(ad::matmul(ad::relu(x), w));
    return y.val();
  };
  const Tensor a = run();
  const Tensor b = run();
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("finite_difference_check rejects a non-deterministic loss") {
  ParameterSet params;
  params.add("x", Tensor::row({1.0}));
  int calls = 0;
  ad::LossFn fn = [&calls](const ParameterSet& p) {
    ad::Graph g;
    auto x = g.param("x", p.value("x"));
    auto loss = ad::scale(ad::mse(x, g.constant(Tensor::row({0.0}))), 1.0 + 0.1 * calls++);
    g.backward(loss);
    return ad::LossEval{loss.val()[0], g.param_grads()};
  };
  Rng rng(5);
  CHECK_THROWS_AS(ad::finite_difference_check(fn, params, 1e-5, 2, rng), ProtocolError);
}

TEST_CASE("finite_difference_check validates epsilon") {
  ParameterSet params;
  params.add("x", Tensor::row({1.0}));
  ad::LossFn fn = [](const ParameterSet& p) {
    ad::Graph g;
    auto x = g.param("x", p.value("x"));
    auto loss = ad::mse(x, g.constant(Tensor::row({0.0})));
    g.backward(loss);
    return ad::LossEval{loss.val()[0], g.param_grads()};
  };
  Rng rng(5);
  CHECK_THROWS_AS(ad::finite_difference_check(fn, params, 0.5, 2, rng), std::invalid_argument);
  CHECK_THROWS_AS(ad::finite_difference_check(fn, params, 0.0, 2, rng), std::invalid_argument);
}
