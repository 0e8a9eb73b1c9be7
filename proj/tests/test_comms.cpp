// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "psfl/comms.hpp"
#include "psfl/errors.hpp"
#include "psfl/federation.hpp"
#include "psfl/models.hpp"
#include "psfl/rng.hpp"

using namespace psfl;

namespace {

ParameterSet flat_params(Rng& rng, int64_t n) {
  ParameterSet p;
  p.add("w", rng.normal_tensor({n}));
  return p;
}

}  // namespace

TEST_CASE("uplink rate follows the log2 capacity form") {
  CHECK(comms::uplink_rate({1.0, 0.1, 0.0}) == doctest::Approx(1.0));  // log2(2)
  const double snr_db_3 = 10.0 * std::log10(3.0);
  CHECK(comms::uplink_rate({2000.0, 0.1, snr_db_3}) == doctest::Approx(4000.0));
  CHECK(comms::uplink_rate({1e6, 0.1, 10.0}) ==
        doctest::Approx(1e6 * std::log2(11.0)).epsilon(1e-14));
}

TEST_CASE("transmission delay") {
  CHECK(comms::transmission_delay(1000000, 500000.0) == doctest::Approx(2.0));
  CHECK(comms::transmission_delay(0, 123.0) == doctest::Approx(0.0));
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto bits = 1 + rng.uniform_int(1 << 20);
    const double v = rng.uniform(1.0, 1e6);
    CHECK(comms::transmission_delay(bits, v) ==
          doctest::Approx(static_cast<double>(bits) / v));
  }
  CHECK_THROWS_AS(comms::transmission_delay(10, 0.0), ProtocolError);
}

TEST_CASE("communication energy") {
  CHECK(comms::comm_energy(0.1, 2.0) == doctest::Approx(0.2));  // at the max transmit power
  CHECK(comms::comm_energy(0.05, 0.0) == doctest::Approx(0.0));
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const double p = rng.uniform(0.0, 0.1);
    const double tau = rng.uniform(0.0, 100.0);
    CHECK(comms::comm_energy(p, tau) == doctest::Approx(p * tau));
  }
}

TEST_CASE("payload bits count active mask positions") {
  Rng rng(3);
  SUBCASE("half-pruned kiloweight vector at 32-bit") {
    ParameterSet p = flat_params(rng, 1000);
    p = fed::magnitude_prune(std::move(p), 0.5);
    CHECK(comms::model_payload_bits(p, 32) == 16000);
  }
  SUBCASE("full-scale reference count, no pruning") {
    // Documented reference size of the full-scale student model.
    CHECK(models::full_scale_param_count(models::Family::Csc) == 54721065);
    CHECK(static_cast<int64_t>(54721065) * 32 == 1751074080);
  }
  SUBCASE("random mask equals popcount oracle") {
    for (int trial = 0; trial < 10; ++trial) {
      ParameterSet p = flat_params(rng, 64 + rng.uniform_int(512));
      int64_t active = 0;
      for (auto& [name, e] : p)
        for (int64_t i = 0; i < e.mask.numel(); ++i) {
          if (rng.uniform() < 0.4) e.mask[i] = 0.0;
          if (e.mask[i] != 0.0) ++active;
        }
      CHECK(comms::model_payload_bits(p, 32) == active * 32);
      CHECK(comms::model_payload_bits(p, 16, true) == active * 16 + p.total_count());
    }
  }
  SUBCASE("bits per weight is validated") {
    ParameterSet p = flat_params(rng, 8);
    CHECK_THROWS_AS(comms::model_payload_bits(p, 24), std::invalid_argument);
  }
}

TEST_CASE("energy monotonicity") {
  Rng rng(5);
  SUBCASE("strictly decreasing in the prune ratio") {
    comms::LinkBudget budget{1e6, 0.1, 10.0};
    double prev = -1.0;
    for (double zeta : {0.9, 0.75, 0.5, 0.25, 0.0}) {
      ParameterSet p = flat_params(rng, 4096);
      p = fed::magnitude_prune(std::move(p), zeta);
      const auto rec = comms::uplink_energy(budget, comms::model_payload_bits(p, 32));
      CHECK(rec.energy_j > prev);
      prev = rec.energy_j;
    }
  }
  SUBCASE("strictly decreasing in SNR for a fixed payload") {
    double prev = 1e300;
    for (double snr : {0.0, 5.0, 10.0, 15.0, 20.0, 25.0}) {
      const auto rec = comms::uplink_energy({1e6, 0.1, snr}, 1 << 20);
      CHECK(rec.energy_j < prev);
      prev = rec.energy_j;
    }
  }
  SUBCASE("dimensional consistency: P*Z/v equals P*tau exactly") {
    const comms::LinkBudget budget{2.5e5, 0.07, 13.0};
    const int64_t bits = 123457;
    const auto rec = comms::uplink_energy(budget, bits);
    const double direct =
        budget.tx_power_w * (static_cast<double>(bits) / comms::uplink_rate(budget));
    CHECK(rec.energy_j == direct);
  }
}

TEST_CASE("per-round pruned energy never exceeds unpruned energy") {
  Rng rng(6);
  Rng sched_rng(7);
  auto schedule = channel::sample_schedule(10, 1, 0.0, 25.0, sched_rng);
  ParameterSet pruned = flat_params(rng, 2048);
  const ParameterSet dense = pruned;
  double zeta_prev = 0.0;
  for (int t = 0; t < 10; ++t) {
    const double snr = schedule.at(t, 0);
    const double zeta = std::min((25.0 - snr) / 25.0, fed::kDefaultZetaCap);
    Rng mask_rng(static_cast<uint64_t>(t));
    pruned = fed::adjust_mask(std::move(pruned), zeta_prev, zeta, mask_rng);
    zeta_prev = zeta;
    comms::LinkBudget budget{1e6, 0.1, snr};
    const double e_pruned =
        comms::uplink_energy(budget, comms::model_payload_bits(pruned, 32)).energy_j;
    const double e_dense =
        comms::uplink_energy(budget, comms::model_payload_bits(dense, 32)).energy_j;
    CHECK(e_pruned <= e_dense);
  }
}
