// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "psfl/params.hpp"

namespace psfl::comms {

/// Uplink budget for one client in one round.
struct LinkBudget {
  double bandwidth_hz = 1e6;
  double tx_power_w = 0.1;
  double snr_db = 0.0;
};

struct EnergyRecord {
  int64_t payload_bits = 0;
  double rate_bps = 0.0;
  double delay_s = 0.0;
  double energy_j = 0.0;
};

/// v = B * log2(1 + psi), psi linear.
double uplink_rate(const LinkBudget& budget);

double transmission_delay(int64_t payload_bits, double rate_bps);

double comm_energy(double tx_power_w, double delay_s);

/// Bits a client uploads for one model: active mask positions times the
/// per-weight width. With `bitmap_overhead`, one extra bit per position is
/// charged for the sparsity bitmap.
int64_t model_payload_bits(const ParameterSet& params, int bits_per_weight,
                           bool bitmap_overhead = false);

EnergyRecord uplink_energy(const LinkBudget& budget, int64_t payload_bits);

}  // namespace psfl::comms
