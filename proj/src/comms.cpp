// SPDX-License-Identifier: Apache-2.0
#include "psfl/comms.hpp"

#include <cmath>
#include <stdexcept>

#include "psfl/channel.hpp"
#include "psfl/errors.hpp"

namespace psfl::comms {

double uplink_rate(const LinkBudget& budget) {
  if (budget.bandwidth_hz <= 0.0) throw std::invalid_argument("uplink_rate: bandwidth <= 0");
  return budget.bandwidth_hz * std::log2(1.0 + channel::snr_db_to_linear(budget.snr_db));
}

double transmission_delay(int64_t payload_bits, double rate_bps) {
  if (rate_bps <= 0.0) throw ProtocolError("transmission_delay: link rate is zero");
  return static_cast<double>(payload_bits) / rate_bps;
}

double comm_energy(double tx_power_w, double delay_s) {
  if (tx_power_w < 0.0 || delay_s < 0.0)
    throw std::invalid_argument("comm_energy: negative power or delay");
  return tx_power_w * delay_s;
}

int64_t model_payload_bits(const ParameterSet& params, int bits_per_weight,
                           bool bitmap_overhead) {
  if (bits_per_weight != 16 && bits_per_weight != 32 && bits_per_weight != 64)
    throw std::invalid_argument("model_payload_bits: bits_per_weight must be 16, 32 or 64");
  int64_t bits = params.active_count() * bits_per_weight;
  if (bitmap_overhead) bits += params.total_count();
  return bits;
}

EnergyRecord uplink_energy(const LinkBudget& budget, int64_t payload_bits) {
  EnergyRecord r;
  r.payload_bits = payload_bits;
  r.rate_bps = uplink_rate(budget);
  r.delay_s = transmission_delay(payload_bits, r.rate_bps);
  r.energy_j = comm_energy(budget.tx_power_w, r.delay_s);
  return r;
}

}  // namespace psfl::comms
