// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <vector>

#include "psfl/autodiff.hpp"
#include "psfl/rng.hpp"
#include "psfl/tensor.hpp"

namespace psfl::channel {

/// Noise power reference when a transmitted signal has (near-)zero power.
inline constexpr double kDefaultPowerFloor = 1e-12;

inline constexpr double kNoiselessSnrDb = std::numeric_limits<double>::infinity();

inline double snr_db_to_linear(double snr_db) { return std::pow(10.0, snr_db / 10.0); }

/// One channel use: the unit-variance noise draw is fixed, so a forward and
/// its backward see the same realization. Gain is fixed at 1 (pure AWGN).
struct ChannelRealization {
  double snr_db = kNoiselessSnrDb;
  Tensor unit_noise;  // standard normal draws, scaled at apply time
  double power_floor = kDefaultPowerFloor;
};

ChannelRealization make_realization(int64_t dim, double snr_db, Rng& rng,
                                    double power_floor = kDefaultPowerFloor);

/// y = x + n with n ~ N(0, sigma^2), sigma^2 = mean(x^2) / 10^(snr_db/10).
/// Noise power is referenced to the empirical signal power of x.
Tensor awgn_transmit(const Tensor& x, double snr_db, Rng& rng,
                     double power_floor = kDefaultPowerFloor);

/// Graph version: the noise (and the power estimate that scales it) is a
/// constant, so gradients pass straight through the channel.
ad::Value awgn(ad::Value x, const ChannelRealization& re);

/// Per-round, per-client SNR draws in dB, uniform on [lo, hi].
struct SNRSchedule {
  int rounds = 0;
  int clients = 0;
  std::vector<double> snr_db;  // rounds x clients, row-major

  double at(int t, int k) const { return snr_db[static_cast<size_t>(t * clients + k)]; }

  std::vector<double> round_draws(int t) const {
    return {snr_db.begin() + static_cast<size_t>(t) * clients,
            snr_db.begin() + static_cast<size_t>(t + 1) * clients};
  }
};

SNRSchedule sample_schedule(int rounds, int clients, double lo_db, double hi_db, Rng& rng);

}  // namespace psfl::channel
