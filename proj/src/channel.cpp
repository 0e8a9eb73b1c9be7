// SPDX-License-Identifier: Apache-2.0
#include "psfl/channel.hpp"

#include <cmath>
#include <stdexcept>

namespace psfl::channel {

namespace {

double mean_square(const Tensor& x) {
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x[i] * x[i];
  return acc / static_cast<double>(x.numel());
}

}  // namespace

ChannelRealization make_realization(int64_t dim, double snr_db, Rng& rng, double power_floor) {
  ChannelRealization re;
  re.snr_db = snr_db;
  re.power_floor = power_floor;
  if (std::isinf(snr_db))
    re.unit_noise = Tensor::zeros({dim});
  else
    re.unit_noise = rng.normal_tensor({dim});
  return re;
}

Tensor awgn_transmit(const Tensor& x, double snr_db, Rng& rng, double power_floor) {
  if (!x.all_finite()) throw std::invalid_argument("awgn_transmit: non-finite signal");
  if (std::isinf(snr_db)) return x;
  const double power = std::max(mean_square(x), power_floor);
  const double sigma = std::sqrt(power / snr_db_to_linear(snr_db));
  Tensor y = x;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += sigma * rng.normal();
  return y;
}

ad::Value awgn(ad::Value x, const ChannelRealization& re) {
  if (std::isinf(re.snr_db)) return x;
  const Tensor& tx = x.val();
  if (re.unit_noise.numel() != tx.numel())
    throw std::invalid_argument("awgn: realization dimension mismatch");
  const double power = std::max(mean_square(tx), re.power_floor);
  const double sigma = std::sqrt(power / snr_db_to_linear(re.snr_db));
  Tensor noise(tx.shape());
  for (int64_t i = 0; i < noise.numel(); ++i) noise[i] = sigma * re.unit_noise[i];
  return ad::add(x, x.graph->constant(std::move(noise)));
}

SNRSchedule sample_schedule(int rounds, int clients, double lo_db, double hi_db, Rng& rng) {
  if (lo_db > hi_db) throw std::invalid_argument("sample_schedule: lo_db > hi_db");
  SNRSchedule s;
  s.rounds = rounds;
  s.clients = clients;
  s.snr_db.resize(static_cast<size_t>(rounds) * static_cast<size_t>(clients));
  for (auto& v : s.snr_db) v = rng.uniform(lo_db, hi_db);
  return s;
}

}  // namespace psfl::channel
