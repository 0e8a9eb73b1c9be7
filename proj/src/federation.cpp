// SPDX-License-Identifier: Apache-2.0
#include "psfl/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <tuple>

#include "psfl/comms.hpp"
#include "psfl/errors.hpp"

namespace psfl::fed {

namespace {

constexpr uint64_t kMaskRestoreTag = 0x6d61736bULL;  // server mask adjustments
constexpr uint64_t kEvalNoiseTag = 0x6576616cULL;    // evaluation channel draws

int64_t target_masked(double zeta, int64_t prunable) {
  return static_cast<int64_t>(std::floor(zeta * static_cast<double>(prunable)));
}

int64_t masked_count(const ParameterSet& p) { return p.prunable_count() - p.active_prunable_count(); }

void check_zeta(double zeta, double cap, const char* op) {
  if (!(zeta >= 0.0) || zeta > cap + 1e-12)
    throw std::invalid_argument(std::string(op) + ": prune ratio " + std::to_string(zeta) +
                                " outside [0, " + std::to_string(cap) + "]");
}

/// Prunes `extra` additional active positions, smallest magnitude first.
void prune_smallest(ParameterSet& params, int64_t extra) {
  if (extra <= 0) return;
  std::vector<std::tuple<double, int, int64_t>> active;  // |value|, tensor idx, element
  std::vector<std::string> names;
  int ti = 0;
  for (auto& [name, entry] : params) {
    if (entry.prunable) {
      for (int64_t i = 0; i < entry.value.numel(); ++i)
        if (entry.mask[i] != 0.0) active.emplace_back(std::abs(entry.value[i]), ti, i);
    }
    names.push_back(name);
    ++ti;
  }
  if (extra > static_cast<int64_t>(active.size()))
    throw ProtocolError("magnitude pruning: not enough active weights to prune");
  std::sort(active.begin(), active.end());
  for (int64_t j = 0; j < extra; ++j) {
    const auto& [mag, tensor_idx, elem] = active[static_cast<size_t>(j)];
    auto& entry = *std::next(params.begin(), tensor_idx);
    entry.second.mask[elem] = 0.0;
    entry.second.value[elem] = 0.0;
  }
}

/// Reactivates `extra` uniformly random masked positions with value 0.
void restore_random(ParameterSet& params, int64_t extra, Rng& rng) {
  if (extra <= 0) return;
  std::vector<std::pair<int, int64_t>> masked;
  int ti = 0;
  for (auto& [name, entry] : params) {
    if (entry.prunable)
      for (int64_t i = 0; i < entry.mask.numel(); ++i)
        if (entry.mask[i] == 0.0) masked.emplace_back(ti, i);
    ++ti;
  }
  if (extra > static_cast<int64_t>(masked.size()))
    throw ProtocolError("mask adjustment: not enough masked weights to restore");
  rng.shuffle(masked);
  for (int64_t j = 0; j < extra; ++j) {
    auto& entry = *std::next(params.begin(), masked[static_cast<size_t>(j)].first);
    entry.second.mask[masked[static_cast<size_t>(j)].second] = 1.0;
    entry.second.value[masked[static_cast<size_t>(j)].second] = 0.0;
  }
}

}  // namespace

ParameterSet fedavg_aggregate(const std::vector<const ParameterSet*>& client_params,
                              const std::vector<int64_t>& sample_counts) {
  if (client_params.empty()) throw ProtocolError("fedavg_aggregate: empty client list");
  if (client_params.size() != sample_counts.size())
    throw ProtocolError("fedavg_aggregate: count/parameter list length mismatch");
  int64_t total = 0;
  for (int64_t n : sample_counts) {
    if (n <= 0) throw ProtocolError("fedavg_aggregate: sample counts must be positive");
    total += n;
  }

  ParameterSet out;
  const ParameterSet& first = *client_params[0];
  for (const auto& [name, entry] : first) {
    Tensor acc = Tensor::zeros(entry.value.shape());
    for (size_t k = 0; k < client_params.size(); ++k) {
      if (!client_params[k]->has(name))
        throw ProtocolError("fedavg_aggregate: client " + std::to_string(k) + " misses " + name);
      const Tensor& w = client_params[k]->value(name);
      if (!w.same_shape(acc))
        throw ProtocolError("fedavg_aggregate: shape mismatch for " + name);
      const double coeff = static_cast<double>(sample_counts[k]) / static_cast<double>(total);
      for (int64_t i = 0; i < w.numel(); ++i) acc[i] += coeff * w[i];
    }
    out.add(name, std::move(acc), entry.prunable);
  }
  for (size_t k = 0; k < client_params.size(); ++k)
    if (client_params[k]->size() != first.size())
      throw ProtocolError("fedavg_aggregate: parameter name sets differ");
  return out;
}

double compute_prune_ratio(const std::vector<double>& snr_db_per_client, double psi_max_db,
                           double psi_min_db, bool linear_scale) {
  if (!(psi_min_db < psi_max_db))
    throw std::invalid_argument("compute_prune_ratio: psi_min must be < psi_max");
  if (snr_db_per_client.empty())
    throw std::invalid_argument("compute_prune_ratio: no SNR draws");
  auto to_scale = [linear_scale](double db) {
    return linear_scale ? channel::snr_db_to_linear(db) : db;
  };
  double mean = 0.0;
  for (double db : snr_db_per_client) {
    if (db < psi_min_db || db > psi_max_db) {
      std::fprintf(stderr, "compute_prune_ratio: SNR draw %g dB outside [%g, %g], clamping\n",
                   db, psi_min_db, psi_max_db);
      db = std::clamp(db, psi_min_db, psi_max_db);
    }
    mean += to_scale(db);
  }
  mean /= static_cast<double>(snr_db_per_client.size());
  return (to_scale(psi_max_db) - mean) / (to_scale(psi_max_db) - to_scale(psi_min_db));
}

ParameterSet magnitude_prune(ParameterSet params, double zeta_target, double zeta_cap) {
  check_zeta(zeta_target, zeta_cap, "magnitude_prune");
  const int64_t want = target_masked(zeta_target, params.prunable_count());
  prune_smallest(params, want - masked_count(params));
  return params;
}

ParameterSet adjust_mask(ParameterSet params, double zeta_prev, double zeta_new, Rng& rng,
                         double zeta_cap) {
  check_zeta(zeta_prev, zeta_cap, "adjust_mask");
  check_zeta(zeta_new, zeta_cap, "adjust_mask");
  const int64_t prunable = params.prunable_count();
  const int64_t want = target_masked(zeta_new, prunable);
  const int64_t have = masked_count(params);
  if (want > have)
    prune_smallest(params, want - have);
  else if (want < have)
    restore_random(params, have - want, rng);
  return params;
}

void broadcast_update(const ParameterSet& global, std::vector<ClientState>& clients) {
  for (ClientState& c : clients) {
    if (c.student.params.size() != global.size())
      throw ProtocolError("broadcast_update: parameter set size mismatch for client " +
                          std::to_string(c.id));
    for (const auto& [name, entry] : global) {
      if (!c.student.params.has(name) ||
          !c.student.params.value(name).same_shape(entry.value))
        throw ProtocolError("broadcast_update: shape mismatch for " + name);
      c.student.params.value(name) = entry.value;
      c.student.params.mask(name) = entry.mask;
    }
  }
}

namespace {

struct ClientEval {
  double psnr = 0.0;
  double ssim = 0.0;
  double acc = 0.0;
  double task_loss = 0.0;
};

ClientEval evaluate_model(const models::SCModel& model, const data::LabeledDataset& test,
                          const metrics::LinearProbe& probe, int samples, double snr_db,
                          double power_floor, uint64_t noise_seed) {
  ClientEval out;
  const int n = std::min<int>(samples, static_cast<int>(test.size()));
  if (n == 0) throw ProtocolError("evaluate_model: empty test split");
  Rng rng(noise_seed);
  std::vector<int> preds(static_cast<size_t>(n));
  std::vector<int> labels(static_cast<size_t>(n));
  double psnr_sum = 0.0, ssim_sum = 0.0, loss_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const Tensor& image = test.images[static_cast<size_t>(i)];
    auto re =
        channel::make_realization(model.profile.semantic_dim, snr_db, rng, power_floor);
    auto fwd = models::sc_forward(model, image, re);
    metrics::ImagePair pair{image, fwd.reconstruction, 1.0};
    psnr_sum += metrics::psnr(pair);
    ssim_sum += metrics::ssim(pair);
    preds[static_cast<size_t>(i)] = probe.predict(fwd.reconstruction);
    labels[static_cast<size_t>(i)] = test.labels[static_cast<size_t>(i)];
    const Tensor onehot = data::one_hot(test.labels[static_cast<size_t>(i)], test.classes);
    double ce = 0.0;
    for (int64_t c = 0; c < onehot.numel(); ++c)
      if (onehot[c] != 0.0)
        ce -= std::log(std::max(fwd.probabilities[c], ad::kLogFloor));
    double se = 0.0;
    for (int64_t px = 0; px < image.numel(); ++px) {
      const double d = image[px] - fwd.reconstruction[px];
      se += d * d;
    }
    loss_sum += ce + se / static_cast<double>(image.numel());
  }
  out.psnr = psnr_sum / n;
  out.ssim = ssim_sum / n;
  out.acc = metrics::accuracy(preds, labels);
  out.task_loss = loss_sum / n;
  return out;
}

}  // namespace

std::vector<RoundRecord> run_psfl(const ExperimentConfig& config,
                                  std::vector<ClientState>& clients,
                                  const channel::SNRSchedule& schedule, const EvalContext& eval,
                                  const RoundSink& on_round,
                                  const ServerStepSink& on_server_step) {
  if (config.rounds < 1) throw ProtocolError("run_psfl: rounds must be >= 1");
  if (clients.empty()) throw ProtocolError("run_psfl: no clients");
  if (schedule.rounds < config.rounds ||
      schedule.clients != static_cast<int>(clients.size()))
    throw ProtocolError("run_psfl: schedule does not cover the experiment");
  if (eval.train == nullptr || eval.test == nullptr || eval.probe == nullptr)
    throw ProtocolError("run_psfl: data context incomplete");

  const bool pld_on = config.pld_enabled();
  const bool agp_on = config.agp_enabled();
  const int K = static_cast<int>(clients.size());

  std::vector<RoundRecord> records;
  records.reserve(static_cast<size_t>(config.rounds));
  double zeta_prev = 0.0;
  ParameterSet previous_mask_source;  // empty until the first server step

  for (int t = 0; t < config.rounds; ++t) {
    RoundRecord rec;
    rec.t = t;
    rec.clients.resize(static_cast<size_t>(K));

    // ---- server step: aggregate, ratio, mask, broadcast --------------------
    std::vector<const ParameterSet*> contributing;
    std::vector<int64_t> counts;
    for (const ClientState& c : clients) {
      if (c.shard.empty()) continue;
      contributing.push_back(&c.student.params);
      counts.push_back(static_cast<int64_t>(c.shard.size()));
    }
    if (contributing.empty()) throw ProtocolError("run_psfl: every shard is empty");
    ParameterSet global = fedavg_aggregate(contributing, counts);

    // Carry the persistent mask over the fresh (all-active) aggregate.
    if (!previous_mask_source.empty())
      for (auto& [name, entry] : global) entry.mask = previous_mask_source.mask(name);
    global.apply_mask();

    const std::vector<double> draws = schedule.round_draws(t);
    double mean_snr = 0.0;
    for (double d : draws) mean_snr += d;
    mean_snr /= static_cast<double>(K);
    rec.mean_snr_db = mean_snr;

    rec.zeta = agp_on ? compute_prune_ratio(draws, config.psi_max_db, config.psi_min_db,
                                            config.agp_linear_snr)
                      : 0.0;
    rec.zeta_effective = std::min(rec.zeta, config.zeta_cap);

    Rng mask_rng(mix_seed(config.seed_schedule, {kMaskRestoreTag, static_cast<uint64_t>(t)}));
    global = adjust_mask(std::move(global), zeta_prev, rec.zeta_effective, mask_rng,
                         config.zeta_cap);
    zeta_prev = rec.zeta_effective;
    previous_mask_source = global;

    broadcast_update(global, clients);
    if (on_server_step) on_server_step(t, global);

    // ---- local training (parallel fan-out, deterministic substreams) -------
    std::vector<std::string> failures(static_cast<size_t>(K));
#pragma omp parallel for schedule(static) if (config.parallel_clients)
    for (int k = 0; k < K; ++k) {
      ClientState& c = clients[static_cast<size_t>(k)];
      if (c.shard.empty()) continue;
      pld::TrainOptions opt;
      opt.epochs = config.epochs;
      opt.lr = config.lr;
      opt.batch_size = config.batch_size;
      opt.momentum = config.momentum;
      opt.tau_floor = config.tau_floor;
      opt.power_floor = config.power_floor;
      opt.snr_db = std::isnan(config.fixed_train_snr_db) ? draws[static_cast<size_t>(k)]
                                                         : config.fixed_train_snr_db;
      Rng rng(mix_seed(config.seed_training,
                       {static_cast<uint64_t>(t), static_cast<uint64_t>(k)}));
      try {
        auto trace = pld_on
                         ? pld::pld_local_train(c.mentor, c.student, *eval.train, c.shard, opt, rng)
                         : pld::solo_local_train(c.student, *eval.train, c.shard, opt, rng);
        rec.clients[static_cast<size_t>(k)].trace = std::move(trace);
      } catch (const std::exception& e) {
        failures[static_cast<size_t>(k)] =
            "round " + std::to_string(t) + ", client " + std::to_string(k) + ": " + e.what();
      }
    }
    for (const auto& f : failures)
      if (!f.empty()) throw ProtocolError("run_psfl: " + f);

    // ---- upload accounting --------------------------------------------------
    double delay_sum = 0.0, energy_sum = 0.0;
    for (int k = 0; k < K; ++k) {
      ClientRoundStats& st = rec.clients[static_cast<size_t>(k)];
      st.snr_db = draws[static_cast<size_t>(k)];
      st.payload_bits = comms::model_payload_bits(clients[static_cast<size_t>(k)].student.params,
                                                  config.bits_per_weight,
                                                  config.bitmap_overhead);
      comms::LinkBudget budget{config.bandwidth_hz, config.tx_power_w, st.snr_db};
      const auto rec_k = comms::uplink_energy(budget, st.payload_bits);
      st.delay_s = rec_k.delay_s;
      st.energy_j = rec_k.energy_j;
      delay_sum += st.delay_s;
      energy_sum += st.energy_j;
    }
    rec.payload_bits_per_client = rec.clients[0].payload_bits;
    rec.delay_mean_s = delay_sum / static_cast<double>(K);
    rec.energy_total_j = energy_sum;

    // ---- evaluation ----------------------------------------------------------
    double loss_sum = 0.0, acc_sum = 0.0;
    for (int k = 0; k < K; ++k) {
      const ClientState& c = clients[static_cast<size_t>(k)];
      const models::SCModel& model = pld_on ? c.mentor : c.student;
      const uint64_t noise_seed = mix_seed(
          config.seed_training, {kEvalNoiseTag, static_cast<uint64_t>(t), static_cast<uint64_t>(k)});
      const ClientEval ev =
          evaluate_model(model, *eval.test, *eval.probe, config.eval_samples,
                         config.eval_snr_db, config.power_floor, noise_seed);
      ClientRoundStats& st = rec.clients[static_cast<size_t>(k)];
      st.eval_psnr = ev.psnr;
      st.eval_ssim = ev.ssim;
      st.eval_acc = ev.acc;
      st.eval_task_loss = ev.task_loss;
      loss_sum += ev.task_loss;
      acc_sum += ev.acc;
    }
    rec.global_loss = loss_sum / static_cast<double>(K);
    rec.global_acc = acc_sum / static_cast<double>(K);

    models::SCModel global_model;
    global_model.profile = clients[0].student.profile;
    global_model.params = global;
    const ClientEval gv = evaluate_model(
        global_model, *eval.test, *eval.probe, config.eval_samples, config.eval_snr_db,
        config.power_floor,
        mix_seed(config.seed_training, {kEvalNoiseTag, static_cast<uint64_t>(t),
                                        static_cast<uint64_t>(K)}));
    rec.global_model_psnr = gv.psnr;
    rec.global_model_ssim = gv.ssim;
    rec.global_model_acc = gv.acc;

    if (on_round) on_round(rec);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace psfl::fed
