// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "psfl/channel.hpp"
#include "psfl/config.hpp"
#include "psfl/data.hpp"
#include "psfl/metrics.hpp"
#include "psfl/models.hpp"
#include "psfl/params.hpp"
#include "psfl/pld.hpp"
#include "psfl/rng.hpp"

namespace psfl::fed {

inline constexpr double kDefaultZetaCap = 0.95;

struct ClientState {
  int id = 0;
  std::vector<int64_t> shard;
  models::SCModel mentor;
  models::SCModel student;  // the FL-carried model
};

/// Sample-count weighted parameter mean. The output mask is all-active; the
/// server re-imposes the persistent mask afterwards.
ParameterSet fedavg_aggregate(const std::vector<const ParameterSet*>& client_params,
                              const std::vector<int64_t>& sample_counts);

/// zeta = (psi_max - mean_k psi_k) / (psi_max - psi_min), evaluated in dB by
/// default; with linear_scale the draws and bounds are converted to linear
/// power ratios first. Out-of-range draws are clamped with a warning.
double compute_prune_ratio(const std::vector<double>& snr_db_per_client, double psi_max_db,
                           double psi_min_db, bool linear_scale = false);

/// Masks exactly floor(zeta * prunable_count) positions, the globally
/// smallest-magnitude active values across prunable tensors. Ties break by
/// (tensor name, flat index) ascending. Masked values become exactly 0.
ParameterSet magnitude_prune(ParameterSet params, double zeta_target,
                             double zeta_cap = kDefaultZetaCap);

/// Moves the persistent mask from zeta_prev to zeta_new: prunes additional
/// smallest-magnitude active weights when the ratio grows, or reactivates
/// uniformly random masked positions (re-initialized to 0) when it shrinks.
ParameterSet adjust_mask(ParameterSet params, double zeta_prev, double zeta_new, Rng& rng,
                         double zeta_cap = kDefaultZetaCap);

/// Replaces every client's student parameters (values and masks) with the
/// pruned global set. Mentors are untouched.
void broadcast_update(const ParameterSet& global, std::vector<ClientState>& clients);

struct ClientRoundStats {
  double snr_db = 0.0;
  int64_t payload_bits = 0;
  double delay_s = 0.0;
  double energy_j = 0.0;
  std::vector<pld::EpochTrace> trace;
  double eval_psnr = 0.0;
  double eval_ssim = 0.0;
  double eval_acc = 0.0;
  double eval_task_loss = 0.0;
};

/// Per-round ledger entry. zeta is the raw ratio from the formula (logged
/// even beyond the cap); zeta_effective is what the mask actually uses.
struct RoundRecord {
  int t = 0;
  double mean_snr_db = 0.0;
  double zeta = 0.0;
  double zeta_effective = 0.0;
  int64_t payload_bits_per_client = 0;
  double delay_mean_s = 0.0;
  double energy_total_j = 0.0;
  double global_loss = 0.0;  // mean across clients of the evaluated task loss
  double global_acc = 0.0;   // mean across clients of probe accuracy
  double global_model_psnr = 0.0;  // aggregated (pruned) global model row
  double global_model_ssim = 0.0;
  double global_model_acc = 0.0;
  std::vector<ClientRoundStats> clients;
};

/// Shared data context: the training set the shard indices point into, the
/// server-held test split, and the frozen linear probe scoring reconstructions.
struct EvalContext {
  const data::LabeledDataset* train = nullptr;
  const data::LabeledDataset* test = nullptr;
  const metrics::LinearProbe* probe = nullptr;
};

using RoundSink = std::function<void(const RoundRecord&)>;
using ServerStepSink = std::function<void(int t, const ParameterSet& global)>;

/// The full PSFL loop: aggregate -> prune ratio -> mask adjustment ->
/// broadcast -> local training -> upload accounting, once per round.
/// Ablations: scheme no_pld trains students alone; no_agp forces zeta = 0;
/// fedavg does both.
std::vector<RoundRecord> run_psfl(const ExperimentConfig& config,
                                  std::vector<ClientState>& clients,
                                  const channel::SNRSchedule& schedule, const EvalContext& eval,
                                  const RoundSink& on_round = {},
                                  const ServerStepSink& on_server_step = {});

}  // namespace psfl::fed
