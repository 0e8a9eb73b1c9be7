// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "psfl/config.hpp"
#include "psfl/federation.hpp"

namespace psfl::runner {

/// CSV headers (versioned via the comment line preceding them).
inline constexpr const char* kRoundLedgerComment = "# psfl round_ledger v1";
inline constexpr const char* kRoundLedgerHeader =
    "t,mean_snr_db,zeta,payload_bits_per_client,delay_s,energy_j,global_loss,global_acc";
inline constexpr const char* kLossTraceComment = "# psfl loss_trace v1";
inline constexpr const char* kLossTraceHeader = "round,client,epoch,task,dis,sem,total,model";
inline constexpr const char* kEvaluationComment = "# psfl evaluation v1";
inline constexpr const char* kEvaluationHeader = "round,scope,psnr,ssim,accuracy";
inline constexpr const char* kComparisonComment = "# psfl comparison v1";

/// Builds the experiment from the config (dataset, partition, models, probe,
/// schedule), runs the round loop, and writes all artifacts into out_dir:
/// effective_config.txt, round_ledger.csv, loss_trace.csv, evaluation.csv,
/// checkpoints/ and MANIFEST.txt. On failure, partial CSVs are kept and the
/// manifest records the failing round. Returns the round records.
std::vector<fed::RoundRecord> run_experiment(const ExperimentConfig& config,
                                             const std::string& out_dir);

/// Aligns the round ledgers of two or more artifact directories into one
/// comparison CSV (per-round columns per run plus summary rows: final
/// accuracy, total energy, energy variance across rounds).
void compare_runs(const std::vector<std::string>& dirs, const std::string& out_csv);

/// Summary metrics parsed back from one artifact directory's round ledger.
struct LedgerSummary {
  int rounds = 0;
  double final_global_acc = 0.0;
  double total_energy_j = 0.0;
  double energy_variance = 0.0;
  std::vector<double> zeta;
  std::vector<double> energy_j;
  std::vector<double> global_loss;
  std::vector<double> global_acc;
  std::vector<double> mean_snr_db;
  std::vector<int64_t> payload_bits;
};

LedgerSummary read_ledger(const std::string& dir);

}  // namespace psfl::runner
