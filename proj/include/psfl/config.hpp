// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace psfl {

/// All experiment knobs. Parsed from a flat key-value file with dotted
/// sections; every key can also be overridden through the environment as
/// PSFL_<KEY> with dots mapped to underscores (e.g. PSFL_LOCAL_LR).
struct ExperimentConfig {
  // scheme: psfl | no_pld | no_agp | fedavg
  std::string scheme = "psfl";

  // seeds.* (all four required)
  uint64_t seed_data = 0;
  uint64_t seed_schedule = 0;
  uint64_t seed_init = 0;
  uint64_t seed_training = 0;

  // clients.*
  int clients = 9;
  std::string profiles = "auto";  // "auto" or per-client list, e.g. M,M,M,M,L,L,L,H,H

  int rounds = 30;

  // local.*
  int epochs = 2;  // G
  double lr = 0.01;
  int batch_size = 8;
  double momentum = 0.0;

  // snr.*
  double psi_min_db = 0.0;
  double psi_max_db = 25.0;
  double fixed_train_snr_db = std::nan("");  // NaN: train at the sampled per-round SNR

  // comm.*
  double bandwidth_hz = 1e6;
  double tx_power_w = 0.1;
  int bits_per_weight = 32;
  bool bitmap_overhead = false;

  // agp.*
  double zeta_cap = 0.95;
  bool agp_linear_snr = false;  // evaluate the prune-ratio formula on linear SNR

  // pld.*
  double tau_floor = 1e-3;

  // channel.*
  double power_floor = 1e-12;

  // data.*
  std::string data_source = "synthetic";  // synthetic | idx
  std::string idx_images, idx_labels, idx_test_images, idx_test_labels;
  double test_fraction = 0.2;
  int synth_train = 360;
  int synth_test = 120;
  int classes = 10;
  double synth_noise = 0.1;
  double dirichlet_r = 0.9;

  // model.*
  int64_t image_size = 16;
  int64_t image_channels = 1;
  int64_t patch = 4;
  int64_t embed_dim = 16;
  int heads = 2;
  int64_t ff_mult = 2;
  int64_t semantic_dim = 32;

  // eval.*
  double eval_snr_db = 12.5;
  int eval_samples = 100;

  // checkpoint.*
  int checkpoint_interval = 0;  // 0: final checkpoint only

  // train.*
  bool parallel_clients = false;

  bool pld_enabled() const { return scheme == "psfl" || scheme == "no_agp"; }
  bool agp_enabled() const { return scheme == "psfl" || scheme == "no_pld"; }

  /// Per-client mentor family letters resolved from `profiles`; "auto"
  /// requires shard sizes, so it is resolved later by the runner.
  std::vector<std::string> explicit_profiles() const;
};

/// Parses, applies PSFL_* environment overrides, and validates.
/// Unknown keys and constraint violations raise ConfigError with the key path.
ExperimentConfig parse_config(const std::string& path);

/// Parse from in-memory text (same rules; used by tests and `validate`).
ExperimentConfig parse_config_text(const std::string& text);

void validate_config(const ExperimentConfig& config);

/// Writes every key with its effective value, sorted, with a version header.
void emit_effective_config(const ExperimentConfig& config, std::ostream& out);

/// All known key names (for documentation and the env override scan).
std::vector<std::string> config_key_names();

}  // namespace psfl
