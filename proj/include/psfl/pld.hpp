// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "psfl/channel.hpp"
#include "psfl/data.hpp"
#include "psfl/models.hpp"
#include "psfl/rng.hpp"

namespace psfl::pld {

/// Clamp floor for the adaptive-loss denominators; keeps the distillation
/// and semantic weights finite as task losses approach zero.
inline constexpr double kDefaultTauFloor = 1e-3;

enum class Which { Mentor, Student };

/// Per-round loss components. total = task + dis + sem always holds.
struct LossBundle {
  double task = 0.0;
  double dis = 0.0;
  double sem = 0.0;
  double total = 0.0;
};

/// Snapshot of one mutual-distillation step: both models' soft labels,
/// semantic encodings, channel decodings and reconstructions for one input.
struct DistillStep {
  Tensor input;         // m
  Tensor label_onehot;  // y
  Tensor mentor_probs, student_probs;
  Tensor mentor_recon, student_recon;
  Tensor mentor_semantic, student_semantic;
  Tensor mentor_chan, student_chan;
};

/// CE(y, y_hat) + MSE(m, m_hat) for the chosen model.
double task_loss(const DistillStep& step, Which which);

/// Mentor: KL(mentor || student) / student task loss;
/// student: KL(student || mentor) / mentor task loss. The counterpart's task
/// loss is clamped below by tau_floor.
double adaptive_distill_loss(const DistillStep& step, Which which,
                             double tau_floor = kDefaultTauFloor);

/// (MSE(S', S) + MSE(C', C)) / (mentor task + student task); the same value
/// is used for both models.
double adaptive_semantic_loss(const DistillStep& step, double tau_floor = kDefaultTauFloor);

/// (mentor bundle, student bundle) with total = task + dis + sem.
std::pair<LossBundle, LossBundle> total_losses(const DistillStep& step,
                                               double tau_floor = kDefaultTauFloor);

struct TrainOptions {
  int epochs = 2;  // G
  double lr = 0.01;
  int batch_size = 8;
  double momentum = 0.0;
  double tau_floor = kDefaultTauFloor;
  double snr_db = channel::kNoiselessSnrDb;
  double power_floor = channel::kDefaultPowerFloor;
};

struct EpochTrace {
  LossBundle mentor;
  LossBundle student;
};

/// Mutual mentor/student training. Per batch, losses are assembled from the
/// pre-update forward passes of both models; the student is stepped first,
/// then the mentor. The adaptive weights (the task-loss denominators) are
/// treated as constants in the gradients. Returns per-epoch mean bundles.
std::vector<EpochTrace> pld_local_train(models::SCModel& mentor, models::SCModel& student,
                                        const data::LabeledDataset& dataset,
                                        const std::vector<int64_t>& shard,
                                        const TrainOptions& opt, Rng& rng);

/// Baseline local training: the student minimizes its task loss alone
/// (the distillation and semantic terms are absent). Mentor traces are zero.
std::vector<EpochTrace> solo_local_train(models::SCModel& student,
                                         const data::LabeledDataset& dataset,
                                         const std::vector<int64_t>& shard,
                                         const TrainOptions& opt, Rng& rng);

}  // namespace psfl::pld
