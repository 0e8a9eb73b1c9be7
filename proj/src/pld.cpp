// SPDX-License-Identifier: Apache-2.0
#include "psfl/pld.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "psfl/autodiff.hpp"
#include "psfl/errors.hpp"

namespace psfl::pld {

namespace {

double mse_scalar(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("pld: MSE shape mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

double ce_scalar(const Tensor& onehot, const Tensor& probs) {
  if (onehot.numel() != probs.numel()) throw std::invalid_argument("pld: CE length mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < onehot.numel(); ++i)
    if (onehot[i] != 0.0) acc -= onehot[i] * std::log(std::max(probs[i], ad::kLogFloor));
  return acc;
}

double kl_scalar(const Tensor& p, const Tensor& q) {
  if (p.numel() != q.numel()) throw std::invalid_argument("pld: KL length mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < p.numel(); ++i) {
    if (p[i] <= 0.0) continue;
    acc += p[i] * (std::log(std::max(p[i], ad::kLogFloor)) -
                   std::log(std::max(q[i], ad::kLogFloor)));
  }
  return acc;
}

}  // namespace

double task_loss(const DistillStep& step, Which which) {
  if (which == Which::Mentor)
    return ce_scalar(step.label_onehot, step.mentor_probs) +
           mse_scalar(step.input, step.mentor_recon);
  return ce_scalar(step.label_onehot, step.student_probs) +
         mse_scalar(step.input, step.student_recon);
}

double adaptive_distill_loss(const DistillStep& step, Which which, double tau_floor) {
  if (which == Which::Mentor) {
    const double denom = std::max(task_loss(step, Which::Student), tau_floor);
    return kl_scalar(step.mentor_probs, step.student_probs) / denom;
  }
  const double denom = std::max(task_loss(step, Which::Mentor), tau_floor);
  return kl_scalar(step.student_probs, step.mentor_probs) / denom;
}

double adaptive_semantic_loss(const DistillStep& step, double tau_floor) {
  const double num = mse_scalar(step.mentor_semantic, step.student_semantic) +
                     mse_scalar(step.mentor_chan, step.student_chan);
  const double denom =
      std::max(task_loss(step, Which::Mentor) + task_loss(step, Which::Student), tau_floor);
  return num / denom;
}

std::pair<LossBundle, LossBundle> total_losses(const DistillStep& step, double tau_floor) {
  LossBundle mentor, student;
  mentor.task = task_loss(step, Which::Mentor);
  student.task = task_loss(step, Which::Student);
  mentor.dis = adaptive_distill_loss(step, Which::Mentor, tau_floor);
  student.dis = adaptive_distill_loss(step, Which::Student, tau_floor);
  mentor.sem = adaptive_semantic_loss(step, tau_floor);
  student.sem = mentor.sem;
  mentor.total = mentor.task + mentor.dis + mentor.sem;
  student.total = student.task + student.dis + student.sem;
  return {mentor, student};
}

namespace {

struct SampleLosses {
  LossBundle mentor;
  LossBundle student;
};

void add_bundle(LossBundle& acc, const LossBundle& b) {
  acc.task += b.task;
  acc.dis += b.dis;
  acc.sem += b.sem;
  acc.total += b.total;
}

void scale_bundle(LossBundle& b, double s) {
  b.task *= s;
  b.dis *= s;
  b.sem *= s;
  b.total *= s;
}

void check_finite(const LossBundle& b, int epoch, int64_t sample, const char* model) {
  if (std::isfinite(b.total)) return;
  std::ostringstream msg;
  msg << "pld_local_train: non-finite " << model << " loss at epoch " << epoch << ", sample "
      << sample << " (task=" << b.task << ", dis=" << b.dis << ", sem=" << b.sem << ")";
  throw ProtocolError(msg.str());
}

std::vector<EpochTrace> local_train_impl(models::SCModel* mentor, models::SCModel& student,
                                         const data::LabeledDataset& dataset,
                                         const std::vector<int64_t>& shard,
                                         const TrainOptions& opt, Rng& rng) {
  if (shard.empty()) throw ProtocolError("local training: empty shard");
  if (opt.epochs < 1) throw std::invalid_argument("local training: epochs must be >= 1");
  if (opt.batch_size < 1) throw std::invalid_argument("local training: batch_size must be >= 1");

  const bool mutual = mentor != nullptr;
  SgdState mentor_sgd, student_sgd;
  std::vector<EpochTrace> traces;
  std::vector<int64_t> order = shard;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    LossBundle epoch_mentor, epoch_student;

    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opt.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(opt.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      GradientMap mentor_grads, student_grads;

      for (size_t s = start; s < stop; ++s) {
        const int64_t idx = order[s];
        const Tensor& image = dataset.images[static_cast<size_t>(idx)];
        const Tensor label =
            data::one_hot(dataset.labels[static_cast<size_t>(idx)], dataset.classes);

        // Each model transmits over its own channel realization.
        ad::Graph gm, gs;
        models::ForwardValues fm, fs;
        if (mutual) {
          auto re_m = channel::make_realization(mentor->profile.semantic_dim, opt.snr_db, rng,
                                                opt.power_floor);
          fm = models::sc_forward_graph(gm, *mentor, image, re_m);
        }
        auto re_s = channel::make_realization(student.profile.semantic_dim, opt.snr_db, rng,
                                              opt.power_floor);
        fs = models::sc_forward_graph(gs, student, image, re_s);

        ad::Value task_s = ad::add(ad::cross_entropy(gs.constant(label), fs.probabilities),
                                   ad::mse(gs.constant(image), fs.reconstruction));
        const double task_s_v = task_s.val()[0];

        LossBundle bundle_s;
        bundle_s.task = task_s_v;

        if (!mutual) {
          bundle_s.total = task_s_v;
          check_finite(bundle_s, epoch, idx, "student");
          gs.backward(task_s);
          axpy_gradients(student_grads, gs.param_grads(), inv_batch);
          add_bundle(epoch_student, bundle_s);
          continue;
        }

        ad::Value task_m = ad::add(ad::cross_entropy(gm.constant(label), fm.probabilities),
                                   ad::mse(gm.constant(image), fm.reconstruction));
        const double task_m_v = task_m.val()[0];

        // Adaptive weights, frozen at the pre-update values (no gradient
        // flows through the denominators).
        const double w_dis_s = 1.0 / std::max(task_m_v, opt.tau_floor);
        const double w_dis_m = 1.0 / std::max(task_s_v, opt.tau_floor);
        const double w_sem = 1.0 / std::max(task_m_v + task_s_v, opt.tau_floor);

        // Student total: counterpart outputs enter as constants.
        ad::Value dis_s = ad::scale(
            ad::kl_divergence(fs.probabilities, gs.constant(fm.probabilities.val())), w_dis_s);
        ad::Value sem_s = ad::scale(
            ad::add(ad::mse(gs.constant(fm.semantic.val()), fs.semantic),
                    ad::mse(gs.constant(fm.chan_decoded.val()), fs.chan_decoded)),
            w_sem);
        ad::Value total_s = ad::add(ad::add(task_s, dis_s), sem_s);

        ad::Value dis_m = ad::scale(
            ad::kl_divergence(fm.probabilities, gm.constant(fs.probabilities.val())), w_dis_m);
        ad::Value sem_m = ad::scale(
            ad::add(ad::mse(fm.semantic, gm.constant(fs.semantic.val())),
                    ad::mse(fm.chan_decoded, gm.constant(fs.chan_decoded.val()))),
            w_sem);
        ad::Value total_m = ad::add(ad::add(task_m, dis_m), sem_m);

        bundle_s.dis = dis_s.val()[0];
        bundle_s.sem = sem_s.val()[0];
        bundle_s.total = total_s.val()[0];
        LossBundle bundle_m;
        bundle_m.task = task_m_v;
        bundle_m.dis = dis_m.val()[0];
        bundle_m.sem = sem_m.val()[0];
        bundle_m.total = total_m.val()[0];
        check_finite(bundle_s, epoch, idx, "student");
        check_finite(bundle_m, epoch, idx, "mentor");

        gs.backward(total_s);
        axpy_gradients(student_grads, gs.param_grads(), inv_batch);
        gm.backward(total_m);
        axpy_gradients(mentor_grads, gm.param_grads(), inv_batch);

        add_bundle(epoch_student, bundle_s);
        add_bundle(epoch_mentor, bundle_m);
      }

      // Student first, then mentor; both updates use the pre-update losses.
      sgd_step(student.params, student_grads, opt.lr, opt.momentum, &student_sgd);
      if (mutual) sgd_step(mentor->params, mentor_grads, opt.lr, opt.momentum, &mentor_sgd);
    }

    const double inv_n = 1.0 / static_cast<double>(order.size());
    scale_bundle(epoch_student, inv_n);
    scale_bundle(epoch_mentor, inv_n);
    traces.push_back(EpochTrace{epoch_mentor, epoch_student});
  }
  return traces;
}

}  // namespace

std::vector<EpochTrace> pld_local_train(models::SCModel& mentor, models::SCModel& student,
                                        const data::LabeledDataset& dataset,
                                        const std::vector<int64_t>& shard,
                                        const TrainOptions& opt, Rng& rng) {
  return local_train_impl(&mentor, student, dataset, shard, opt, rng);
}

std::vector<EpochTrace> solo_local_train(models::SCModel& student,
                                         const data::LabeledDataset& dataset,
                                         const std::vector<int64_t>& shard,
                                         const TrainOptions& opt, Rng& rng) {
  return local_train_impl(nullptr, student, dataset, shard, opt, rng);
}

}  // namespace psfl::pld
