// SPDX-License-Identifier: Apache-2.0
#include "psfl/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "psfl/csv.hpp"
#include "psfl/errors.hpp"

namespace fs = std::filesystem;

namespace psfl::runner {

namespace {

struct BuiltExperiment {
  data::LabeledDataset train;
  data::LabeledDataset test;
  std::vector<std::vector<int64_t>> shards;
  std::vector<models::Family> mentor_families;
  std::vector<fed::ClientState> clients;
  metrics::LinearProbe probe;
  channel::SNRSchedule schedule;
};

models::Family family_from_letter(const std::string& s) {
  if (s == "M" || s == "GSC-M") return models::Family::GscM;
  if (s == "L" || s == "GSC-L") return models::Family::GscL;
  if (s == "H" || s == "GSC-H") return models::Family::GscH;
  throw ConfigError("unknown mentor profile letter: " + s);
}

/// "auto" assignment: clients sorted by shard size ascending receive mentor
/// families in a 4:3:2 split (computed by largest remainder for any K).
std::vector<models::Family> auto_families(const std::vector<std::vector<int64_t>>& shards) {
  const int k = static_cast<int>(shards.size());
  const double weights[3] = {4.0, 3.0, 2.0};
  int counts[3];
  int assigned = 0;
  double rem[3];
  for (int i = 0; i < 3; ++i) {
    const double share = weights[i] / 9.0 * k;
    counts[i] = static_cast<int>(std::floor(share));
    rem[i] = share - std::floor(share);
    assigned += counts[i];
  }
  while (assigned < k) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  std::vector<int> order(static_cast<size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return shards[static_cast<size_t>(a)].size() < shards[static_cast<size_t>(b)].size();
  });
  std::vector<models::Family> out(static_cast<size_t>(k));
  int pos = 0;
  const models::Family fams[3] = {models::Family::GscM, models::Family::GscL,
                                  models::Family::GscH};
  for (int f = 0; f < 3; ++f)
    for (int i = 0; i < counts[f]; ++i) out[static_cast<size_t>(order[static_cast<size_t>(pos++)])] = fams[f];
  return out;
}

BuiltExperiment build_experiment(const ExperimentConfig& config) {
  BuiltExperiment b;

  if (config.data_source == "synthetic") {
    Rng data_rng(config.seed_data);
    data::SynthGeometry geom;
    geom.height = config.image_size;
    geom.width = config.image_size;
    geom.noise = config.synth_noise;
    data::LabeledDataset all = data::synth_dataset(config.synth_train + config.synth_test,
                                                   config.classes, geom, data_rng);
    b.train.classes = b.test.classes = all.classes;
    b.train.height = b.test.height = all.height;
    b.train.width = b.test.width = all.width;
    b.train.channels = b.test.channels = all.channels;
    for (int64_t i = 0; i < all.size(); ++i) {
      auto& dst = i < config.synth_train ? b.train : b.test;
      dst.images.push_back(std::move(all.images[static_cast<size_t>(i)]));
      dst.labels.push_back(all.labels[static_cast<size_t>(i)]);
    }
  } else {
    b.train = data::load_idx(config.idx_images, config.idx_labels);
    if (!config.idx_test_images.empty()) {
      b.test = data::load_idx(config.idx_test_images, config.idx_test_labels);
    } else {
      // Hold out the trailing fraction as the server test split.
      const int64_t n_test =
          std::max<int64_t>(1, static_cast<int64_t>(config.test_fraction *
                                                    static_cast<double>(b.train.size())));
      data::LabeledDataset train2;
      train2.classes = b.test.classes = b.train.classes;
      train2.height = b.test.height = b.train.height;
      train2.width = b.test.width = b.train.width;
      train2.channels = b.test.channels = b.train.channels;
      const int64_t n_train = b.train.size() - n_test;
      for (int64_t i = 0; i < b.train.size(); ++i) {
        auto& dst = i < n_train ? train2 : b.test;
        dst.images.push_back(std::move(b.train.images[static_cast<size_t>(i)]));
        dst.labels.push_back(b.train.labels[static_cast<size_t>(i)]);
      }
      b.train = std::move(train2);
    }
    if (b.train.height != config.image_size || b.train.width != config.image_size)
      throw ConfigError("model.image_size does not match the loaded dataset");
  }

  data::PartitionSpec spec;
  spec.clients = config.clients;
  spec.concentration = config.dirichlet_r;
  spec.seed = mix_seed(config.seed_data, {0x706172ULL});  // partition substream
  b.shards = data::dirichlet_partition(b.train, spec);

  if (config.profiles == "auto") {
    b.mentor_families = auto_families(b.shards);
  } else {
    for (const auto& p : config.explicit_profiles())
      b.mentor_families.push_back(family_from_letter(p));
  }

  models::ImageSpec img;
  img.height = config.image_size;
  img.width = config.image_size;
  img.channels = config.image_channels;
  img.classes = b.train.classes;

  auto gsc_profile = [&](models::Family fam) {
    models::ModelProfile p = models::desk_profile(fam, img, config.semantic_dim);
    p.embed_dim = config.embed_dim;
    p.heads = static_cast<int>(config.heads);
    p.patch = config.patch;
    p.ff_mult = config.ff_mult;
    return p;
  };
  const models::ModelProfile student_profile =
      models::desk_profile(models::Family::Csc, img, config.semantic_dim);

  // All students share one initialization; mentors are per-client.
  const uint64_t student_seed = mix_seed(config.seed_init, {hash_string("student")});
  for (int k = 0; k < config.clients; ++k) {
    fed::ClientState c;
    c.id = k;
    c.shard = b.shards[static_cast<size_t>(k)];
    c.student = models::build_model(student_profile, student_seed);
    c.mentor = models::build_model(
        gsc_profile(b.mentor_families[static_cast<size_t>(k)]),
        mix_seed(config.seed_init, {hash_string("mentor"), static_cast<uint64_t>(k)}));
    b.clients.push_back(std::move(c));
  }

  b.probe = metrics::train_linear_probe(b.train.images, b.train.labels, b.train.classes);

  Rng sched_rng(config.seed_schedule);
  b.schedule = channel::sample_schedule(config.rounds, config.clients, config.psi_min_db,
                                        config.psi_max_db, sched_rng);
  return b;
}

void write_manifest(const fs::path& dir, const std::string& status, int rounds_done,
                    int failure_round, const std::string& error) {
  std::ofstream out(dir / "MANIFEST.txt");
  out << "status=" << status << "\n";
  out << "rounds_completed=" << rounds_done << "\n";
  if (failure_round >= 0) out << "failure_round=" << failure_round << "\n";
  if (!error.empty()) out << "error=" << error << "\n";
}

}  // namespace

std::vector<fed::RoundRecord> run_experiment(const ExperimentConfig& config,
                                             const std::string& out_dir) {
  validate_config(config);
  const fs::path dir(out_dir);
  fs::create_directories(dir / "checkpoints");

  {
    std::ofstream eff(dir / "effective_config.txt");
    emit_effective_config(config, eff);
  }

  BuiltExperiment built = build_experiment(config);

  std::ofstream ledger(dir / "round_ledger.csv");
  std::ofstream trace(dir / "loss_trace.csv");
  std::ofstream evaluation(dir / "evaluation.csv");
  ledger << kRoundLedgerComment << "\n" << kRoundLedgerHeader << "\n";
  trace << kLossTraceComment << "\n" << kLossTraceHeader << "\n";
  evaluation << kEvaluationComment << "\n" << kEvaluationHeader << "\n";

  const bool pld_on = config.pld_enabled();
  auto on_round = [&](const fed::RoundRecord& r) {
    ledger << r.t << ',' << csv::fmt(r.mean_snr_db) << ',' << csv::fmt(r.zeta) << ','
           << r.payload_bits_per_client << ',' << csv::fmt(r.delay_mean_s) << ','
           << csv::fmt(r.energy_total_j) << ',' << csv::fmt(r.global_loss) << ','
           << csv::fmt(r.global_acc) << "\n";
    for (size_t k = 0; k < r.clients.size(); ++k) {
      const auto& epochs = r.clients[k].trace;
      for (size_t e = 0; e < epochs.size(); ++e) {
        const auto& s = epochs[e].student;
        trace << r.t << ',' << k << ',' << e << ',' << csv::fmt(s.task) << ','
              << csv::fmt(s.dis) << ',' << csv::fmt(s.sem) << ',' << csv::fmt(s.total)
              << ",student\n";
        if (pld_on) {
          const auto& m = epochs[e].mentor;
          trace << r.t << ',' << k << ',' << e << ',' << csv::fmt(m.task) << ','
                << csv::fmt(m.dis) << ',' << csv::fmt(m.sem) << ',' << csv::fmt(m.total)
                << ",mentor\n";
        }
      }
    }
    evaluation << r.t << ",global," << csv::fmt(r.global_model_psnr) << ','
               << csv::fmt(r.global_model_ssim) << ',' << csv::fmt(r.global_model_acc) << "\n";
    for (size_t k = 0; k < r.clients.size(); ++k)
      evaluation << r.t << ',' << k << ',' << csv::fmt(r.clients[k].eval_psnr) << ','
                 << csv::fmt(r.clients[k].eval_ssim) << ',' << csv::fmt(r.clients[k].eval_acc)
                 << "\n";
    ledger.flush();
    trace.flush();
    evaluation.flush();
  };

  models::SCModel checkpoint_shell;
  checkpoint_shell.profile = built.clients[0].student.profile;
  auto on_server_step = [&](int t, const ParameterSet& global) {
    const bool interval_hit =
        config.checkpoint_interval > 0 && t % config.checkpoint_interval == 0;
    const bool last = t == config.rounds - 1;
    if (!interval_hit && !last) return;
    checkpoint_shell.params = global;
    char name[64];
    std::snprintf(name, sizeof(name), "global_round_%04d.ckpt", t);
    models::save_checkpoint(checkpoint_shell, (dir / "checkpoints" / name).string());
    if (last)
      models::save_checkpoint(checkpoint_shell, (dir / "checkpoints" / "global_final.ckpt").string());
  };

  int rounds_done = 0;
  try {
    fed::EvalContext ctx{&built.train, &built.test, &built.probe};
    auto wrapped = [&](const fed::RoundRecord& r) {
      on_round(r);
      ++rounds_done;
    };
    auto records =
        fed::run_psfl(config, built.clients, built.schedule, ctx, wrapped, on_server_step);
    write_manifest(dir, "ok", rounds_done, -1, "");
    return records;
  } catch (const std::exception& e) {
    write_manifest(dir, "failed", rounds_done, rounds_done, e.what());
    throw;
  }
}

LedgerSummary read_ledger(const std::string& dir) {
  const fs::path path = fs::path(dir) / "round_ledger.csv";
  std::ifstream in(path);
  if (!in) throw ProtocolError("compare: cannot read " + path.string());
  LedgerSummary s;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != kRoundLedgerHeader)
        throw ProtocolError("compare: unexpected ledger header in " + path.string());
      header_seen = true;
      continue;
    }
    const auto cols = csv::split(line);
    if (cols.size() != 8)
      throw ProtocolError("compare: malformed ledger row in " + path.string());
    s.mean_snr_db.push_back(std::stod(cols[1]));
    s.zeta.push_back(std::stod(cols[2]));
    s.payload_bits.push_back(std::stoll(cols[3]));
    s.energy_j.push_back(std::stod(cols[5]));
    s.global_loss.push_back(std::stod(cols[6]));
    s.global_acc.push_back(std::stod(cols[7]));
  }
  s.rounds = static_cast<int>(s.energy_j.size());
  if (s.rounds == 0) throw ProtocolError("compare: empty ledger in " + path.string());
  s.final_global_acc = s.global_acc.back();
  s.total_energy_j = std::accumulate(s.energy_j.begin(), s.energy_j.end(), 0.0);
  const double mean = s.total_energy_j / s.rounds;
  double var = 0.0;
  for (double e : s.energy_j) var += (e - mean) * (e - mean);
  s.energy_variance = var / s.rounds;
  return s;
}

void compare_runs(const std::vector<std::string>& dirs, const std::string& out_csv) {
  if (dirs.size() < 2) throw ConfigError("compare: need at least two artifact directories");
  std::vector<LedgerSummary> summaries;
  std::vector<std::string> labels;
  for (const auto& d : dirs) {
    summaries.push_back(read_ledger(d));
    std::string label = fs::path(d).filename().string();
    if (label.empty()) label = fs::path(d).parent_path().filename().string();
    while (std::find(labels.begin(), labels.end(), label) != labels.end()) label += "+";
    labels.push_back(label);
  }
  for (size_t i = 1; i < summaries.size(); ++i)
    if (summaries[i].rounds != summaries[0].rounds)
      throw ProtocolError("compare: round counts differ (" + labels[0] + "=" +
                          std::to_string(summaries[0].rounds) + ", " + labels[i] + "=" +
                          std::to_string(summaries[i].rounds) + ")");

  std::ofstream out(out_csv);
  if (!out) throw ProtocolError("compare: cannot write " + out_csv);
  out << kComparisonComment << "\n";
  out << "key,t";
  for (const auto& l : labels) out << ',' << l;
  out << "\n";
  const int rounds = summaries[0].rounds;
  auto emit_metric = [&](const char* key, auto getter) {
    for (int t = 0; t < rounds; ++t) {
      out << key << ',' << t;
      for (const auto& s : summaries) out << ',' << csv::fmt(getter(s, t));
      out << "\n";
    }
  };
  emit_metric("zeta", [](const LedgerSummary& s, int t) { return s.zeta[static_cast<size_t>(t)]; });
  emit_metric("energy_j",
              [](const LedgerSummary& s, int t) { return s.energy_j[static_cast<size_t>(t)]; });
  emit_metric("global_loss", [](const LedgerSummary& s, int t) {
    return s.global_loss[static_cast<size_t>(t)];
  });
  emit_metric("global_acc", [](const LedgerSummary& s, int t) {
    return s.global_acc[static_cast<size_t>(t)];
  });
  auto emit_summary = [&](const char* key, auto getter) {
    out << key << ',';
    for (const auto& s : summaries) out << ',' << csv::fmt(getter(s));
    out << "\n";
  };
  emit_summary("final_global_acc", [](const LedgerSummary& s) { return s.final_global_acc; });
  emit_summary("total_energy_j", [](const LedgerSummary& s) { return s.total_energy_j; });
  emit_summary("energy_variance_j2", [](const LedgerSummary& s) { return s.energy_variance; });
}

}  // namespace psfl::runner
