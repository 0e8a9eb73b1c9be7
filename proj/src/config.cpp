// SPDX-License-Identifier: Apache-2.0
#include "psfl/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "psfl/errors.hpp"

namespace psfl {

namespace {

struct KeyDesc {
  std::string name;
  bool required = false;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "none";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
  }
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected an integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t d = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected an unsigned integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + key + ": expected a boolean, got '" + v + "'");
}

#define KEY_DOUBLE(keyname, field)                                                       \
  KeyDesc {                                                                              \
    keyname, false,                                                                      \
        [](ExperimentConfig& c, const std::string& v) { c.field = parse_double(keyname, v); }, \
        [](const ExperimentConfig& c) { return fmt_double(c.field); }                    \
  }

#define KEY_INT(keyname, field)                                                            \
  KeyDesc {                                                                                \
    keyname, false,                                                                        \
        [](ExperimentConfig& c, const std::string& v) {                                    \
          c.field = static_cast<decltype(c.field)>(parse_int(keyname, v));                 \
        },                                                                                 \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }                  \
  }

#define KEY_BOOL(keyname, field)                                                         \
  KeyDesc {                                                                              \
    keyname, false,                                                                      \
        [](ExperimentConfig& c, const std::string& v) { c.field = parse_bool(keyname, v); }, \
        [](const ExperimentConfig& c) { return c.field ? std::string("true") : std::string("false"); } \
  }

#define KEY_STRING(keyname, field)                                              \
  KeyDesc {                                                                     \
    keyname, false,                                                             \
        [](ExperimentConfig& c, const std::string& v) { c.field = v; },         \
        [](const ExperimentConfig& c) { return c.field; }                       \
  }

#define KEY_SEED(keyname, field)                                                        \
  KeyDesc {                                                                             \
    keyname, true,                                                                      \
        [](ExperimentConfig& c, const std::string& v) { c.field = parse_u64(keyname, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }               \
  }

const std::vector<KeyDesc>& registry() {
  static const std::vector<KeyDesc> keys = {
      KEY_STRING("scheme", scheme),
      KEY_SEED("seeds.data", seed_data),
      KEY_SEED("seeds.schedule", seed_schedule),
      KEY_SEED("seeds.init", seed_init),
      KEY_SEED("seeds.training", seed_training),
      KEY_INT("clients.count", clients),
      KEY_STRING("clients.profiles", profiles),
      KEY_INT("rounds", rounds),
      KEY_INT("local.epochs", epochs),
      KEY_DOUBLE("local.lr", lr),
      KEY_INT("local.batch_size", batch_size),
      KEY_DOUBLE("local.momentum", momentum),
      KEY_DOUBLE("snr.min_db", psi_min_db),
      KEY_DOUBLE("snr.max_db", psi_max_db),
      KeyDesc{"snr.fixed_train_db", false,
              [](ExperimentConfig& c, const std::string& v) {
                c.fixed_train_snr_db =
                    (v == "none" || v.empty()) ? std::nan("") : parse_double("snr.fixed_train_db", v);
              },
              [](const ExperimentConfig& c) { return fmt_double(c.fixed_train_snr_db); }},
      KEY_DOUBLE("comm.bandwidth_hz", bandwidth_hz),
      KEY_DOUBLE("comm.tx_power_w", tx_power_w),
      KEY_INT("comm.bits_per_weight", bits_per_weight),
      KEY_BOOL("comm.bitmap_overhead", bitmap_overhead),
      KEY_DOUBLE("agp.zeta_cap", zeta_cap),
      KEY_BOOL("agp.linear_snr", agp_linear_snr),
      KEY_DOUBLE("pld.tau_floor", tau_floor),
      KEY_DOUBLE("channel.power_floor", power_floor),
      KEY_STRING("data.source", data_source),
      KEY_STRING("data.idx_images", idx_images),
      KEY_STRING("data.idx_labels", idx_labels),
      KEY_STRING("data.idx_test_images", idx_test_images),
      KEY_STRING("data.idx_test_labels", idx_test_labels),
      KEY_DOUBLE("data.test_fraction", test_fraction),
      KEY_INT("data.synth_train", synth_train),
      KEY_INT("data.synth_test", synth_test),
      KEY_INT("data.classes", classes),
      KEY_DOUBLE("data.synth_noise", synth_noise),
      KEY_DOUBLE("data.dirichlet_r", dirichlet_r),
      KEY_INT("model.image_size", image_size),
      KEY_INT("model.channels", image_channels),
      KEY_INT("model.patch", patch),
      KEY_INT("model.embed_dim", embed_dim),
      KEY_INT("model.heads", heads),
      KEY_INT("model.ff_mult", ff_mult),
      KEY_INT("model.semantic_dim", semantic_dim),
      KEY_DOUBLE("eval.snr_db", eval_snr_db),
      KEY_INT("eval.samples", eval_samples),
      KEY_INT("checkpoint.interval", checkpoint_interval),
      KEY_BOOL("train.parallel_clients", parallel_clients),
  };
  return keys;
}

std::string env_name(const std::string& key) {
  std::string out = "PSFL_";
  for (char c : key) out.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(c)));
  return out;
}

ExperimentConfig from_pairs(const std::map<std::string, std::string>& pairs) {
  ExperimentConfig config;
  std::map<std::string, bool> seen;
  for (const auto& [k, v] : pairs) {
    const KeyDesc* desc = nullptr;
    for (const auto& d : registry())
      if (d.name == k) {
        desc = &d;
        break;
      }
    if (!desc) throw ConfigError("unknown config key: " + k);
    desc->set(config, v);
    seen[k] = true;
  }
  // Environment overrides take precedence over the file.
  for (const auto& d : registry()) {
    if (const char* env = std::getenv(env_name(d.name).c_str())) {
      d.set(config, trim(env));
      seen[d.name] = true;
    }
  }
  for (const auto& d : registry())
    if (d.required && !seen.count(d.name))
      throw ConfigError("missing required config key: " + d.name);
  validate_config(config);
  return config;
}

}  // namespace

std::vector<std::string> ExperimentConfig::explicit_profiles() const {
  std::vector<std::string> out;
  std::stringstream ss(profiles);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

ExperimentConfig parse_config_text(const std::string& text) {
  std::map<std::string, std::string> pairs;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (pairs.count(key)) throw ConfigError("duplicate config key: " + key);
    pairs[key] = value;
  }
  return from_pairs(pairs);
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

void validate_config(const ExperimentConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };

  if (c.scheme != "psfl" && c.scheme != "no_pld" && c.scheme != "no_agp" &&
      c.scheme != "fedavg")
    fail("scheme: must be one of psfl, no_pld, no_agp, fedavg (got '" + c.scheme + "')");
  if (c.clients < 1) fail("clients.count: must be >= 1");
  if (c.rounds < 1) fail("rounds: must be >= 1");
  if (c.epochs < 1) fail("local.epochs: must be >= 1");
  if (c.batch_size < 1) fail("local.batch_size: must be >= 1");
  if (c.lr < 0.0) fail("local.lr: must be >= 0");
  if (c.momentum < 0.0 || c.momentum >= 1.0) fail("local.momentum: must be in [0, 1)");
  if (!(c.psi_min_db < c.psi_max_db))
    fail("snr.min_db must be < snr.max_db (snr.min_db=" + fmt_double(c.psi_min_db) +
         ", snr.max_db=" + fmt_double(c.psi_max_db) + ")");
  if (c.bandwidth_hz <= 0.0) fail("comm.bandwidth_hz: must be > 0");
  if (c.tx_power_w <= 0.0 || c.tx_power_w > 0.1)
    fail("comm.tx_power_w: must be in (0, 0.1] (the configured maximum transmit power)");
  if (c.bits_per_weight != 16 && c.bits_per_weight != 32 && c.bits_per_weight != 64)
    fail("comm.bits_per_weight: must be 16, 32 or 64");
  if (c.zeta_cap < 0.0 || c.zeta_cap >= 1.0) fail("agp.zeta_cap: must be in [0, 1)");
  if (!(c.tau_floor > 0.0)) fail("pld.tau_floor: must be > 0");
  if (!(c.power_floor > 0.0)) fail("channel.power_floor: must be > 0");
  if (c.data_source != "synthetic" && c.data_source != "idx")
    fail("data.source: must be synthetic or idx (got '" + c.data_source + "')");
  if (c.data_source == "idx" && (c.idx_images.empty() || c.idx_labels.empty()))
    fail("data.idx_images and data.idx_labels are required when data.source = idx");
  if (c.test_fraction <= 0.0 || c.test_fraction >= 1.0)
    fail("data.test_fraction: must be in (0, 1)");
  if (c.synth_train < 1 || c.synth_test < 1)
    fail("data.synth_train and data.synth_test must be >= 1");
  if (c.classes < 2) fail("data.classes: must be >= 2");
  if (c.synth_noise < 0.0) fail("data.synth_noise: must be >= 0");
  if (!(c.dirichlet_r > 0.0)) fail("data.dirichlet_r: must be > 0");
  if (c.image_size < 1 || c.image_channels < 1) fail("model.image_size/channels: must be >= 1");
  if (c.patch < 1 || c.image_size % c.patch != 0)
    fail("model.patch: image_size must be divisible by patch");
  if (c.heads < 1 || c.embed_dim % c.heads != 0)
    fail("model.embed_dim must be divisible by model.heads");
  if (c.ff_mult < 1) fail("model.ff_mult: must be >= 1");
  if (c.semantic_dim < 1) fail("model.semantic_dim: must be >= 1");
  if (c.eval_samples < 1) fail("eval.samples: must be >= 1");
  if (c.checkpoint_interval < 0) fail("checkpoint.interval: must be >= 0");

  if (c.profiles != "auto") {
    const auto list = c.explicit_profiles();
    if (static_cast<int>(list.size()) != c.clients)
      fail("clients.profiles: expected " + std::to_string(c.clients) + " entries, got " +
           std::to_string(list.size()));
    for (const auto& p : list)
      if (p != "M" && p != "L" && p != "H" && p != "GSC-M" && p != "GSC-L" && p != "GSC-H")
        fail("clients.profiles: unknown mentor profile '" + p + "'");
  }
  if (!std::isnan(c.fixed_train_snr_db) &&
      (c.fixed_train_snr_db < c.psi_min_db || c.fixed_train_snr_db > c.psi_max_db))
    fail("snr.fixed_train_db: must lie within [snr.min_db, snr.max_db]");
}

void emit_effective_config(const ExperimentConfig& config, std::ostream& out) {
  out << "# psfl effective config v1\n";
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& d : registry()) rows.emplace_back(d.name, d.get(config));
  std::sort(rows.begin(), rows.end());
  for (const auto& [k, v] : rows) out << k << " = " << v << "\n";
}

std::vector<std::string> config_key_names() {
  std::vector<std::string> out;
  for (const auto& d : registry()) out.push_back(d.name);
  return out;
}

}  // namespace psfl
