// SPDX-License-Identifier: Apache-2.0
#include "oracle_gen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace psfl::oracles {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ';';
    out += fmt(v[i]);
  }
  return out;
}

std::string join_int(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(v[i]);
  }
  return out;
}

// Extended-precision scalar softmax.
std::vector<double> softmax_ld(const std::vector<double>& x) {
  long double mx = x[0];
  for (double v : x) mx = std::max<long double>(mx, v);
  long double sum = 0.0L;
  std::vector<long double> e(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(x[i]) - mx);
    sum += e[i];
  }
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(e[i] / sum);
  return out;
}

long double kl_ld(const std::vector<double>& p, const std::vector<double>& q) {
  long double acc = 0.0L;
  for (size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) acc += static_cast<long double>(p[i]) * std::log(static_cast<long double>(p[i]) / q[i]);
  return acc;
}

// Sort-based magnitude pruning: mask = 0 for the floor(zeta*n) smallest
// magnitudes, ties broken by lower index.
std::vector<int> prune_mask_by_sort(const std::vector<double>& values, double zeta) {
  const auto n = static_cast<int64_t>(values.size());
  std::vector<int64_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    const double ma = std::abs(values[static_cast<size_t>(a)]);
    const double mb = std::abs(values[static_cast<size_t>(b)]);
    if (ma != mb) return ma < mb;
    return a < b;
  });
  std::vector<int> mask(values.size(), 1);
  const auto cut = static_cast<int64_t>(std::floor(zeta * static_cast<double>(n)));
  for (int64_t i = 0; i < cut; ++i) mask[static_cast<size_t>(order[static_cast<size_t>(i)])] = 0;
  return mask;
}

// Plain long-double matrix loops for the attention case.
struct Mat {
  int64_t rows, cols;
  std::vector<long double> a;
  long double& at(int64_t r, int64_t c) { return a[static_cast<size_t>(r * cols + c)]; }
  long double at(int64_t r, int64_t c) const { return a[static_cast<size_t>(r * cols + c)]; }
};

Mat from(const std::vector<double>& v, int64_t rows, int64_t cols) {
  Mat m{rows, cols, std::vector<long double>(v.begin(), v.end())};
  return m;
}

Mat mul(const Mat& x, const Mat& y) {
  Mat out{x.rows, y.cols, std::vector<long double>(static_cast<size_t>(x.rows * y.cols), 0.0L)};
  for (int64_t i = 0; i < x.rows; ++i)
    for (int64_t j = 0; j < y.cols; ++j) {
      long double acc = 0.0L;
      for (int64_t l = 0; l < x.cols; ++l) acc += x.at(i, l) * y.at(l, j);
      out.at(i, j) = acc;
    }
  return out;
}

std::vector<double> attention_by_hand(const std::vector<double>& z, const std::vector<double>& wq,
                                      const std::vector<double>& wk,
                                      const std::vector<double>& wv, int64_t n, int64_t d,
                                      int64_t dk) {
  const Mat q = mul(from(z, n, d), from(wq, d, dk));
  const Mat k = mul(from(z, n, d), from(wk, d, dk));
  const Mat v = mul(from(z, n, d), from(wv, d, dk));
  Mat scores{n, n, std::vector<long double>(static_cast<size_t>(n * n), 0.0L)};
  const long double inv = 1.0L / std::sqrt(static_cast<long double>(dk));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      long double acc = 0.0L;
      for (int64_t l = 0; l < dk; ++l) acc += q.at(i, l) * k.at(j, l);
      scores.at(i, j) = acc * inv;
    }
  Mat attn{n, n, std::vector<long double>(static_cast<size_t>(n * n), 0.0L)};
  for (int64_t i = 0; i < n; ++i) {
    long double mx = scores.at(i, 0);
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, scores.at(i, j));
    long double sum = 0.0L;
    for (int64_t j = 0; j < n; ++j) {
      attn.at(i, j) = std::exp(scores.at(i, j) - mx);
      sum += attn.at(i, j);
    }
    for (int64_t j = 0; j < n; ++j) attn.at(i, j) /= sum;
  }
  const Mat out = mul(attn, v);
  std::vector<double> flat(static_cast<size_t>(n * dk));
  for (int64_t i = 0; i < n * dk; ++i) flat[static_cast<size_t>(i)] = static_cast<double>(out.a[static_cast<size_t>(i)]);
  return flat;
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("oracle_gen: cannot write " + path.string());
  out << body;
}

}  // namespace

void write_oracles(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  {  // softmax
    std::string body = "name,input,expected,source\n";
    const std::vector<std::pair<std::string, std::vector<double>>> cases = {
        {"symmetric_pair", {0.0, 0.0}},
        {"large_gap", {1000.0, 0.0}},
        {"one_two_three", {1.0, 2.0, 3.0}},
        {"negative_mix", {-1.5, 0.25, 2.0, -0.75}},
    };
    for (const auto& [name, input] : cases) {
      const std::string source = name == "symmetric_pair" ? "closed_form" : "independent_eval";
      body += name + "," + join(input) + "," + join(softmax_ld(input)) + "," + source + "\n";
    }
    write_file(fs::path(dir) / "softmax_cases.csv", body);
  }

  {  // scalar losses, conversions, link budget values
    std::string body = "name,expected,source\n";
    body += "ce_uniform_two," + fmt(std::log(2.0L)) + ",closed_form\n";
    body += "ce_top_prob_0.7," + fmt(-std::log(0.7L)) + ",independent_eval\n";
    body += "kl_identical,0,closed_form\n";
    body += "kl_onesided_half," + fmt(std::log(2.0L)) + ",closed_form\n";
    body += "kl_p73_q46," + fmt(static_cast<double>(kl_ld({0.7, 0.3}, {0.4, 0.6}))) +
            ",independent_eval\n";
    body += "snr_linear_25db," + fmt(static_cast<double>(std::pow(10.0L, 2.5L))) +
            ",independent_eval\n";
    body += "rate_1mhz_10db," + fmt(static_cast<double>(1e6L * std::log2(11.0L))) +
            ",independent_eval\n";
    body += "psnr_max255_mse100," +
            fmt(static_cast<double>(10.0L * std::log10(255.0L * 255.0L / 100.0L))) +
            ",independent_eval\n";
    write_file(fs::path(dir) / "loss_cases.csv", body);
  }

  {  // magnitude pruning
    std::string body = "name,values,zeta,expected_mask,source\n";
    struct Case {
      std::string name;
      std::vector<double> values;
      double zeta;
    };
    const std::vector<Case> cases = {
        {"four_weights_half", {0.1, -0.2, 0.3, -0.4}, 0.5},
        {"eight_weights_quarter", {0.05, -0.6, 0.35, -0.1, 0.8, 0.02, -0.45, 0.2}, 0.25},
        {"eight_weights_threequarter", {0.05, -0.6, 0.35, -0.1, 0.8, 0.02, -0.45, 0.2}, 0.75},
        {"ties_by_index", {0.5, -0.5, 0.5, 0.5}, 0.5},
        {"no_prune", {1.0, 2.0, 3.0}, 0.0},
    };
    for (const auto& c : cases)
      body += c.name + "," + join(c.values) + "," + fmt(c.zeta) + "," +
              join_int(prune_mask_by_sort(c.values, c.zeta)) + ",independent_eval\n";
    write_file(fs::path(dir) / "prune_cases.csv", body);
  }

  {  // prune-ratio table over the configured dB range
    std::string body = "mean_snr_db,psi_min_db,psi_max_db,expected_zeta,source\n";
    const double means[5] = {0.0, 6.25, 12.5, 18.75, 25.0};
    for (double m : means)
      body += fmt(m) + ",0,25," + fmt((25.0 - m) / 25.0) + ",closed_form\n";
    write_file(fs::path(dir) / "zeta_table.csv", body);
  }

  {  // single-head attention, hand matrix arithmetic
    const std::vector<double> z = {0.3, -0.1, 0.7, 0.2};
    const std::vector<double> wq = {0.5, 0.1, -0.2, 0.4};
    const std::vector<double> wk = {0.3, -0.3, 0.8, 0.2};
    const std::vector<double> wv = {1.0, 0.0, 0.5, -0.5};
    std::string body = "name,z,wq,wk,wv,rows,dim,expected,source\n";
    body += "two_token_case," + join(z) + "," + join(wq) + "," + join(wk) + "," + join(wv) +
            ",2,2," + join(attention_by_hand(z, wq, wk, wv, 2, 2, 2)) + ",independent_eval\n";
    write_file(fs::path(dir) / "attention_case.csv", body);
  }
}

}  // namespace psfl::oracles
