// SPDX-License-Identifier: Apache-2.0
#include "psfl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "psfl/errors.hpp"

namespace psfl::metrics {

namespace {

double mse(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

void check_pair(const ImagePair& pair) {
  if (!pair.reference.same_shape(pair.reconstruction))
    throw std::invalid_argument("metrics: image shapes differ");
  if (!(pair.max_value > 0.0)) throw std::invalid_argument("metrics: max_value must be > 0");
}

}  // namespace

double psnr(const ImagePair& pair) {
  check_pair(pair);
  const double err = mse(pair.reference, pair.reconstruction);
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(pair.max_value * pair.max_value / err);
}

double ssim(const ImagePair& pair, double c1, double c2) {
  check_pair(pair);
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw std::invalid_argument("ssim: constants must be > 0");
  const Tensor& a = pair.reference;
  const Tensor& b = pair.reconstruction;
  const double n = static_cast<double>(a.numel());
  double mu_a = 0.0, mu_b = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    mu_a += a[i];
    mu_b += b[i];
  }
  mu_a /= n;
  mu_b /= n;
  double var_a = 0.0, var_b = 0.0, cov = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double da = a[i] - mu_a;
    const double db = b[i] - mu_b;
    var_a += da * da;
    var_b += db * db;
    cov += da * db;
  }
  var_a /= n;
  var_b /= n;
  cov /= n;
  return ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
         ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

double ssim(const ImagePair& pair) {
  const double c1 = (0.01 * pair.max_value) * (0.01 * pair.max_value);
  const double c2 = (0.03 * pair.max_value) * (0.03 * pair.max_value);
  return ssim(pair, c1, c2);
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("accuracy: length mismatch");
  if (predictions.empty()) throw ProtocolError("accuracy: empty input");
  int64_t hits = 0;
  for (size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

int LinearProbe::predict(const Tensor& image) const {
  const int64_t pixels = weights.dim(0);
  if (image.numel() != pixels) throw std::invalid_argument("LinearProbe: pixel count mismatch");
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < classes; ++c) {
    double score = bias[c];
    for (int64_t i = 0; i < pixels; ++i) score += image[i] * weights.at(i, c);
    if (score > best_score) {
      best_score = score;
      best = c;
    }
  }
  return best;
}

LinearProbe train_linear_probe(const std::vector<Tensor>& images,
                               const std::vector<int>& labels, int classes,
                               const ProbeOptions& opt) {
  if (images.empty() || images.size() != labels.size())
    throw std::invalid_argument("train_linear_probe: bad inputs");
  const int64_t pixels = images[0].numel();
  const int64_t n = static_cast<int64_t>(images.size());

  LinearProbe probe;
  probe.classes = classes;
  probe.weights = Tensor::zeros({pixels, classes});
  probe.bias = Tensor::zeros({classes});

  std::vector<double> logits(static_cast<size_t>(classes));
  Tensor gw({pixels, classes}), gb({classes});
  for (int it = 0; it < opt.iterations; ++it) {
    std::fill(gw.values().begin(), gw.values().end(), 0.0);
    std::fill(gb.values().begin(), gb.values().end(), 0.0);
    for (int64_t s = 0; s < n; ++s) {
      const Tensor& x = images[static_cast<size_t>(s)];
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < classes; ++c) {
        double z = probe.bias[c];
        for (int64_t i = 0; i < pixels; ++i) z += x[i] * probe.weights.at(i, c);
        logits[static_cast<size_t>(c)] = z;
        mx = std::max(mx, z);
      }
      double sum = 0.0;
      for (int c = 0; c < classes; ++c) {
        logits[static_cast<size_t>(c)] = std::exp(logits[static_cast<size_t>(c)] - mx);
        sum += logits[static_cast<size_t>(c)];
      }
      for (int c = 0; c < classes; ++c) {
        const double p = logits[static_cast<size_t>(c)] / sum;
        const double d = p - (labels[static_cast<size_t>(s)] == c ? 1.0 : 0.0);
        gb[c] += d;
        for (int64_t i = 0; i < pixels; ++i) gw.at(i, c) += d * x[i];
      }
    }
    const double step = opt.lr / static_cast<double>(n);
    for (int64_t i = 0; i < gw.numel(); ++i) probe.weights[i] -= step * gw[i];
    for (int64_t i = 0; i < gb.numel(); ++i) probe.bias[i] -= step * gb[i];
  }
  return probe;
}

}  // namespace psfl::metrics
