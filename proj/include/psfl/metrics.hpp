// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "psfl/rng.hpp"
#include "psfl/tensor.hpp"

namespace psfl::metrics {

/// Reference image m and reconstruction m_hat, plus the peak pixel value
/// (1.0 for normalized images, 255 for 8-bit).
struct ImagePair {
  const Tensor& reference;
  const Tensor& reconstruction;
  double max_value = 1.0;
};

/// 10*log10(MAX^2 / MSE). Exact reconstruction yields +infinity.
double psnr(const ImagePair& pair);

/// Global single-window SSIM over the whole image.
double ssim(const ImagePair& pair, double c1, double c2);

/// SSIM with the conventional constants c1=(0.01*MAX)^2, c2=(0.03*MAX)^2.
double ssim(const ImagePair& pair);

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

/// Frozen linear softmax classifier used for reported accuracy. Trained once
/// on raw images, then applied to reconstructions.
struct LinearProbe {
  Tensor weights;  // [pixels, classes]
  Tensor bias;     // [classes]
  int classes = 0;

  int predict(const Tensor& image) const;
};

struct ProbeOptions {
  int iterations = 300;
  double lr = 0.5;
};

LinearProbe train_linear_probe(const std::vector<Tensor>& images,
                               const std::vector<int>& labels, int classes,
                               const ProbeOptions& opt = {});

}  // namespace psfl::metrics
