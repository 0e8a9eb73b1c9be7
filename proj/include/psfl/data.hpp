// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psfl/rng.hpp"
#include "psfl/tensor.hpp"

namespace psfl::data {

/// Images are [H,W,C] tensors with values in [0,1]; labels index [0, classes).
struct LabeledDataset {
  std::vector<Tensor> images;
  std::vector<int> labels;
  int classes = 0;
  int64_t height = 0;
  int64_t width = 0;
  int64_t channels = 1;

  int64_t size() const { return static_cast<int64_t>(images.size()); }
};

struct PartitionSpec {
  int clients = 1;
  double concentration = 0.9;  // Dirichlet concentration r
  uint64_t seed = 0;
};

/// Per class, draws client proportions from Dirichlet(r * 1_K) and assigns
/// that class's samples by largest-remainder rounding. The returned index
/// sets are disjoint and cover the dataset. Empty shards are allowed (and
/// reported on stderr) in strongly skewed regimes.
std::vector<std::vector<int64_t>> dirichlet_partition(const LabeledDataset& dataset,
                                                      const PartitionSpec& spec);

/// Big-endian IDX ingestion (image magic 0x00000803, label magic 0x00000801).
/// Pixel bytes are scaled to [0,1] by /255.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Writes the dataset in the same IDX layout; pixels are rounded to bytes.
void save_idx(const LabeledDataset& dataset, const std::string& images_path,
              const std::string& labels_path);

struct SynthGeometry {
  int64_t height = 16;
  int64_t width = 16;
  double noise = 0.1;  // additive Gaussian amplitude, clamped to [0,1]
};

/// Class patterns are Gaussian blobs placed on a ring (distinct centers per
/// class), plus per-sample noise. Linearly separable by construction.
LabeledDataset synth_dataset(int64_t n, int classes, const SynthGeometry& geometry, Rng& rng);

Tensor one_hot(int label, int classes);

}  // namespace psfl::data
