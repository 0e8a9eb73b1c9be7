// SPDX-License-Identifier: Apache-2.0
#include "psfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "psfl/errors.hpp"

namespace psfl::data {

namespace {

uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4))
    throw DataError("idx: truncated header in " + path);
  return (static_cast<uint32_t>(buf[0]) << 24) | (static_cast<uint32_t>(buf[1]) << 16) |
         (static_cast<uint32_t>(buf[2]) << 8) | static_cast<uint32_t>(buf[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(buf), 4);
}

}  // namespace

std::vector<std::vector<int64_t>> dirichlet_partition(const LabeledDataset& dataset,
                                                      const PartitionSpec& spec) {
  if (dataset.size() == 0) throw std::invalid_argument("dirichlet_partition: empty dataset");
  if (spec.clients < 1) throw std::invalid_argument("dirichlet_partition: clients < 1");
  if (!(spec.concentration > 0.0))
    throw std::invalid_argument("dirichlet_partition: concentration must be > 0");

  const int k = spec.clients;
  std::vector<std::vector<int64_t>> shards(static_cast<size_t>(k));
  for (int c = 0; c < dataset.classes; ++c) {
    std::vector<int64_t> members;
    for (int64_t i = 0; i < dataset.size(); ++i)
      if (dataset.labels[static_cast<size_t>(i)] == c) members.push_back(i);
    if (members.empty()) continue;

    Rng rng(mix_seed(spec.seed, {static_cast<uint64_t>(c)}));
    std::vector<double> p = k == 1 ? std::vector<double>{1.0} : rng.dirichlet(spec.concentration, k);
    rng.shuffle(members);

    // Largest-remainder rounding of the class's sample count; ties go to the
    // lower client index.
    const auto n = static_cast<int64_t>(members.size());
    std::vector<int64_t> quota(static_cast<size_t>(k));
    std::vector<std::pair<double, int>> rem;
    int64_t assigned = 0;
    for (int j = 0; j < k; ++j) {
      const double share = p[static_cast<size_t>(j)] * static_cast<double>(n);
      quota[static_cast<size_t>(j)] = static_cast<int64_t>(std::floor(share));
      assigned += quota[static_cast<size_t>(j)];
      rem.emplace_back(share - std::floor(share), j);
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (int64_t r = 0; r < n - assigned; ++r) ++quota[static_cast<size_t>(rem[static_cast<size_t>(r)].second)];

    int64_t off = 0;
    for (int j = 0; j < k; ++j) {
      for (int64_t i = 0; i < quota[static_cast<size_t>(j)]; ++i)
        shards[static_cast<size_t>(j)].push_back(members[static_cast<size_t>(off + i)]);
      off += quota[static_cast<size_t>(j)];
    }
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());
  for (int j = 0; j < k; ++j)
    if (shards[static_cast<size_t>(j)].empty())
      std::fprintf(stderr, "dirichlet_partition: client %d received 0 samples\n", j);
  return shards;
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw DataError("idx: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw DataError("idx: cannot open " + labels_path);

  const uint32_t img_magic = read_be32(img, images_path);
  if (img_magic != 0x00000803u)
    throw DataError("idx: bad image magic in " + images_path);
  const uint32_t n_images = read_be32(img, images_path);
  const uint32_t rows = read_be32(img, images_path);
  const uint32_t cols = read_be32(img, images_path);

  const uint32_t lab_magic = read_be32(lab, labels_path);
  if (lab_magic != 0x00000801u)
    throw DataError("idx: bad label magic in " + labels_path);
  const uint32_t n_labels = read_be32(lab, labels_path);
  if (n_images != n_labels)
    throw DataError("idx: image/label count mismatch (" + std::to_string(n_images) + " vs " +
                    std::to_string(n_labels) + ")");

  LabeledDataset ds;
  ds.height = rows;
  ds.width = cols;
  ds.channels = 1;
  ds.images.reserve(n_images);
  ds.labels.reserve(n_labels);

  std::vector<unsigned char> buf(static_cast<size_t>(rows) * cols);
  for (uint32_t i = 0; i < n_images; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw DataError("idx: truncated image payload in " + images_path);
    Tensor t({static_cast<int64_t>(rows), static_cast<int64_t>(cols), 1});
    for (size_t p = 0; p < buf.size(); ++p) t[static_cast<int64_t>(p)] = buf[p] / 255.0;
    ds.images.push_back(std::move(t));
  }
  std::vector<unsigned char> lbuf(n_labels);
  if (n_labels > 0 &&
      !lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(lbuf.size())))
    throw DataError("idx: truncated label payload in " + labels_path);
  int max_label = 0;
  for (uint32_t i = 0; i < n_labels; ++i) {
    ds.labels.push_back(lbuf[i]);
    max_label = std::max(max_label, static_cast<int>(lbuf[i]));
  }
  ds.classes = max_label + 1;
  return ds;
}

void save_idx(const LabeledDataset& dataset, const std::string& images_path,
              const std::string& labels_path) {
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw DataError("idx: cannot write " + images_path);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw DataError("idx: cannot write " + labels_path);

  write_be32(img, 0x00000803u);
  write_be32(img, static_cast<uint32_t>(dataset.size()));
  write_be32(img, static_cast<uint32_t>(dataset.height));
  write_be32(img, static_cast<uint32_t>(dataset.width));
  for (const Tensor& t : dataset.images) {
    for (int64_t i = 0; i < t.numel(); ++i) {
      const double v = std::clamp(t[i], 0.0, 1.0);
      const auto byte = static_cast<unsigned char>(std::lround(v * 255.0));
      img.write(reinterpret_cast<const char*>(&byte), 1);
    }
  }
  write_be32(lab, 0x00000801u);
  write_be32(lab, static_cast<uint32_t>(dataset.size()));
  for (int label : dataset.labels) {
    const auto byte = static_cast<unsigned char>(label);
    lab.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

LabeledDataset synth_dataset(int64_t n, int classes, const SynthGeometry& geometry, Rng& rng) {
  if (n < classes) throw std::invalid_argument("synth_dataset: need at least one sample per class");
  LabeledDataset ds;
  ds.classes = classes;
  ds.height = geometry.height;
  ds.width = geometry.width;
  ds.channels = 1;

  // One blob center per class, evenly spaced on a ring.
  const double cy = (geometry.height - 1) / 2.0;
  const double cx = (geometry.width - 1) / 2.0;
  const double radius = 0.68 * std::min(cy, cx);
  std::vector<Tensor> patterns;
  for (int c = 0; c < classes; ++c) {
    const double theta = 2.0 * M_PI * c / classes;
    const double by = cy + radius * std::sin(theta);
    const double bx = cx + radius * std::cos(theta);
    Tensor t({geometry.height, geometry.width, 1});
    for (int64_t i = 0; i < geometry.height; ++i)
      for (int64_t j = 0; j < geometry.width; ++j) {
        const double d2 = (i - by) * (i - by) + (j - bx) * (j - bx);
        t.at3(i, j, 0) = std::exp(-d2 / (2.0 * 1.6 * 1.6));
      }
    patterns.push_back(std::move(t));
  }

  for (int64_t s = 0; s < n; ++s) {
    const int label = static_cast<int>(s % classes);
    Tensor img = patterns[static_cast<size_t>(label)];
    if (geometry.noise > 0.0)
      for (int64_t i = 0; i < img.numel(); ++i)
        img[i] = std::clamp(img[i] + geometry.noise * rng.normal(), 0.0, 1.0);
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

Tensor one_hot(int label, int classes) {
  Tensor t({classes});
  t[label] = 1.0;
  return t;
}

}  // namespace psfl::data
