// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "psfl/data.hpp"
#include "psfl/errors.hpp"
#include "psfl/metrics.hpp"

using namespace psfl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() / ("psfl_data_test_" + std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

// Two 4x4 images, byte-authored: a vertical gradient and a single hot pixel.
std::vector<unsigned char> tiny_images_idx() {
  std::vector<unsigned char> b = {
      0x00, 0x00, 0x08, 0x03,              // magic: unsigned byte, 3 dims
      0x00, 0x00, 0x00, 0x02,              // 2 images
      0x00, 0x00, 0x00, 0x04,              // 4 rows
      0x00, 0x00, 0x00, 0x04,              // 4 cols
  };
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) b.push_back(static_cast<unsigned char>(r * 60));
  for (int i = 0; i < 16; ++i) b.push_back(i == 5 ? 255 : 0);
  return b;
}

std::vector<unsigned char> tiny_labels_idx() {
  return {0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 0x07, 0x02};
}

}  // namespace

TEST_CASE("idx: byte-authored fixture round trips exactly") {
  const fs::path dir = temp_dir();
  write_bytes(dir / "imgs", tiny_images_idx());
  write_bytes(dir / "labels", tiny_labels_idx());
  const auto ds = data::load_idx((dir / "imgs").string(), (dir / "labels").string());
  CHECK(ds.size() == 2);
  CHECK(ds.height == 4);
  CHECK(ds.width == 4);
  CHECK(ds.labels[0] == 7);
  CHECK(ds.labels[1] == 2);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      CHECK(ds.images[0].at3(r, c, 0) == doctest::Approx(r * 60 / 255.0));
  CHECK(ds.images[1].at3(1, 1, 0) == doctest::Approx(1.0));  // flat index 5 = (1,1)
  CHECK(ds.images[1].at3(0, 0, 0) == doctest::Approx(0.0));
}

TEST_CASE("idx: distinct load errors") {
  const fs::path dir = temp_dir();
  SUBCASE("bad magic") {
    auto bytes = tiny_images_idx();
    bytes[3] = 0x05;
    write_bytes(dir / "imgs", bytes);
    write_bytes(dir / "labels", tiny_labels_idx());
    CHECK_THROWS_WITH_AS(data::load_idx((dir / "imgs").string(), (dir / "labels").string()),
                         doctest::Contains("bad image magic"), DataError);
  }
  SUBCASE("truncated payload") {
    auto bytes = tiny_images_idx();
    bytes.resize(bytes.size() - 7);
    write_bytes(dir / "imgs", bytes);
    write_bytes(dir / "labels", tiny_labels_idx());
    CHECK_THROWS_WITH_AS(data::load_idx((dir / "imgs").string(), (dir / "labels").string()),
                         doctest::Contains("truncated"), DataError);
  }
  SUBCASE("image/label count mismatch") {
    write_bytes(dir / "imgs", tiny_images_idx());
    auto labels = tiny_labels_idx();
    labels[7] = 0x03;  // claims 3 labels
    write_bytes(dir / "labels", labels);
    CHECK_THROWS_WITH_AS(data::load_idx((dir / "imgs").string(), (dir / "labels").string()),
                         doctest::Contains("count mismatch"), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(data::load_idx((dir / "absent").string(), (dir / "labels").string()),
                    DataError);
  }
}

TEST_CASE("idx: write-then-load of a random byte-valued dataset is exact") {
  Rng rng(5);
  data::LabeledDataset ds;
  ds.classes = 4;
  ds.height = 6;
  ds.width = 5;
  for (int i = 0; i < 12; ++i) {
    Tensor img({6, 5, 1});
    for (int64_t j = 0; j < img.numel(); ++j)
      img[j] = static_cast<double>(rng.uniform_int(256)) / 255.0;
    ds.images.push_back(std::move(img));
    ds.labels.push_back(static_cast<int>(rng.uniform_int(4)));
  }
  const fs::path dir = temp_dir();
  data::save_idx(ds, (dir / "imgs").string(), (dir / "labels").string());
  const auto back = data::load_idx((dir / "imgs").string(), (dir / "labels").string());
  REQUIRE(back.size() == ds.size());
  CHECK(back.labels == ds.labels);
  for (int64_t i = 0; i < ds.size(); ++i)
    for (int64_t j = 0; j < ds.images[static_cast<size_t>(i)].numel(); ++j)
      CHECK(back.images[static_cast<size_t>(i)][j] == ds.images[static_cast<size_t>(i)][j]);
}

TEST_CASE("dirichlet partition") {
  Rng rng(9);
  data::SynthGeometry geom;
  const auto ds = data::synth_dataset(900, 9, geom, rng);

  SUBCASE("single client receives everything") {
    const auto shards = data::dirichlet_partition(ds, {1, 0.9, 3});
    REQUIRE(shards.size() == 1);
    CHECK(static_cast<int64_t>(shards[0].size()) == ds.size());
  }
  SUBCASE("deterministic under seed") {
    const auto a = data::dirichlet_partition(ds, {5, 0.5, 42});
    const auto b = data::dirichlet_partition(ds, {5, 0.5, 42});
    CHECK(a == b);
  }
  SUBCASE("disjoint exact cover") {
    for (uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
      const auto shards = data::dirichlet_partition(ds, {7, 0.4, seed});
      std::set<int64_t> seen;
      int64_t total = 0;
      for (const auto& s : shards) {
        for (int64_t idx : s) {
          CHECK(seen.insert(idx).second);  // no duplicates across shards
          ++total;
        }
      }
      CHECK(total == ds.size());
    }
  }
  SUBCASE("huge concentration approaches uniform class proportions") {
    // 9000 balanced samples over 9 clients: every client's class share
    // should sit within 2% of uniform, across 10 seeds.
    Rng big_rng(10);
    const auto big = data::synth_dataset(9000, 9, geom, big_rng);
    for (uint64_t seed = 0; seed < 10; ++seed) {
      const auto shards = data::dirichlet_partition(big, {9, 1e6, seed});
      for (const auto& shard : shards) {
        if (shard.empty()) continue;
        std::vector<double> hist(9, 0.0);
        for (int64_t idx : shard) hist[static_cast<size_t>(big.labels[static_cast<size_t>(idx)])] += 1.0;
        for (double h : hist)
          CHECK(std::abs(h / static_cast<double>(shard.size()) - 1.0 / 9.0) < 0.02);
      }
    }
  }
  SUBCASE("label skew grows as the concentration shrinks") {
    auto mean_tv = [&](double r) {
      double acc = 0.0;
      int n = 0;
      for (uint64_t seed = 0; seed < 10; ++seed) {
        const auto shards = data::dirichlet_partition(ds, {9, r, 100 + seed});
        std::vector<double> global(9, 1.0 / 9.0);  // the dataset is balanced
        for (const auto& shard : shards) {
          if (shard.empty()) continue;
          std::vector<double> hist(9, 0.0);
          for (int64_t idx : shard)
            hist[static_cast<size_t>(ds.labels[static_cast<size_t>(idx)])] += 1.0;
          double tv = 0.0;
          for (size_t c = 0; c < 9; ++c)
            tv += std::abs(hist[c] / static_cast<double>(shard.size()) - global[c]);
          acc += 0.5 * tv;
          ++n;
        }
      }
      return acc / n;
    };
    CHECK(mean_tv(0.3) > mean_tv(0.9));
  }
}

TEST_CASE("synthetic dataset") {
  SUBCASE("zero noise makes all samples of a class identical") {
    Rng rng(1);
    data::SynthGeometry geom;
    geom.noise = 0.0;
    const auto ds = data::synth_dataset(20, 5, geom, rng);
    for (int64_t i = 5; i < 20; ++i) {
      const auto& a = ds.images[static_cast<size_t>(i)];
      const auto& b = ds.images[static_cast<size_t>(i % 5)];
      for (int64_t j = 0; j < a.numel(); ++j) CHECK(a[j] == b[j]);
    }
  }
  SUBCASE("reproducible under seed") {
    Rng a(2), b(2);
    data::SynthGeometry geom;
    const auto d1 = data::synth_dataset(30, 3, geom, a);
    const auto d2 = data::synth_dataset(30, 3, geom, b);
    for (int64_t i = 0; i < 30; ++i)
      for (int64_t j = 0; j < d1.images[static_cast<size_t>(i)].numel(); ++j)
        CHECK(d1.images[static_cast<size_t>(i)][j] == d2.images[static_cast<size_t>(i)][j]);
  }
  SUBCASE("a linear probe reaches at least 95% at default noise") {
    Rng rng(3);
    data::SynthGeometry geom;
    const auto ds = data::synth_dataset(400, 10, geom, rng);
    const auto probe = metrics::train_linear_probe(ds.images, ds.labels, ds.classes);
    std::vector<int> preds, labels;
    for (int64_t i = 0; i < ds.size(); ++i) {
      preds.push_back(probe.predict(ds.images[static_cast<size_t>(i)]));
      labels.push_back(ds.labels[static_cast<size_t>(i)]);
    }
    CHECK(metrics::accuracy(preds, labels) >= 0.95);
  }
  SUBCASE("requires at least one sample per class") {
    Rng rng(4);
    CHECK_THROWS_AS(data::synth_dataset(3, 5, {}, rng), std::invalid_argument);
  }
}

// Full-size ingestion check; runs only when an MNIST directory is supplied.
TEST_CASE("idx: MNIST training files when present") {
  const char* dir = std::getenv("PSFL_MNIST_DIR");
  if (!dir) return;  // optional external dataset
  const auto ds = data::load_idx(std::string(dir) + "/train-images-idx3-ubyte",
                                 std::string(dir) + "/train-labels-idx1-ubyte");
  CHECK(ds.size() == 60000);
  for (int label : ds.labels) {
    CHECK(label >= 0);
    CHECK(label < 10);
  }
}
