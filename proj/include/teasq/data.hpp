#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "teasq/dataset.hpp"

namespace teasq {

// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
// Pixels are scaled to [0, 1]. Throws FormatError with the failing offset.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Split split = Split::kTrain);

struct FashionMnist {
  Dataset train;
  Dataset test;
};

// Loads the four standard Fashion-MNIST files from `dir`.
FashionMnist load_fashion_mnist(const std::filesystem::path& dir);

// $TEASQ_DATA_DIR, or ./data when unset.
std::filesystem::path default_data_dir();

struct BlobsSpec {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 700;
  std::size_t input_dim = 20;
  double spread = 0.5;
  std::uint64_t seed = 0;
  // Coordinates that carry signal; the rest are constant 0. 0 means all.
  std::size_t active_dims = 0;
};

struct TrainTest {
  Dataset train;
  Dataset test;
};

// Gaussian clusters around random unit-norm centers, mapped affinely into
// [0, 1] and clamped. Each class is split 6:1 into train and test.
TrainTest make_blobs(const BlobsSpec& spec);

// Per-device lists of row indices into one dataset.
struct Partition {
  std::vector<std::vector<std::uint32_t>> assignments;

  std::size_t num_devices() const { return assignments.size(); }
  std::size_t total() const;
};

// Seeded shuffle cut into N near-equal contiguous slices; the remainder goes
// one sample each to devices 0, 1, ...
Partition partition_iid(std::size_t num_samples, std::size_t num_devices, std::uint64_t seed);

// Each device holds samples from at most `classes_per_device` classes and
// exactly floor(n / N) samples. Class slots are dealt so that every class is
// drawn in proportion to its size, then each device samples its quota
// without replacement from the pools of its classes.
Partition partition_noniid_shards(const Dataset& data, std::size_t num_devices,
                                  std::size_t classes_per_device, std::uint64_t seed);

// Per-device label histograms normalised to probabilities.
std::vector<std::vector<double>> label_distributions(const Dataset& data, const Partition& p);

// Mean pairwise total-variation distance between device label distributions.
double mean_pairwise_tv(const Dataset& data, const Partition& p);

}  // namespace teasq
