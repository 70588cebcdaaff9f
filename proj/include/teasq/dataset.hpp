#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace teasq {

enum class Split { kTrain, kTest };

// Dense row-major feature matrix with integer class labels.
struct Dataset {
  std::string name;
  Split split = Split::kTrain;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<float> features;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const {
    return {features.data() + i * input_dim, input_dim};
  }
};

// A device's local shard: a subset of rows of a shared dataset.
struct DataView {
  const Dataset* dataset = nullptr;
  std::span<const std::uint32_t> indices;

  std::size_t size() const { return indices.size(); }
};

}  // namespace teasq
