#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "teasq/dataset.hpp"

namespace teasq {

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;

  std::size_t num_elements() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Flat model parameters partitioned into named tensors. Tensor order is a
// fixed function of the architecture.
struct ParamVector {
  std::vector<Tensor> tensors;

  std::size_t num_elements() const;
  bool same_layout(const ParamVector& other) const;
  bool all_finite() const;
  // Size of the dense float32 encoding.
  std::int64_t dense_bits() const { return 32 * static_cast<std::int64_t>(num_elements()); }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

// Name and shape of each tensor, no values.
struct TensorLayout {
  std::string name;
  std::vector<std::size_t> shape;
};
using ParamLayout = std::vector<TensorLayout>;

enum class Architecture { kLogistic, kMlp, kSmallCnn };

std::string to_string(Architecture arch);
Architecture architecture_from_string(const std::string& s);

struct ModelSpec {
  Architecture architecture = Architecture::kLogistic;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::size_t hidden_width = 0;     // mlp only
  std::size_t conv1_channels = 8;   // small-cnn only
  std::size_t conv2_channels = 16;  // small-cnn only

  // Throws ConfigError when the spec cannot describe a model.
  void validate() const;
};

ParamLayout layout_of(const ModelSpec& spec);
ParamLayout layout_of(const ParamVector& w);

struct Batch {
  std::vector<float> features;  // batch_size x input_dim, row-major
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
};

Batch gather_batch(const Dataset& data, std::span<const std::uint32_t> rows);

// Weights ~ U(-s, s), s = sqrt(6 / (fan_in + fan_out)); biases zero.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

struct LossAndGrad {
  double loss = 0.0;
  ParamVector grad;
};

// Mean softmax cross-entropy over the batch and its exact gradient.
LossAndGrad loss_and_grad(const ParamVector& w, const Batch& batch, const ModelSpec& spec);

// Logits for every row of the batch (batch_size x num_classes), in float64.
std::vector<double> forward_logits(const ParamVector& w, const Batch& batch, const ModelSpec& spec);

// w - eta * (grad f(w) + mu * (w - anchor)).
ParamVector prox_sgd_step(const ParamVector& w, const ParamVector& anchor, const Batch& batch,
                          double eta, double mu, const ModelSpec& spec);

struct LocalTrainOptions {
  int epochs = 1;
  std::size_t batch_size = 10;
  double eta = 0.01;
  double mu = 0.0;
};

// Seed used for the shuffle of epoch `epoch` (0-based) of a local_train call.
std::uint64_t epoch_seed(std::uint64_t seed, int epoch);

// One pass over a seeded shuffle of `data`, short last batch kept.
ParamVector train_epoch(ParamVector w, const ParamVector& anchor, DataView data,
                        std::size_t batch_size, double eta, double mu, const ModelSpec& spec,
                        std::uint64_t shuffle_seed);

// E epochs of prox-SGD. Throws EmptyDataset when the view is empty.
ParamVector local_train(const ParamVector& w0, const ParamVector& anchor, DataView data,
                        const LocalTrainOptions& opts, const ModelSpec& spec, std::uint64_t seed);

// Fraction of argmax-correct predictions; logit ties go to the lowest class.
double evaluate(const ParamVector& w, const Dataset& testset, const ModelSpec& spec);

}  // namespace teasq
