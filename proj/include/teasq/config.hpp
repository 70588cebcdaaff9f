#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "teasq/compression.hpp"
#include "teasq/data.hpp"
#include "teasq/latency.hpp"
#include "teasq/model.hpp"
#include "teasq/tuner.hpp"

namespace teasq {

enum class ProtocolKind { kTeasq, kTea, kTeaStatic, kFedAvg, kFedAsync };

std::string to_string(ProtocolKind kind);
ProtocolKind protocol_from_string(const std::string& s);

struct ProtocolConfig {
  ProtocolKind kind = ProtocolKind::kTea;
  std::int64_t fedavg_devices = 10;  // m
  std::int64_t max_staleness = 4;    // fedasync
};

struct DatasetConfig {
  std::string kind = "blobs";  // "blobs" or "fashion-mnist"
  BlobsSpec blobs;
  std::string dir;  // fashion-mnist files; empty means $TEASQ_DATA_DIR
};

enum class PartitionKind { kIid, kNonIid };

struct PartitionConfig {
  PartitionKind kind = PartitionKind::kNonIid;
  std::size_t classes_per_device = 2;
};

// Per-device compute parameters are drawn once per run from these ranges.
struct ComputeConfig {
  double a_min = 5e-7;
  double a_max = 5e-6;
  double phi_min = 1.0;
  double phi_max = 10.0;
};

enum class CompressionMode { kNone, kStatic, kScheduleFile, kAutoTune };

struct CompressionConfig {
  CompressionMode mode = CompressionMode::kNone;
  CompressionParams static_params{25.0, 8};
  std::string schedule_file;
  CompressionSets sets;
  std::int64_t probe_rounds = 20;
};

struct ExperimentConfig {
  ProtocolConfig protocol;
  std::int64_t N = 100;
  double C = 0.1;
  double gamma = 0.1;
  double alpha = 0.6;
  double mu = 0.01;
  double a_staleness = 0.5;
  std::int64_t E = 1;
  std::int64_t B = 10;
  double eta = 0.05;
  std::int64_t T = 300;
  double time_budget_s = 0.0;  // 0: no budget
  ModelSpec model;             // input_dim / num_classes filled from the dataset
  DatasetConfig dataset;
  PartitionConfig partition;
  ChannelConfig channel;
  ComputeConfig compute;
  CompressionConfig compression;
  std::uint64_t seed = 1;
  double eval_interval_s = 0.0;   // 0: evaluate only at aggregation rounds
  double retry_interval_s = 0.0;  // 0: 0.2 x mean compute latency
  std::vector<double> targets{0.5, 0.6, 0.68, 0.7, 0.75, 0.8, 0.85, 0.9};
  std::vector<double> budgets_s;  // time budgets for the best-accuracy table

  // Throws ConfigError describing the first problem found.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);

// Unknown keys are rejected. A document of the form {"config": {...}} (a
// run.json) is accepted as well.
ExperimentConfig config_from_json(const nlohmann::json& j);

// Sets `path` (dot separated) in `doc` to `value`. Values that parse as JSON
// are stored typed, anything else as a string. The shortcuts protocol,
// compression, partition and dataset address their kind/mode field.
void apply_override(nlohmann::json& doc, const std::string& path, const std::string& value);

nlohmann::json schedule_to_json(const CompressionSchedule& s);
CompressionSchedule schedule_from_json(const nlohmann::json& j);

}  // namespace teasq
