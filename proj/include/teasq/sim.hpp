#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "teasq/config.hpp"
#include "teasq/dataset.hpp"
#include "teasq/data.hpp"
#include "teasq/latency.hpp"
#include "teasq/model.hpp"
#include "teasq/tuner.hpp"

namespace teasq {

struct MetricsRecord {
  std::int64_t round = 0;
  double sim_time_s = 0.0;
  double accuracy = 0.0;
  std::int64_t cumulative_down_bits = 0;
  std::int64_t cumulative_up_bits = 0;
  double cache_mean_staleness = 0.0;
  double p_s_used = 100.0;
  int p_q_used = 0;
  bool checkpoint = false;  // written by an eval checkpoint, not an aggregation

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

enum class EventKind {
  kDeviceRequest,
  kDownloadDone,
  kComputeDone,
  kUploadDone,
  kRetryPoll,
  kEvalCheckpoint
};

std::string to_string(EventKind kind);

// What the event loop did, reported through SimHooks::trace after each event.
struct TraceEvent {
  double time = 0.0;
  std::int64_t seq = 0;
  EventKind kind = EventKind::kDeviceRequest;
  std::int64_t device = -1;
  std::int64_t round = 0;        // server round after the event
  std::int64_t grant_round = -1; // round the device's task was granted at
  bool granted = false;          // requests and polls only
  bool aggregated = false;       // uploads only
};

// Everything a run needs besides its config: data, partition, device profiles.
struct SimEnvironment {
  ModelSpec spec;
  Dataset train;
  Dataset test;
  Partition partition;
  std::vector<DeviceProfile> devices;
  WorkloadSpec workload_of(std::int64_t device, const ExperimentConfig& cfg) const;

  // Loads or generates the dataset, partitions it and draws device profiles,
  // all from the config seed.
  static SimEnvironment build(const ExperimentConfig& cfg);
};

struct SimHooks {
  // Replace sampled latencies, e.g. for hand-traced scenarios.
  std::function<double(std::int64_t device, std::int64_t task)> compute_latency;
  std::function<double(std::int64_t device, Direction dir, std::int64_t bits)> comm_latency;
  std::function<void(const TraceEvent&)> trace;
  // Called with every new global model and its round number.
  std::function<void(std::int64_t round, const ParamVector& global)> on_global;
};

struct SimResult {
  std::vector<MetricsRecord> records;
  ParamVector final_weights;
  std::int64_t rounds = 0;
  double sim_time_s = 0.0;
  std::int64_t events = 0;
  std::vector<std::int64_t> staleness;  // t - h of every consumed update
  std::int64_t down_bits = 0;
  std::int64_t up_bits = 0;
};

// Seed of the local training run for a device's task-th task.
std::uint64_t task_seed(std::uint64_t run_seed, std::int64_t device, std::int64_t task);

// Resolves the compression schedule the protocol will use. Empty means
// lossless transfer. Auto-tune runs the uncompressed warm-up probe and the
// greedy search; `search` receives the search record when given.
CompressionSchedule resolve_schedule(const ExperimentConfig& cfg, const SimEnvironment& env,
                                     SearchResult* search = nullptr);

// Runs the configured protocol until round T or the time budget.
SimResult simulate(const ExperimentConfig& cfg, const SimEnvironment& env,
                   const CompressionSchedule& schedule, const SimHooks& hooks = {});

// Protocol-specific entry points; simulate() dispatches to these.
SimResult run_async(const ExperimentConfig& cfg, const SimEnvironment& env,
                    const CompressionSchedule& schedule, const SimHooks& hooks = {});
SimResult run_fedavg(const ExperimentConfig& cfg, const SimEnvironment& env,
                     const CompressionSchedule& schedule, const SimHooks& hooks = {});
SimResult run_fedasync(const ExperimentConfig& cfg, const SimEnvironment& env,
                       const CompressionSchedule& schedule, const SimHooks& hooks = {});

}  // namespace teasq
