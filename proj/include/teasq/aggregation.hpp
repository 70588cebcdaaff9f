#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "teasq/compression.hpp"
#include "teasq/model.hpp"

namespace teasq {

// One buffered local update, already decompressed.
struct CacheEntry {
  std::int64_t sender = -1;
  ParamVector weights;
  std::int64_t timestamp = 0;  // global round the sender trained from
  std::int64_t n_samples = 1;
};

// (t - h + 1)^(-a). Throws ContractViolation if h > t or a <= 0.
double staleness_weight(std::int64_t t, std::int64_t h, double a);

// Same function on a real-valued staleness (the cache mean).
double staleness_weight(double staleness, double a);

struct WeightedAverage {
  ParamVector u;
  double delta = 0.0;  // mean staleness of the entries
};

// u = sum S(t-h_c) n_c w_c / sum S(t-h_c) n_c, accumulated in float64.
WeightedAverage weighted_average(std::span<const CacheEntry> entries, std::int64_t t, double a);

// alpha * S(delta) * u + (1 - alpha * S(delta)) * w_t.
ParamVector mix_models(const ParamVector& w_t, const ParamVector& u, double delta, double alpha,
                       double a);

struct ServerConfig {
  std::int64_t num_devices = 100;  // N
  double fraction = 0.1;           // C
  double cache_fraction = 0.1;     // gamma
  double alpha = 0.5;
  double a_staleness = 0.5;

  // max(1, floor(N * C)) and max(1, floor(N * gamma)).
  std::int64_t cap() const;
  std::int64_t cache_size() const;
  void validate() const;
};

struct AggregationResult {
  std::int64_t round = 0;  // round reached after mixing
  double mean_staleness = 0.0;
  double mixing_weight = 0.0;  // alpha^t
};

// Server side of the protocol: admission counter, update cache and
// staleness-weighted mixing. Not thread-safe; owned by one event loop.
class ServerState {
 public:
  ServerState(ParamVector initial, ParamLayout layout, const ServerConfig& cfg);

  const ParamVector& global_weights() const { return global_; }
  std::int64_t round() const { return round_; }
  std::int64_t inflight() const { return inflight_; }
  std::int64_t cap() const { return cap_; }
  std::int64_t cache_capacity() const { return K_; }
  std::size_t cache_size() const { return cache_.size(); }
  const std::deque<CacheEntry>& cache() const { return cache_; }
  double alpha() const { return alpha_; }
  double a_staleness() const { return a_; }

  std::int64_t grants() const { return grants_; }
  std::int64_t receipts() const { return receipts_; }
  std::int64_t failures() const { return failures_; }

  // Grants iff inflight < cap; on grant inflight += 1 and returns the round
  // whose weights the device must train from.
  std::optional<std::int64_t> try_admit();

  // Decompresses and caches an upload, decrements inflight, and aggregates
  // once the cache holds K entries. A payload that fails to decompress is
  // dropped (inflight still decremented) and reported through the logger.
  // Throws ProtocolViolation if nothing is in flight.
  std::optional<AggregationResult> receive_update(const CompressedUpdate& u, std::int64_t n_k);

  // Caches an already-decoded model (uncompressed transfer).
  std::optional<AggregationResult> receive_model(CacheEntry entry);

  // Assigns alpha*S(delta)*u + (1 - alpha*S(delta))*w_t as the new global
  // model and advances the round counter.
  AggregationResult mix_global(const ParamVector& u, double delta);

  // Pops all K entries, mixes them into the global model, advances the round.
  // Throws ContractViolation unless the cache holds exactly K entries.
  AggregationResult aggregate_round();

  void set_logger(std::function<void(const std::string&)> log) { log_ = std::move(log); }

 private:
  ParamVector global_;
  ParamLayout layout_;
  std::int64_t round_ = 0;
  std::int64_t inflight_ = 0;
  std::int64_t cap_;
  std::int64_t K_;
  double alpha_;
  double a_;
  std::deque<CacheEntry> cache_;
  std::int64_t grants_ = 0, receipts_ = 0, failures_ = 0;
  std::function<void(const std::string&)> log_;
};

}  // namespace teasq
