#include "teasq/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <vector>

#include "teasq/errors.hpp"

namespace teasq {

double staleness_weight(std::int64_t t, std::int64_t h, double a) {
  if (h > t) throw ContractViolation("update timestamp is ahead of the server round");
  if (h < 0) throw ContractViolation("negative timestamp");
  return staleness_weight(static_cast<double>(t - h), a);
}

double staleness_weight(double staleness, double a) {
  if (!(a > 0.0)) throw ContractViolation("staleness exponent must be positive");
  if (!(staleness >= 0.0)) throw ContractViolation("staleness must be nonnegative");
  return std::pow(staleness + 1.0, -a);
}

WeightedAverage weighted_average(std::span<const CacheEntry> entries, std::int64_t t, double a) {
  if (entries.empty()) throw ContractViolation("weighted_average of an empty cache");
  const auto& first = entries.front().weights;
  std::vector<std::vector<double>> acc;
  acc.reserve(first.tensors.size());
  for (const auto& tns : first.tensors) acc.emplace_back(tns.values.size(), 0.0);

  double total = 0.0;
  double staleness_sum = 0.0;
  for (const auto& e : entries) {
    if (!e.weights.same_layout(first)) throw ContractViolation("cache entries differ in layout");
    if (e.n_samples < 1) throw ContractViolation("cache entry with no samples");
    const double coef = staleness_weight(t, e.timestamp, a) * static_cast<double>(e.n_samples);
    total += coef;
    staleness_sum += static_cast<double>(t - e.timestamp);
    for (std::size_t k = 0; k < acc.size(); ++k) {
      const auto& v = e.weights.tensors[k].values;
      auto& dst = acc[k];
      for (std::size_t i = 0; i < v.size(); ++i) dst[i] += coef * static_cast<double>(v[i]);
    }
  }
  WeightedAverage out;
  out.u = first;
  for (std::size_t k = 0; k < acc.size(); ++k) {
    auto& v = out.u.tensors[k].values;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(acc[k][i] / total);
  }
  out.delta = staleness_sum / static_cast<double>(entries.size());
  return out;
}

ParamVector mix_models(const ParamVector& w_t, const ParamVector& u, double delta, double alpha,
                       double a) {
  if (!w_t.same_layout(u)) throw ContractViolation("mixing models of different layouts");
  const double mix = alpha * staleness_weight(delta, a);
  ParamVector out = w_t;
  for (std::size_t k = 0; k < out.tensors.size(); ++k) {
    auto& v = out.tensors[k].values;
    const auto& uv = u.tensors[k].values;
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = static_cast<float>(mix * static_cast<double>(uv[i]) +
                                (1.0 - mix) * static_cast<double>(v[i]));
  }
  return out;
}

std::int64_t ServerConfig::cap() const {
  const auto c = static_cast<std::int64_t>(std::floor(static_cast<double>(num_devices) * fraction + 1e-9));
  return std::max<std::int64_t>(1, c);
}

std::int64_t ServerConfig::cache_size() const {
  const auto k =
      static_cast<std::int64_t>(std::floor(static_cast<double>(num_devices) * cache_fraction + 1e-9));
  return std::max<std::int64_t>(1, k);
}

void ServerConfig::validate() const {
  if (num_devices < 1) throw ConfigError("N must be at least 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("C must lie in (0, 1]");
  if (!(cache_fraction > 0.0 && cache_fraction <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  if (!(a_staleness > 0.0)) throw ConfigError("a_staleness must be positive");
}

ServerState::ServerState(ParamVector initial, ParamLayout layout, const ServerConfig& cfg)
    : global_(std::move(initial)),
      layout_(std::move(layout)),
      cap_(cfg.cap()),
      K_(cfg.cache_size()),
      alpha_(cfg.alpha),
      a_(cfg.a_staleness) {
  cfg.validate();
}

std::optional<std::int64_t> ServerState::try_admit() {
  if (inflight_ >= cap_) return std::nullopt;
  ++inflight_;
  ++grants_;
  return round_;
}

std::optional<AggregationResult> ServerState::receive_update(const CompressedUpdate& u,
                                                             std::int64_t n_k) {
  if (inflight_ < 1) throw ProtocolViolation("update received with no task in flight");
  ParamVector w;
  try {
    w = decompress(u, layout_);
  } catch (const CorruptPayload& e) {
    --inflight_;
    ++failures_;
    if (log_) log_("discarded update from device " + std::to_string(u.sender) + ": " + e.what());
    return std::nullopt;
  }
  return receive_model({u.sender, std::move(w), u.timestamp, n_k});
}

std::optional<AggregationResult> ServerState::receive_model(CacheEntry entry) {
  if (inflight_ < 1) throw ProtocolViolation("update received with no task in flight");
  if (entry.timestamp > round_ || entry.timestamp < 0)
    throw ProtocolViolation("update timestamp " + std::to_string(entry.timestamp) +
                            " is not a past round");
  if (entry.n_samples < 1) throw ProtocolViolation("update from a device with no samples");
  if (!entry.weights.same_layout(global_)) {
    --inflight_;
    ++failures_;
    if (log_) log_("discarded update with foreign layout from device " + std::to_string(entry.sender));
    return std::nullopt;
  }
  --inflight_;
  ++receipts_;
  cache_.push_back(std::move(entry));
  if (static_cast<std::int64_t>(cache_.size()) == K_) return aggregate_round();
  return std::nullopt;
}

AggregationResult ServerState::mix_global(const ParamVector& u, double delta) {
  if (!(delta >= 0.0)) throw ContractViolation("mean staleness must be nonnegative");
  global_ = mix_models(global_, u, delta, alpha_, a_);
  ++round_;
  return {round_, delta, alpha_ * staleness_weight(delta, a_)};
}

AggregationResult ServerState::aggregate_round() {
  if (static_cast<std::int64_t>(cache_.size()) != K_)
    throw ContractViolation("aggregate_round needs exactly K cached updates");
  std::vector<CacheEntry> entries(std::make_move_iterator(cache_.begin()),
                                  std::make_move_iterator(cache_.end()));
  cache_.clear();
  auto avg = weighted_average(entries, round_, a_);
  return mix_global(avg.u, avg.delta);
}

}  // namespace teasq
