#include "teasq/latency.hpp"

#include <algorithm>
#include <cmath>

#include "teasq/errors.hpp"

namespace teasq {

void ChannelConfig::validate() const {
  if (!(bandwidth_hz > 0.0)) throw ConfigError("channel.bandwidth_hz must be positive");
  if (!(pathloss_exp > 0.0)) throw ConfigError("channel.pathloss_exp must be positive");
  if (!(radius_m > 0.0)) throw ConfigError("channel.radius_m must be positive");
}

WorkloadSpec WorkloadSpec::from_training(std::int64_t epochs, std::int64_t n_k,
                                         std::int64_t batch_size) {
  if (epochs < 1 || n_k < 1 || batch_size < 1)
    throw ContractViolation("workload needs positive epochs, samples and batch size");
  return {epochs * ((n_k + batch_size - 1) / batch_size), batch_size};
}

double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

std::vector<double> place_devices(std::int64_t n, const ChannelConfig& cfg, std::uint64_t seed) {
  if (n < 1) throw ContractViolation("need at least one device");
  Rng rng(derive_seed(seed, {0x91ACE}));
  std::vector<double> d(static_cast<std::size_t>(n));
  for (auto& x : d) x = cfg.radius_m * std::sqrt(uniform01(rng));
  return d;
}

double transmission_rate(double distance_m, Direction dir, const ChannelConfig& cfg) {
  const double d = std::max(distance_m, 1.0);
  const double power_w = dbm_to_watts(dir == Direction::kDown ? cfg.p_bs_dbm : cfg.p_dev_dbm);
  const double gain = std::pow(d, -cfg.pathloss_exp);
  const double noise_w = dbm_to_watts(cfg.noise_dbm_per_mhz + 10.0 * std::log10(cfg.bandwidth_hz / 1e6));
  return cfg.bandwidth_hz * std::log2(1.0 + power_w * gain / noise_w);
}

double sample_compute_latency(const DeviceProfile& profile, const WorkloadSpec& work, Rng& rng) {
  const double steps = static_cast<double>(work.tau) * static_cast<double>(work.b);
  return profile.a_k * steps + exponential(rng, profile.phi_k / steps);
}

double mean_compute_latency(const DeviceProfile& profile, const WorkloadSpec& work) {
  const double steps = static_cast<double>(work.tau) * static_cast<double>(work.b);
  return profile.a_k * steps + steps / profile.phi_k;
}

double comm_latency(std::int64_t bits, double rate_bps) {
  if (!(rate_bps > 0.0)) throw ContractViolation("transmission rate must be positive");
  return static_cast<double>(bits) / rate_bps;
}

double round_latency(double down_s, double compute_s, double up_s) {
  if (down_s < 0.0 || compute_s < 0.0 || up_s < 0.0)
    throw ContractViolation("latencies must be nonnegative");
  return down_s + compute_s + up_s;
}

}  // namespace teasq
