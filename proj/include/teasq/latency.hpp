#pragma once

#include <cstdint>
#include <vector>

#include "teasq/rng.hpp"

namespace teasq {

// Wireless setting of a single base station serving a disk of devices.
struct ChannelConfig {
  double bandwidth_hz = 2e7;
  double pathloss_exp = 3.76;
  double p_bs_dbm = 20.0;
  double p_dev_dbm = 10.0;
  double noise_dbm_per_mhz = -114.0;
  double radius_m = 600.0;

  void validate() const;
};

enum class Direction { kDown, kUp };

struct DeviceProfile {
  std::int64_t id = 0;
  double distance_m = 1.0;
  double a_k = 1e-6;  // seconds per sample-step, lower bound of compute
  double phi_k = 1.0; // fluctuation rate
  std::int64_t n_k = 1;
  double r_down_bps = 1.0;
  double r_up_bps = 1.0;
};

// Local work of one task: tau gradient steps on minibatches of b samples.
struct WorkloadSpec {
  std::int64_t tau = 1;
  std::int64_t b = 1;

  // tau = epochs * ceil(n_k / batch_size), b = batch_size.
  static WorkloadSpec from_training(std::int64_t epochs, std::int64_t n_k, std::int64_t batch_size);
};

double dbm_to_watts(double dbm);

// Device distances uniform over the disk area: d = R * sqrt(U).
std::vector<double> place_devices(std::int64_t n, const ChannelConfig& cfg, std::uint64_t seed);

// Shannon rate B log2(1 + P d^-alpha / (N0 B)). Distances below 1 m are
// clamped to 1 m.
double transmission_rate(double distance_m, Direction dir, const ChannelConfig& cfg);

// a_k tau b + Exp(phi_k / (tau b)).
double sample_compute_latency(const DeviceProfile& profile, const WorkloadSpec& work, Rng& rng);

// Mean of the shifted exponential: a_k tau b + tau b / phi_k.
double mean_compute_latency(const DeviceProfile& profile, const WorkloadSpec& work);

double comm_latency(std::int64_t bits, double rate_bps);

double round_latency(double down_s, double compute_s, double up_s);

}  // namespace teasq
