#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "teasq/compression.hpp"
#include "teasq/dataset.hpp"
#include "teasq/model.hpp"

namespace teasq {

enum class DecayEndpoint { kFound, kLossless };

// Candidate values ordered from most to least compressed.
struct CompressionSets {
  std::vector<double> set_s{1, 5, 10, 25, 50, 100};
  std::vector<int> set_q{2, 4, 8, 16, 32};
  double theta = 0.02;  // tolerated accuracy drop, as a fraction
  std::int64_t step_size = 50;
  std::int64_t T = 300;
  DecayEndpoint endpoint = DecayEndpoint::kFound;

  void validate() const;
  // Position of p_q in set_q; 0 and 32 are the same (no quantization).
  std::size_t index_of_q(int p_q) const;
  std::size_t index_of_s(double p_s) const;
};

struct CompressionSchedule {
  std::vector<CompressionParams> per_round;

  // Params for round t; rounds past the end reuse the last entry.
  CompressionParams at(std::int64_t t) const;
  bool empty() const { return per_round.empty(); }
};

struct SearchStep {
  CompressionParams params;
  double accuracy = 0.0;
  bool feasible = false;
};

struct SearchResult {
  CompressionParams found;
  double baseline_accuracy = 0.0;
  double found_accuracy = 0.0;
  bool fell_back_to_lossless = false;
  // Every distinct grid point evaluated, in evaluation order.
  std::vector<SearchStep> evaluated;
  // Points the search moved through, starting at the initial one.
  std::vector<CompressionParams> path;
};

// Accuracy of a model after a compress/decompress round trip.
using AccuracyProbe = std::function<double(const CompressionParams&)>;

// Greedy alternation over (p_s, p_q): push p_s to more compression while the
// accuracy stays within theta of the baseline, then take one more notch of
// p_q and relax p_s until feasible again; repeat while the encoded size
// keeps shrinking. Each grid point is evaluated at most once.
SearchResult search_params(double baseline_accuracy, const CompressionSets& sets,
                           const AccuracyProbe& probe,
                           const std::function<std::int64_t(const CompressionParams&)>& bits);

// Convenience overload: the probe is `probe_w` round-tripped with a fixed
// compression seed and evaluated on the full test set.
SearchResult search_params(const ParamVector& probe_w, const Dataset& testset,
                           const ModelSpec& spec, const CompressionSets& sets,
                           std::uint64_t compression_seed);

// Starts one notch more compressed than `found` and moves one notch toward
// less compression every step_size rounds, stopping at the endpoint.
CompressionSchedule build_schedule(const CompressionParams& found, const CompressionSets& sets);

}  // namespace teasq
