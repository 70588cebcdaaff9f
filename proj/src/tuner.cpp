#include "teasq/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "teasq/errors.hpp"

namespace teasq {

void CompressionSets::validate() const {
  if (set_s.empty() || set_q.empty()) throw ConfigError("compression sets must be non-empty");
  for (std::size_t i = 0; i < set_s.size(); ++i) {
    if (!(set_s[i] > 0.0 && set_s[i] <= 100.0)) throw ConfigError("set_s values must lie in (0, 100]");
    if (i > 0 && !(set_s[i] > set_s[i - 1]))
      throw ConfigError("set_s must be strictly increasing (most compressed first)");
  }
  auto bits = [](int q) { return q == 0 ? 32 : q; };
  for (std::size_t i = 0; i < set_q.size(); ++i) {
    if (!is_allowed_bits(set_q[i])) throw ConfigError("set_q holds an unsupported bit width");
    if (i > 0 && !(bits(set_q[i]) > bits(set_q[i - 1])))
      throw ConfigError("set_q must be strictly increasing (most compressed first)");
  }
  if (bits(set_q.back()) != 32) throw ConfigError("set_q must end with 32 or 0 (no quantization)");
  if (!(theta >= 0.0)) throw ConfigError("theta must be nonnegative");
  if (step_size < 1) throw ConfigError("step_size must be positive");
  if (T < 1) throw ConfigError("T must be positive");
}

std::size_t CompressionSets::index_of_q(int p_q) const {
  const int want = p_q == 0 ? 32 : p_q;
  for (std::size_t i = 0; i < set_q.size(); ++i)
    if ((set_q[i] == 0 ? 32 : set_q[i]) == want) return i;
  throw ContractViolation("p_q " + std::to_string(p_q) + " is not in set_q");
}

std::size_t CompressionSets::index_of_s(double p_s) const {
  for (std::size_t i = 0; i < set_s.size(); ++i)
    if (std::fabs(set_s[i] - p_s) < 1e-9) return i;
  throw ContractViolation("p_s " + std::to_string(p_s) + " is not in set_s");
}

CompressionParams CompressionSchedule::at(std::int64_t t) const {
  if (per_round.empty()) return {};
  const auto i = std::clamp<std::int64_t>(t, 0, static_cast<std::int64_t>(per_round.size()) - 1);
  return per_round[static_cast<std::size_t>(i)];
}

SearchResult search_params(double baseline_accuracy, const CompressionSets& sets,
                           const AccuracyProbe& probe,
                           const std::function<std::int64_t(const CompressionParams&)>& bits) {
  sets.validate();
  SearchResult res;
  res.baseline_accuracy = baseline_accuracy;
  const double floor_acc = baseline_accuracy - sets.theta;
  const std::size_t ns = sets.set_s.size();
  const std::size_t nq = sets.set_q.size();
  auto params_at = [&](std::size_t is, std::size_t iq) {
    const int q = sets.set_q[iq];
    return CompressionParams{sets.set_s[is], q == 32 ? 0 : q};
  };

  std::map<std::pair<std::size_t, std::size_t>, bool> memo;
  auto feasible = [&](std::size_t is, std::size_t iq) {
    auto key = std::make_pair(is, iq);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const auto p = params_at(is, iq);
    const double acc = probe(p);
    const bool ok = acc >= floor_acc;
    memo[key] = ok;
    res.evaluated.push_back({p, acc, ok});
    return ok;
  };

  // Least compressed corner: p_s = 100% (or the largest offered), no quantization.
  std::size_t is = ns - 1;
  std::size_t iq = nq - 1;
  res.path.push_back(params_at(is, iq));
  if (!feasible(is, iq)) {
    res.found = {100.0, 0};
    res.fell_back_to_lossless = true;
    res.found_accuracy = probe(res.found);
    return res;
  }
  while (true) {
    while (is > 0 && feasible(is - 1, iq)) {
      --is;
      res.path.push_back(params_at(is, iq));
    }
    if (iq == 0) break;
    // One notch more quantization, then relax sparsification until feasible.
    const std::size_t nq_idx = iq - 1;
    std::size_t ns_idx = is;
    while (!feasible(ns_idx, nq_idx) && ns_idx + 1 < ns) ++ns_idx;
    if (!feasible(ns_idx, nq_idx)) break;
    if (bits(params_at(ns_idx, nq_idx)) >= bits(params_at(is, iq))) break;
    is = ns_idx;
    iq = nq_idx;
    res.path.push_back(params_at(is, iq));
  }
  res.found = params_at(is, iq);
  for (const auto& e : res.evaluated)
    if (e.params == res.found) res.found_accuracy = e.accuracy;
  return res;
}

SearchResult search_params(const ParamVector& probe_w, const Dataset& testset,
                           const ModelSpec& spec, const CompressionSets& sets,
                           std::uint64_t compression_seed) {
  const double acc = evaluate(probe_w, testset, spec);
  const auto layout = layout_of(spec);
  auto probe = [&](const CompressionParams& p) {
    return evaluate(decompress(compress(probe_w, p, compression_seed), layout), testset, spec);
  };
  auto bits = [&](const CompressionParams& p) {
    return compress(probe_w, p, compression_seed).bit_size;
  };
  return search_params(acc, sets, probe, bits);
}

CompressionSchedule build_schedule(const CompressionParams& found, const CompressionSets& sets) {
  sets.validate();
  const std::size_t s_found = sets.index_of_s(found.p_s);
  const std::size_t q_found = sets.index_of_q(found.p_q);
  const std::size_t s_end = sets.endpoint == DecayEndpoint::kFound ? s_found : sets.set_s.size() - 1;
  const std::size_t q_end = sets.endpoint == DecayEndpoint::kFound ? q_found : sets.set_q.size() - 1;
  const std::size_t s0 = s_found > 0 ? s_found - 1 : 0;
  const std::size_t q0 = q_found > 0 ? q_found - 1 : 0;
  CompressionSchedule sched;
  sched.per_round.reserve(static_cast<std::size_t>(sets.T));
  for (std::int64_t t = 0; t < sets.T; ++t) {
    const auto steps = static_cast<std::size_t>(t / sets.step_size);
    const std::size_t si = std::min(s0 + steps, std::max(s0, s_end));
    const std::size_t qi = std::min(q0 + steps, std::max(q0, q_end));
    const int q = sets.set_q[qi];
    sched.per_round.push_back({sets.set_s[si], q == 32 ? 0 : q});
  }
  return sched;
}

}  // namespace teasq
