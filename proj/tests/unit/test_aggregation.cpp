#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "teasq/aggregation.hpp"
#include "teasq/errors.hpp"
#include "teasq/rng.hpp"

using namespace teasq;

namespace {

ParamVector vec(std::vector<float> v) {
  ParamVector w;
  w.tensors.push_back({"w", {v.size()}, std::move(v)});
  return w;
}

ServerConfig config(std::int64_t n, double c, double gamma, double alpha) {
  ServerConfig cfg;
  cfg.num_devices = n;
  cfg.fraction = c;
  cfg.cache_fraction = gamma;
  cfg.alpha = alpha;
  cfg.a_staleness = 0.5;
  return cfg;
}

ServerState server(std::vector<float> w0, const ServerConfig& cfg) {
  auto w = vec(std::move(w0));
  auto layout = layout_of(w);
  return ServerState(std::move(w), std::move(layout), cfg);
}

}  // namespace

TEST(Staleness, ExactValues) {
  EXPECT_EQ(staleness_weight(5, 5, 0.5), 1.0);
  EXPECT_EQ(staleness_weight(3, 0, 0.5), 0.5);
  EXPECT_EQ(staleness_weight(3.0, 0.5), 0.5);
  EXPECT_GT(staleness_weight(4, 3, 0.5), staleness_weight(4, 2, 0.5));
  EXPECT_THROW(staleness_weight(2, 3, 0.5), ContractViolation);
  EXPECT_THROW(staleness_weight(2, 1, 0.0), ContractViolation);
}

TEST(WeightedAverage, HandWorkedTwoEntryCase) {
  std::vector<CacheEntry> e{{0, vec({1.0f}), 10, 100}, {1, vec({0.0f}), 7, 100}};
  auto r = weighted_average(e, 10, 0.5);
  EXPECT_FLOAT_EQ(r.u.tensors[0].values[0], 2.0f / 3.0f);
  EXPECT_DOUBLE_EQ(r.delta, 1.5);
}

TEST(WeightedAverage, SingletonAndEqualWeights) {
  std::vector<CacheEntry> one{{0, vec({0.25f, -4.0f}), 2, 9}};
  auto r = weighted_average(one, 6, 0.5);
  EXPECT_EQ(r.u, one[0].weights);
  EXPECT_EQ(r.delta, 4.0);
  std::vector<CacheEntry> two{{0, vec({1.0f, 2.0f}), 3, 5}, {1, vec({3.0f, -2.0f}), 3, 5}};
  EXPECT_EQ(weighted_average(two, 3, 0.5).u, vec({2.0f, 0.0f}));
}

TEST(WeightedAverage, InvariantToCommonSampleScaling) {
  Rng rng(1);
  std::vector<CacheEntry> a, b;
  for (int i = 0; i < 4; ++i) {
    auto w = vec({static_cast<float>(uniform(rng, -1, 1)), static_cast<float>(uniform(rng, -1, 1))});
    const auto h = static_cast<std::int64_t>(uniform_index(rng, 5));
    const auto n = static_cast<std::int64_t>(1 + uniform_index(rng, 50));
    a.push_back({i, w, h, n});
    b.push_back({i, w, h, n * 8});
  }
  auto ua = weighted_average(a, 6, 0.5).u, ub = weighted_average(b, 6, 0.5).u;
  for (std::size_t i = 0; i < 2; ++i)
    EXPECT_FLOAT_EQ(ua.tensors[0].values[i], ub.tensors[0].values[i]);
}

TEST(Mix, HandWorkedCases) {
  EXPECT_EQ(mix_models(vec({0.0f}), vec({1.0f}), 0.0, 0.5, 0.5), vec({0.5f}));
  EXPECT_EQ(mix_models(vec({0.0f}), vec({1.0f}), 3.0, 0.5, 0.5), vec({0.25f}));
  EXPECT_EQ(mix_models(vec({7.0f, -1.0f}), vec({1.0f, 2.0f}), 0.0, 1.0, 0.5), vec({1.0f, 2.0f}));
}

TEST(Aggregate, MatchesScalarOracleOnRandomCaches) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int K = 1 + static_cast<int>(uniform_index(rng, 6));
    const std::size_t dim = 1 + uniform_index(rng, 8);
    const std::int64_t t = static_cast<std::int64_t>(uniform_index(rng, 20));
    const double alpha = uniform(rng, 0.05, 1.0), a = uniform(rng, 0.1, 2.0);
    std::vector<float> w_t(dim);
    for (auto& x : w_t) x = static_cast<float>(uniform(rng, -2, 2));
    std::vector<CacheEntry> cache;
    std::vector<oracle::Entry> ref;
    for (int c = 0; c < K; ++c) {
      std::vector<float> w(dim);
      for (auto& x : w) x = static_cast<float>(uniform(rng, -2, 2));
      const auto h = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(t) + 1));
      const auto n = static_cast<std::int64_t>(1 + uniform_index(rng, 500));
      cache.push_back({c, vec(w), h, n});
      ref.push_back({{w.begin(), w.end()}, h, static_cast<double>(n)});
    }
    const auto want = oracle::aggregate({w_t.begin(), w_t.end()}, ref, t, alpha, a);
    const auto avg = weighted_average(cache, t, a);
    ASSERT_TRUE(oracle::close_rel(avg.delta, want.delta, 1e-12));
    ASSERT_TRUE(oracle::close_rel(alpha * staleness_weight(avg.delta, a), want.alpha_t, 1e-12));
    for (std::size_t i = 0; i < dim; ++i)
      ASSERT_EQ(avg.u.tensors[0].values[i], static_cast<float>(want.u[i]));
  }
}

TEST(Aggregate, CompositeThreeEntryCase) {
  // t = 4; staleness 0, 1, 3 with a = 0.5 gives S = 1, 1/sqrt(2), 1/2.
  auto s = server({1.0f}, config(30, 0.1, 0.1, 0.8));
  ASSERT_EQ(s.cache_capacity(), 3);
  for (int r = 0; r < 4; ++r) {
    for (int i = 0; i < 3; ++i) s.try_admit();
    for (int i = 0; i < 3; ++i) s.receive_model({i, vec({1.0f}), r, 1});
  }
  ASSERT_EQ(s.round(), 4);
  for (int i = 0; i < 3; ++i) s.try_admit();
  s.receive_model({0, vec({3.0f}), 4, 10});
  s.receive_model({1, vec({-1.0f}), 3, 20});
  auto res = s.receive_model({2, vec({6.0f}), 1, 40});
  ASSERT_TRUE(res.has_value());
  const double s1 = 1.0 / std::sqrt(2.0);
  const double u = (30.0 - 20.0 * s1 + 6.0 * 40.0 * 0.5) / (10.0 + 20.0 * s1 + 40.0 * 0.5);
  const double delta = 4.0 / 3.0;
  const double at = 0.8 / std::sqrt(delta + 1.0);
  EXPECT_NEAR(res->mean_staleness, delta, 1e-15);
  EXPECT_NEAR(res->mixing_weight, at, 1e-15);
  EXPECT_NEAR(s.global_weights().tensors[0].values[0], at * u + (1.0 - at) * 1.0, 1e-6);
  EXPECT_EQ(s.round(), 5);
}

TEST(Aggregate, FreshCacheWithFullMixingIsWeightedMean) {
  auto s = server({9.0f, 9.0f}, config(20, 0.5, 0.1, 1.0));
  s.try_admit();
  s.try_admit();
  s.receive_model({0, vec({1.0f, 0.0f}), 0, 1});
  s.receive_model({1, vec({4.0f, 3.0f}), 0, 2});
  EXPECT_EQ(s.global_weights(), vec({3.0f, 2.0f}));
}

TEST(Aggregate, ConvexCombinationOfGlobalAndAverage) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto w = vec({static_cast<float>(uniform(rng, -1, 1))});
    auto u = vec({static_cast<float>(uniform(rng, -1, 1))});
    auto m = mix_models(w, u, uniform(rng, 0, 10), uniform(rng, 0.01, 1), 0.5);
    const float lo = std::min(w.tensors[0].values[0], u.tensors[0].values[0]);
    const float hi = std::max(w.tensors[0].values[0], u.tensors[0].values[0]);
    EXPECT_GE(m.tensors[0].values[0], lo);
    EXPECT_LE(m.tensors[0].values[0], hi);
  }
}

TEST(Server, AdmissionCapAndCounters) {
  auto s = server({0.0f}, config(100, 0.1, 0.1, 0.5));
  EXPECT_EQ(s.cap(), 10);
  EXPECT_EQ(s.cache_capacity(), 10);
  for (int i = 0; i < 9; ++i) ASSERT_TRUE(s.try_admit());
  EXPECT_EQ(s.try_admit(), std::optional<std::int64_t>(0));
  EXPECT_EQ(s.inflight(), 10);
  EXPECT_FALSE(s.try_admit());
  s.receive_model({0, vec({1.0f}), 0, 1});
  EXPECT_EQ(s.grants() - s.receipts() - s.failures(), s.inflight());
}

TEST(Server, CacheFiresAtK) {
  auto s = server({0.0f}, config(20, 0.5, 0.1, 0.5));
  ASSERT_EQ(s.cache_capacity(), 2);
  s.try_admit();
  s.try_admit();
  EXPECT_FALSE(s.receive_model({0, vec({1.0f}), 0, 1}));
  EXPECT_EQ(s.cache_size(), 1u);
  EXPECT_TRUE(s.receive_model({1, vec({1.0f}), 0, 1}));
  EXPECT_EQ(s.cache_size(), 0u);
  EXPECT_EQ(s.round(), 1);
}

TEST(Server, ProtocolErrors) {
  auto s = server({0.0f}, config(10, 0.1, 0.1, 0.5));
  EXPECT_THROW(s.receive_model({0, vec({1.0f}), 0, 1}), ProtocolViolation);
  s.try_admit();
  EXPECT_THROW(s.receive_model({0, vec({1.0f}), 3, 1}), ProtocolViolation);
  EXPECT_THROW(s.aggregate_round(), ContractViolation);
}

TEST(Server, CorruptUploadIsDroppedAndCounted) {
  auto s = server({0.0f, 0.0f}, config(10, 0.2, 0.1, 0.5));
  std::string logged;
  s.set_logger([&](const std::string& m) { logged = m; });
  s.try_admit();
  auto u = compress(vec({1.0f, 2.0f}), {100, 8}, 1);
  u.tensors[0].indices = {1, 1};
  EXPECT_FALSE(s.receive_update(u, 1));
  EXPECT_EQ(s.inflight(), 0);
  EXPECT_EQ(s.failures(), 1);
  EXPECT_FALSE(logged.empty());
}

TEST(ServerConfigTest, FloorWithEpsilonAndMinimumOne) {
  EXPECT_EQ(config(100, 0.1, 0.1, 1).cap(), 10);
  EXPECT_EQ(config(3, 0.1, 0.1, 1).cap(), 1);
  EXPECT_EQ(config(3, 0.1, 0.1, 1).cache_size(), 1);
  EXPECT_THROW(config(10, 0.1, 0.1, 0.0).validate(), ConfigError);
}
