// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
//
//   teasq_acceptance [--configs DIR] [--only N ...]

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "teasq/aggregation.hpp"
#include "teasq/compression.hpp"
#include "teasq/data.hpp"
#include "teasq/latency.hpp"
#include "teasq/model.hpp"
#include "teasq/rng.hpp"
#include "teasq/runner.hpp"
#include "teasq/sim.hpp"
#include "teasq/tuner.hpp"

using namespace teasq;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void note(const std::string& s) {
    if (!detail.empty()) detail += "; ";
    detail += s;
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path g_configs;
fs::path g_scratch;

ParamVector single(std::vector<float> v) {
  ParamVector w;
  w.tensors.push_back({"w", {v.size()}, std::move(v)});
  return w;
}

std::vector<float> random_vec(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(uniform(rng, lo, hi));
  return v;
}

double half_ulp(double x) {
  const float f = static_cast<float>(x);
  return 0.5 * (std::nextafter(std::fabs(f), INFINITY) - std::fabs(f));
}

// ---------------------------------------------------------------- 1

Outcome aggregation_rules() {
  Outcome o;
  o.require(staleness_weight(3.0, 0.5) == 0.5, "S(3) != 0.5 at a = 0.5");
  o.require(staleness_weight(3, 0, 0.5) == 0.5, "S(t=3,h=0) != 0.5 at a = 0.5");

  Rng rng(2024);
  double worst_scalar = 0, worst_next = 0;
  int u_mismatch = 0, next_fail = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int K = 1 + static_cast<int>(uniform_index(rng, 8));
    const std::size_t dim = 1 + uniform_index(rng, 16);
    const auto t = static_cast<std::int64_t>(uniform_index(rng, 50));
    const double alpha = uniform(rng, 0.01, 1.0), a = uniform(rng, 0.05, 3.0);
    const auto w_t = random_vec(rng, dim, -3, 3);
    std::vector<CacheEntry> cache;
    std::vector<oracle::Entry> ref;
    for (int c = 0; c < K; ++c) {
      auto w = random_vec(rng, dim, -3, 3);
      const auto h = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(t) + 1));
      const auto n = static_cast<std::int64_t>(1 + uniform_index(rng, 1000));
      ref.push_back({{w.begin(), w.end()}, h, static_cast<double>(n)});
      cache.push_back({c, single(std::move(w)), h, n});
      const double s_lib = staleness_weight(t, h, a);
      const double s_ref = oracle::staleness(static_cast<double>(t - h), a);
      worst_scalar = std::max(worst_scalar, std::fabs(s_lib - s_ref) / s_ref);
    }
    const auto want = oracle::aggregate({w_t.begin(), w_t.end()}, ref, t, alpha, a);
    const auto avg = weighted_average(cache, t, a);
    const double at = alpha * staleness_weight(avg.delta, a);
    if (want.delta != 0)
      worst_scalar = std::max(worst_scalar, std::fabs(avg.delta - want.delta) / want.delta);
    else if (avg.delta != 0)
      worst_scalar = INFINITY;
    worst_scalar = std::max(worst_scalar, std::fabs(at - want.alpha_t) / want.alpha_t);
    const auto& u = avg.u.tensors[0].values;
    for (std::size_t i = 0; i < dim; ++i) u_mismatch += u[i] != static_cast<float>(want.u[i]);

    // Mixing step on the stored (32-bit) u and w_t, against the oracle alpha_t.
    const auto next = mix_models(single(w_t), avg.u, avg.delta, alpha, a);
    for (std::size_t i = 0; i < dim; ++i) {
      const double r = want.alpha_t * u[i] + (1.0 - want.alpha_t) * w_t[i];
      const double err = std::fabs(next.tensors[0].values[i] - r);
      const double scale = std::max(std::fabs(r), 1e-300);
      worst_next = std::max(worst_next, err / scale);
      next_fail += err > 1e-12 * std::fabs(r) + half_ulp(r);
    }
  }
  o.require(worst_scalar <= 1e-12, fmt("scalar rel err %.3g", worst_scalar));
  o.require(u_mismatch == 0, fmt("%d u coordinates differ from float(oracle)", u_mismatch));
  o.require(next_fail == 0, fmt("%d w' coordinates outside 1e-12 rel + float rounding", next_fail));
  o.note(fmt("1000 caches, S/delta/alpha_t max rel err %.2g, u exact in float32, w' max rel err %.2g "
             "(float32 storage)",
             worst_scalar, worst_next));
  return o;
}

// ---------------------------------------------------------------- 2

bool bit_equal(const ParamVector& a, const ParamVector& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t t = 0; t < a.tensors.size(); ++t) {
    const auto& x = a.tensors[t].values;
    const auto& y = b.tensors[t].values;
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

Outcome codec() {
  Outcome o;
  Rng rng(77);
  const double set_s[] = {1, 5, 10, 25, 33, 50, 75, 100};
  const int set_q[] = {2, 4, 6, 8, 16};
  int lossless_fail = 0, wire_fail = 0, topk_fail = 0, count_fail = 0, bound_fail = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 300);
    auto v = random_vec(rng, n, -4, 4);
    // Some exact ties to exercise the tie rule.
    if (n > 4 && trial % 3 == 0) v[n / 2] = -v[n / 3];
    const auto w = single(v);
    const auto layout = layout_of(w);

    for (int raw : {0, 32}) {
      const auto u = compress(w, {100, raw}, rng());
      lossless_fail += !bit_equal(decompress(u, layout), w);
      const auto bytes = encode_tensors(u);
      wire_fail += !bit_equal(decompress(decode_tensors(bytes), layout), w);
      wire_fail += static_cast<std::int64_t>(bytes.size()) * 8 != u.bit_size;
    }

    const double p_s = set_s[uniform_index(rng, 8)];
    const auto sel = topk_sparsify(v, p_s);
    const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(p_s / 100.0 * n)));
    count_fail += sel.indices.size() != std::min(k, n);
    std::vector<bool> kept(n, false);
    for (auto i : sel.indices) kept[i] = true;
    float min_kept = INFINITY, max_dropped = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (kept[i]) min_kept = std::min(min_kept, std::fabs(v[i]));
      else max_dropped = std::max(max_dropped, std::fabs(v[i]));
    }
    topk_fail += !(min_kept >= max_dropped);
    topk_fail += !std::is_sorted(sel.indices.begin(), sel.indices.end());

    const int p_q = set_q[uniform_index(rng, 5)];
    const auto q = quantize(v, p_q, rng());
    const auto back = dequantize(q);
    const double bound = static_cast<double>(q.scale) / quant_levels(p_q);
    for (std::size_t i = 0; i < n; ++i) {
      const double err = std::fabs(static_cast<double>(back[i]) - v[i]);
      bound_fail += err > bound + 2 * half_ulp(back[i]);
    }

    // Full pipeline: every surviving entry is within one level, and the
    // support of the decoded tensor respects the Top-K count.
    const auto u = compress(w, {p_s, p_q}, rng());
    const auto dec = decompress(u, layout).tensors[0].values;
    const auto& ct = u.tensors[0];
    count_fail += ct.entries() > std::min(k, n);
    const double lvl = static_cast<double>(ct.scale) / quant_levels(p_q);
    std::size_t nnz = 0;
    for (std::size_t j = 0; j < ct.indices.size(); ++j) {
      const auto i = ct.indices[j];
      bound_fail += std::fabs(static_cast<double>(dec[i]) - v[i]) > lvl + 2 * half_ulp(dec[i]);
    }
    for (float x : dec) nnz += x != 0.0f;
    count_fail += nnz > std::min(k, n);
  }
  o.require(lossless_fail == 0, fmt("%d lossless round trips not bit-exact", lossless_fail));
  o.require(wire_fail == 0, fmt("%d wire round trips failed", wire_fail));
  o.require(topk_fail == 0, fmt("%d Top-K selections not optimal", topk_fail));
  o.require(count_fail == 0, fmt("%d sparsity counts wrong", count_fail));
  o.require(bound_fail == 0, fmt("%d decoded values outside scale/L", bound_fail));

  // Unbiasedness, each test over 1e5 roundings with the exact standard error
  // of a two-point rounding. The max-abs anchor 1.0 pins scale to 1.
  const int N = 100000;
  auto spread = [](double v, int p_q) {
    const double x = v * quant_levels(p_q);
    const double p = x - std::floor(x);
    return std::sqrt(p * (1 - p)) / quant_levels(p_q);
  };
  double z_fixed = 0;
  {
    const float v = 0.3f;
    double sum = 0;
    for (int s = 0; s < N; ++s)
      sum += dequantize(quantize(std::vector<float>{v, 1.0f}, 4, derive_seed(9, {static_cast<std::uint64_t>(s)})))[0];
    z_fixed = std::fabs(sum / N - v) / (spread(v, 4) / std::sqrt(N));
    o.require(z_fixed <= 3.0, fmt("v=0.3: mean %.6f is %.2f SE away", sum / N, z_fixed));
  }
  // v drawn across [-scale, scale] and p_q cycled. Standardized residuals
  // have mean 0 and variance 1; the sign-adjusted mean catches a bias
  // toward or away from zero that would cancel in the plain mean.
  double plain = 0, toward = 0;
  int exact_fail = 0, used = 0;
  Rng vr(12);
  const int widths[] = {2, 4, 8};
  for (int s = 0; s < N; ++s) {
    const int p_q = widths[s % 3];
    const float v = static_cast<float>(uniform(vr, -1, 1));
    const double d = dequantize(quantize(std::vector<float>{v, 1.0f}, p_q, derive_seed(10, {static_cast<std::uint64_t>(s)})))[0];
    const double sd = spread(v, p_q);
    if (sd == 0) {
      exact_fail += d != v;
      continue;
    }
    const double r = (d - v) / sd;
    plain += r;
    toward += v < 0 ? -r : r;
    ++used;
  }
  const double z_plain = std::fabs(plain / used) * std::sqrt(used);
  const double z_sign = std::fabs(toward / used) * std::sqrt(used);
  o.require(exact_fail == 0, fmt("%d on-level values moved", exact_fail));
  o.require(z_plain <= 3.0, fmt("sweep mean residual %.2f SE", z_plain));
  o.require(z_sign <= 3.0, fmt("sweep sign-adjusted residual %.2f SE", z_sign));
  o.note(fmt("1000 tensors; unbiasedness |z| = %.2f (v=0.3), %.2f and %.2f (v sweep), 1e5 roundings each",
             z_fixed, z_plain, z_sign));
  return o;
}

// ---------------------------------------------------------------- 3

ModelSpec spec_for(Architecture a) {
  ModelSpec s;
  s.architecture = a;
  s.num_classes = 4;
  switch (a) {
    case Architecture::kLogistic: s.input_dim = 9; break;
    case Architecture::kMlp:
      s.input_dim = 7;
      s.hidden_width = 6;
      break;
    case Architecture::kSmallCnn:
      s.input_dim = 25;
      s.conv1_channels = 3;
      s.conv2_channels = 4;
      break;
  }
  return s;
}

Outcome gradients() {
  Outcome o;
  for (auto arch : {Architecture::kLogistic, Architecture::kMlp, Architecture::kSmallCnn}) {
    const auto spec = spec_for(arch);
    Dataset d;
    d.name = "probe";
    d.input_dim = spec.input_dim;
    d.num_classes = spec.num_classes;
    Rng rng(400 + static_cast<int>(arch));
    for (std::size_t i = 0; i < 8 * spec.input_dim; ++i) d.features.push_back(static_cast<float>(uniform01(rng)));
    for (int i = 0; i < 8; ++i) d.labels.push_back(static_cast<std::uint32_t>(uniform_index(rng, 4)));
    std::vector<std::uint32_t> rows(8);
    std::iota(rows.begin(), rows.end(), 0u);
    const auto batch = gather_batch(d, rows);

    int bad = 0, probes = 0;
    double worst = 0;
    for (int draw = 0; draw < 5; ++draw) {
      auto w = init_params(spec, 900 + draw);
      for (auto& t : w.tensors)
        for (auto& v : t.values) v = static_cast<float>(uniform(rng, -0.8, 0.8));
      const auto lg = loss_and_grad(w, batch, spec);
      const auto ref = oracle::mean_loss(oracle::as_double(w), spec, batch.features, batch.labels);
      bad += std::fabs(lg.loss - ref.loss) > 1e-12 * std::max(1.0, ref.loss);
      for (int p = 0; p < 20; ++p, ++probes) {
        const auto t = uniform_index(rng, w.tensors.size());
        const auto i = uniform_index(rng, w.tensors[t].values.size());
        const double fd = oracle::finite_difference(w, spec, batch.features, batch.labels, t, i);
        const double an = lg.grad.tensors[t].values[i];
        const double denom = std::max({std::fabs(an), std::fabs(fd), 1e-300});
        worst = std::max(worst, std::fabs(an - fd) / denom);
        bad += !oracle::close_rel(an, fd, 1e-4);
      }
    }
    o.require(bad == 0, fmt("%s: %d of %d probes failed", to_string(arch).c_str(), bad, probes));
    o.note(fmt("%s %d probes (max rel %.1e)", to_string(arch).c_str(), probes, worst));
  }
  return o;
}

// ---------------------------------------------------------------- 4

// Shannon rate from the channel constants, written out from scratch.
double hand_rate(double d, double p_dbm) {
  const double B = 20e6;
  const double p = std::pow(10.0, p_dbm / 10.0) / 1000.0;
  const double n0 = std::pow(10.0, -114.0 / 10.0) / 1000.0 / 1e6;  // W per Hz
  return B * std::log2(1.0 + p * std::pow(d, -3.76) / (n0 * B));
}

bool six_digits(double a, double b) { return std::fabs(a - b) <= 5e-6 * std::fabs(b); }

Outcome latency_stats() {
  Outcome o;
  DeviceProfile p;
  p.a_k = 2e-3;
  p.phi_k = 5.0;
  const WorkloadSpec w{6, 10};
  const double shift = p.a_k * 60, mean_want = shift + 60.0 / p.phi_k;
  Rng rng(8);
  double sum = 0;
  int below = 0;
  for (int i = 0; i < 100000; ++i) {
    const double l = sample_compute_latency(p, w, rng);
    below += l < shift;
    sum += l;
  }
  const double mean = sum / 100000;
  o.require(std::fabs(mean - mean_want) <= 0.01 * mean_want, fmt("compute mean %.5g vs %.5g", mean, mean_want));
  o.require(below == 0, fmt("%d samples below the shift", below));

  ChannelConfig ch;
  const double down = transmission_rate(600, Direction::kDown, ch), up = transmission_rate(600, Direction::kUp, ch);
  o.require(six_digits(down, hand_rate(600, 20)) && six_digits(down, 110465310.95),
            fmt("downlink %.10g", down));
  o.require(six_digits(up, hand_rate(600, 10)) && six_digits(up, 49183674.351), fmt("uplink %.10g", up));

  ch.radius_m = 1000;
  const auto dist = place_devices(100000, ch, 21);
  const double dmean = std::accumulate(dist.begin(), dist.end(), 0.0) / dist.size();
  o.require(std::fabs(dmean - 2000.0 / 3) <= 0.01 * 2000.0 / 3, fmt("placement mean %.2f", dmean));
  o.note(fmt("compute mean %.5f (want %.5f), rates %.6g / %.6g bps, placement mean %.1f m", mean, mean_want,
             down, up, dmean));
  return o;
}

// ---------------------------------------------------------------- 5

ExperimentConfig small_config(std::int64_t N) {
  ExperimentConfig c;
  c.protocol.kind = ProtocolKind::kTea;
  c.N = N;
  c.C = 0.25;
  c.gamma = 0.25;
  c.E = 1;
  c.B = 10;
  c.eta = 0.3;
  c.T = 20;
  c.dataset.blobs.num_classes = 4;
  c.dataset.blobs.samples_per_class = 70;
  c.dataset.blobs.input_dim = 8;
  c.dataset.blobs.seed = 3;
  c.partition.kind = PartitionKind::kIid;
  c.seed = 5;
  return c;
}

Outcome reductions() {
  Outcome o;
  {  // (a)
    auto c = small_config(1);
    c.protocol.kind = ProtocolKind::kTeasq;
    c.compression.mode = CompressionMode::kStatic;
    c.compression.static_params = {100, 32};
    c.C = c.gamma = c.alpha = 1;
    c.T = 10;
    const auto env = SimEnvironment::build(c);
    std::vector<ParamVector> globals;
    SimHooks hooks;
    hooks.on_global = [&](std::int64_t, const ParamVector& w) { globals.push_back(w); };
    simulate(c, env, resolve_schedule(c, env), hooks);
    ParamVector w = init_params(env.spec, derive_seed(c.seed, {0x1A17}));
    DataView view{&env.train, env.partition.assignments[0]};
    const LocalTrainOptions opts{static_cast<int>(c.E), static_cast<std::size_t>(c.B), c.eta, c.mu};
    bool same = globals.size() == 11 && globals[0] == w;
    for (int i = 0; same && i < 10; ++i) {
      w = local_train(w, w, view, opts, env.spec, task_seed(c.seed, 0, i));
      same = globals[i + 1] == w;
    }
    o.require(same, "(a) single lossless device differs from sequential prox-SGD");
  }
  {  // (b)
    Rng rng(55);
    int bad = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t dim = 1 + uniform_index(rng, 10);
      const std::int64_t K = 1 + static_cast<std::int64_t>(uniform_index(rng, 5));
      ServerConfig cfg;
      cfg.num_devices = 10 * K;
      cfg.fraction = 0.1;
      cfg.cache_fraction = 0.1;
      cfg.alpha = 1.0;
      ServerState s(single(random_vec(rng, dim, -9, 9)), layout_of(single(std::vector<float>(dim))), cfg);
      std::vector<double> num(dim, 0.0);
      double den = 0;
      std::optional<AggregationResult> res;
      for (std::int64_t k = 0; k < K; ++k) s.try_admit();
      for (std::int64_t k = 0; k < K; ++k) {
        auto w = random_vec(rng, dim, -2, 2);
        const auto n = static_cast<std::int64_t>(1 + uniform_index(rng, 300));
        for (std::size_t i = 0; i < dim; ++i) num[i] += static_cast<double>(n) * w[i];
        den += static_cast<double>(n);
        res = s.receive_model({k, single(std::move(w)), 0, n});
      }
      bad += !res.has_value();
      for (std::size_t i = 0; i < dim; ++i)
        bad += s.global_weights().tensors[0].values[i] != static_cast<float>(num[i] / den);
    }
    o.require(bad == 0, fmt("(b) %d coordinates differ from the weighted mean", bad));
  }
  {  // (c)
    auto c = small_config(20);
    c.protocol.kind = ProtocolKind::kFedAsync;
    c.protocol.max_staleness = 4;
    c.T = 4000;
    c.compute.phi_min = 0.5;
    c.compute.phi_max = 50;
    const auto env = SimEnvironment::build(c);
    const auto res = simulate(c, env, {});
    std::int64_t worst = 0;
    for (auto s : res.staleness) worst = std::max(worst, s);
    o.require(res.events >= 10000, fmt("(c) only %lld events", static_cast<long long>(res.events)));
    o.require(worst <= 4, fmt("(c) staleness %lld > 4", static_cast<long long>(worst)));
    o.note(fmt("(a) 10 rounds exact; (b) 200 caches exact; (c) %lld events, max staleness %lld",
               static_cast<long long>(res.events), static_cast<long long>(worst)));
  }
  return o;
}

// ---------------------------------------------------------------- 6, 7

std::vector<MetricsRecord> aggregation_records(const SimResult& r) {
  std::vector<MetricsRecord> out;
  for (const auto& m : r.records)
    if (!m.checkpoint) out.push_back(m);
  return out;
}

double time_to(const std::vector<MetricsRecord>& recs, double target) {
  for (const auto& r : recs)
    if (r.accuracy >= target) return r.sim_time_s;
  return INFINITY;
}

double accuracy_at(const std::vector<MetricsRecord>& recs, double t) {
  double acc = 0;
  for (const auto& r : recs)
    if (r.sim_time_s <= t) acc = r.accuracy;
  return acc;
}

std::vector<MetricsRecord> desk_run(std::uint64_t seed, const std::string& protocol,
                                    std::vector<std::pair<std::string, std::string>> extra = {}) {
  std::vector<std::pair<std::string, std::string>> ov{{"protocol", protocol}, {"seed", std::to_string(seed)}};
  if (protocol == "fedavg") ov.emplace_back("compression", "none");
  ov.insert(ov.end(), extra.begin(), extra.end());
  return aggregation_records(execute(load_run_input(g_configs / "desk_trend.json", ov)).result);
}

Outcome trends() {
  Outcome o;
  int a_ok = 0, b_ok = 0, c_ok = 0, d_ok = 0;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto fedavg = desk_run(seed, "fedavg");
    const auto tea = desk_run(seed, "tea");
    const auto teasq = desk_run(seed, "teasq");
    const auto stat = desk_run(seed, "teastatic");

    double fa_best = 0;
    for (const auto& r : fedavg) fa_best = std::max(fa_best, r.accuracy);
    const double target_a = 0.9 * fa_best;
    const double ta = time_to(tea, target_a), fa = time_to(fedavg, target_a);
    const bool a = ta <= 0.6 * fa;

    const double budget = std::min(tea.back().sim_time_s, fedavg.back().sim_time_s);
    const double acc_tea = accuracy_at(tea, budget), acc_fa = accuracy_at(fedavg, budget);
    const bool b = acc_tea >= acc_fa;

    const double target_c = 0.9 * tea.back().accuracy;
    const double tq = time_to(teasq, target_c), tt = time_to(tea, target_c);
    const bool c = tq < tt;

    const std::size_t R = std::min({tea.size(), teasq.size(), stat.size()}) - 1;
    const double up_tea = static_cast<double>(tea[R].cumulative_up_bits);
    const double rq = teasq[R].cumulative_up_bits / up_tea, rs = stat[R].cumulative_up_bits / up_tea;
    const bool d = rq <= 0.6 && rs <= 0.6;

    a_ok += a;
    b_ok += b;
    c_ok += c;
    d_ok += d;
    per_seed += fmt(" seed%llu[a %.2f%s b %.3f/%.3f%s c %.2f%s d %.2f,%.2f%s]", static_cast<unsigned long long>(seed),
                    ta / fa, a ? "" : "!", acc_tea, acc_fa, b ? "" : "!", tq / tt, c ? "" : "!", rq, rs,
                    d ? "" : "!");
  }
  o.require(a_ok >= 2, fmt("(a) %d/3 seeds", a_ok));
  o.require(b_ok >= 2, fmt("(b) %d/3 seeds", b_ok));
  o.require(c_ok >= 2, fmt("(c) %d/3 seeds", c_ok));
  o.require(d_ok == 3, fmt("(d) %d/3 seeds", d_ok));
  o.note(fmt("a %d/3, b %d/3, c %d/3, d %d/3;", a_ok, b_ok, c_ok, d_ok) + per_seed);
  return o;
}

Outcome alpha_robustness() {
  Outcome o;
  for (std::uint64_t seed : {1, 2, 3}) {
    double lo = 1, hi = 0;
    std::string accs;
    for (const char* alpha : {"0.4", "0.6", "0.9"}) {
      const double acc = desk_run(seed, "tea", {{"alpha", alpha}}).back().accuracy;
      lo = std::min(lo, acc);
      hi = std::max(hi, acc);
      accs += fmt(" %.3f", acc);
    }
    o.require(hi - lo <= 0.05, fmt("seed %llu spread %.1f pp", static_cast<unsigned long long>(seed), 100 * (hi - lo)));
    o.note(fmt("seed %llu finals%s spread %.1f pp", static_cast<unsigned long long>(seed), accs.c_str(),
               100 * (hi - lo)));
  }
  return o;
}

// ---------------------------------------------------------------- 8

Outcome determinism() {
  Outcome o;
  int checked = 0;
  for (const char* protocol : {"tea", "teasq", "teastatic", "fedavg", "fedasync"}) {
    std::vector<std::pair<std::string, std::string>> ov{{"protocol", protocol}, {"seed", "11"}, {"T", "20"}};
    if (std::string(protocol) == "teasq" || std::string(protocol) == "teastatic") {
      ov.emplace_back("compression", "auto-tune");
      ov.emplace_back("compression.probe_rounds", "20");
      ov.emplace_back("compression.step_size", "5");
    }
    std::string first;
    for (int rep = 0; rep < 2; ++rep) {
      const auto dir = g_scratch / "determinism" / (std::string(protocol) + std::to_string(rep));
      run_to_directory(load_run_input(g_configs / "quick.json", ov), dir);
      const auto text = read_text(dir / "metrics.csv") + read_text(dir / "run.json");
      if (rep == 0) first = text;
      else o.require(text == first, std::string(protocol) + " outputs differ between repeats");
    }
    ++checked;
  }
  o.note(fmt("%d protocols, metrics.csv and run.json byte-identical across repeats", checked));
  return o;
}

// ---------------------------------------------------------------- 9

Outcome tuner() {
  Outcome o;
  CompressionSets sets;
  sets.set_s = {10, 25, 50, 100};
  sets.set_q = {4, 8, 16, 32};
  sets.theta = 0.02;
  int cases = 0;
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    BlobsSpec bs;
    bs.num_classes = 6;
    bs.samples_per_class = 150;
    bs.input_dim = 64;
    bs.active_dims = 16;
    bs.spread = 2.0;
    bs.seed = seed;
    const auto data = make_blobs(bs);
    ModelSpec spec;
    spec.input_dim = 64;
    spec.num_classes = 6;
    std::vector<std::uint32_t> rows(data.train.size());
    std::iota(rows.begin(), rows.end(), 0u);
    const auto w0 = init_params(spec, seed);
    const auto w = local_train(w0, w0, DataView{&data.train, rows}, {4, 20, 0.5, 0.0}, spec, seed);
    const std::uint64_t cseed = 1000 + seed;
    const auto r = search_params(w, data.test, spec, sets, cseed);

    // Exhaustive scan with the same probe.
    const auto layout = layout_of(spec);
    const double base = evaluate(w, data.test, spec);
    std::vector<std::vector<bool>> feas(4, std::vector<bool>(4));
    std::vector<std::vector<std::int64_t>> bits(4, std::vector<std::int64_t>(4));
    for (std::size_t s = 0; s < 4; ++s)
      for (std::size_t q = 0; q < 4; ++q) {
        const CompressionParams p{sets.set_s[s], sets.set_q[q]};
        const auto u = compress(w, p, cseed);
        feas[s][q] = evaluate(decompress(u, layout), data.test, spec) >= base - sets.theta;
        bits[s][q] = u.bit_size;
      }
    const std::size_t fs_ = sets.index_of_s(r.found.p_s), fq = sets.index_of_q(r.found.p_q);
    for (const auto& e : r.evaluated)
      o.require(e.feasible == feas[sets.index_of_s(e.params.p_s)][sets.index_of_q(e.params.p_q)],
                fmt("seed %llu: search and scan disagree on a point", static_cast<unsigned long long>(seed)));
    if (!r.fell_back_to_lossless)
      o.require(oracle::within_envelope(feas, bits, fs_, fq),
                fmt("seed %llu: found (%g,%d) outside the envelope", static_cast<unsigned long long>(seed),
                    r.found.p_s, r.found.p_q));
    else
      o.require(!feas[3][3], "fell back although the least-compressed corner is feasible");
    o.note(fmt("seed %llu found (%g,%d) in %zu probes", static_cast<unsigned long long>(seed), r.found.p_s,
               r.found.p_q, r.evaluated.size()));
    ++cases;
  }

  // Replay: a tuned schedule fed back as a file gives the same run.
  std::vector<std::pair<std::string, std::string>> ov{{"protocol", "teasq"},      {"compression", "auto-tune"},
                                                      {"compression.probe_rounds", "20"},
                                                      {"compression.step_size", "5"}, {"T", "20"}};
  const auto input = load_run_input(g_configs / "quick.json", ov);
  tune_to_directory(input.config, g_scratch / "tune1");
  tune_to_directory(input.config, g_scratch / "tune2");
  o.require(read_text(g_scratch / "tune1" / "schedule.json") == read_text(g_scratch / "tune2" / "schedule.json"),
            "tuning twice gave different schedules");
  const auto tuned = execute(input);
  auto replay = input;
  replay.config.compression.mode = CompressionMode::kScheduleFile;
  replay.config.compression.schedule_file = (g_scratch / "tune1" / "schedule.json").string();
  const auto replayed = execute(replay);
  o.require(replayed.schedule.per_round == tuned.schedule.per_round, "replayed schedule differs");
  o.require(replayed.result.records == tuned.result.records, "replayed run differs");
  o.note("schedule replay identical");
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;  // 0 = no runtime limit
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"teasq acceptance suite"};
  std::string configs = TEASQ_SOURCE_DIR "/configs";
  std::vector<int> only;
  app.add_option("--configs", configs, "directory holding desk_trend.json and quick.json");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);
  g_configs = configs;
  g_scratch = fs::temp_directory_path() / ("teasq_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(g_scratch);

  const std::vector<Criterion> all{
      {1, "aggregation oracle", 1.0, aggregation_rules},
      {2, "codec", 30.0, codec},
      {3, "gradient checks", 60.0, gradients},
      {4, "latency statistics", 0, latency_stats},
      {5, "protocol reductions", 0, reductions},
      {6, "desk-scale trends", 900.0, trends},
      {7, "alpha robustness", 0, alpha_robustness},
      {8, "determinism", 0, determinism},
      {9, "tuner", 0, tuner},
  };

  int failures = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0) o.require(secs < c.limit_s, fmt("runtime %.1f s over the %.0f s limit", secs, c.limit_s));
    std::printf("%s %d %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  fs::remove_all(g_scratch);
  return failures == 0 ? 0 : 1;
}
