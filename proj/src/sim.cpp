#include "teasq/sim.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <queue>

#include "teasq/aggregation.hpp"
#include "teasq/errors.hpp"

namespace teasq {

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kDeviceRequest: return "device_request";
    case EventKind::kDownloadDone: return "download_done";
    case EventKind::kComputeDone: return "compute_done";
    case EventKind::kUploadDone: return "upload_done";
    case EventKind::kRetryPoll: return "retry_poll";
    case EventKind::kEvalCheckpoint: return "eval_checkpoint";
  }
  return "unknown";
}

std::uint64_t task_seed(std::uint64_t run_seed, std::int64_t device, std::int64_t task) {
  return derive_seed(run_seed, {0x7A5C, static_cast<std::uint64_t>(device),
                                static_cast<std::uint64_t>(task)});
}

WorkloadSpec SimEnvironment::workload_of(std::int64_t device, const ExperimentConfig& cfg) const {
  return WorkloadSpec::from_training(cfg.E, devices.at(device).n_k, cfg.B);
}

SimEnvironment SimEnvironment::build(const ExperimentConfig& cfg) {
  cfg.validate();
  SimEnvironment env;
  if (cfg.dataset.kind == "blobs") {
    auto tt = make_blobs(cfg.dataset.blobs);
    env.train = std::move(tt.train);
    env.test = std::move(tt.test);
  } else {
    auto fm = load_fashion_mnist(cfg.dataset.dir.empty() ? default_data_dir()
                                                         : std::filesystem::path(cfg.dataset.dir));
    env.train = std::move(fm.train);
    env.test = std::move(fm.test);
  }
  env.spec = cfg.model;
  env.spec.input_dim = env.train.input_dim;
  env.spec.num_classes = env.train.num_classes;
  env.spec.validate();

  const auto n = static_cast<std::size_t>(cfg.N);
  const std::uint64_t part_seed = derive_seed(cfg.seed, {0x9A27});
  if (cfg.partition.kind == PartitionKind::kIid)
    env.partition = partition_iid(env.train.size(), n, part_seed);
  else
    env.partition =
        partition_noniid_shards(env.train, n, cfg.partition.classes_per_device, part_seed);

  const auto distances = place_devices(cfg.N, cfg.channel, derive_seed(cfg.seed, {0xD157}));
  Rng rng(derive_seed(cfg.seed, {0xC0C0}));
  env.devices.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    auto& d = env.devices[k];
    d.id = static_cast<std::int64_t>(k);
    d.distance_m = distances[k];
    d.a_k = uniform(rng, cfg.compute.a_min, cfg.compute.a_max);
    d.phi_k = uniform(rng, cfg.compute.phi_min, cfg.compute.phi_max);
    d.n_k = static_cast<std::int64_t>(env.partition.assignments[k].size());
    if (d.n_k < 1) throw EmptyDataset("device " + std::to_string(k) + " received no samples");
    d.r_down_bps = transmission_rate(d.distance_m, Direction::kDown, cfg.channel);
    d.r_up_bps = transmission_rate(d.distance_m, Direction::kUp, cfg.channel);
  }
  return env;
}

namespace {

CompressionSchedule constant_schedule(const CompressionParams& p, std::int64_t T) {
  CompressionSchedule s;
  s.per_round.assign(static_cast<std::size_t>(T), p);
  return s;
}

// Model as it arrives at the receiver plus the size of what was sent.
struct Transfer {
  ParamVector received;
  std::optional<CompressedUpdate> payload;
  std::int64_t bits = 0;
};

std::optional<CompressionParams> params_for(const CompressionSchedule& s, std::int64_t round) {
  if (s.empty()) return std::nullopt;
  auto p = s.at(round);
  if (p.lossless()) return std::nullopt;
  return p;
}

Transfer transmit(const ParamVector& w, const ParamLayout& layout,
                  const std::optional<CompressionParams>& p, std::uint64_t seed,
                  bool decode_now) {
  Transfer t;
  if (!p) {
    t.received = w;
    t.bits = w.dense_bits();
    return t;
  }
  auto u = compress(w, *p, seed);
  t.bits = u.bit_size;
  if (decode_now) t.received = decompress(u, layout);
  t.payload = std::move(u);
  return t;
}

struct Event {
  double time;
  std::int64_t seq;
  EventKind kind;
  std::int64_t device;
};

struct EventLater {
  bool operator()(const Event& a, const Event& b) const {
    if (a.time != b.time) return a.time > b.time;
    return a.seq > b.seq;
  }
};

struct Task {
  std::int64_t index = 0;
  std::int64_t grant_round = 0;
  ParamVector model;  // received global, later the trained local model
  std::int64_t down_bits = 0;
  Transfer upload;
};

MetricsRecord make_record(std::int64_t round, double time, double acc, std::int64_t down,
                          std::int64_t up, double staleness, const CompressionSchedule& s,
                          std::int64_t params_round) {
  MetricsRecord r;
  r.round = round;
  r.sim_time_s = time;
  r.accuracy = acc;
  r.cumulative_down_bits = down;
  r.cumulative_up_bits = up;
  r.cache_mean_staleness = staleness;
  if (!s.empty()) {
    auto p = s.at(params_round);
    r.p_s_used = p.p_s;
    r.p_q_used = p.p_q;
  }
  return r;
}

double default_retry_interval(const ExperimentConfig& cfg, const SimEnvironment& env) {
  if (cfg.retry_interval_s > 0.0) return cfg.retry_interval_s;
  double sum = 0.0;
  for (std::size_t k = 0; k < env.devices.size(); ++k)
    sum += mean_compute_latency(env.devices[k], env.workload_of(static_cast<std::int64_t>(k), cfg));
  return 0.2 * sum / static_cast<double>(env.devices.size());
}

double compute_time(const ExperimentConfig& cfg, const SimEnvironment& env, const SimHooks& hooks,
                    std::int64_t device, std::int64_t task) {
  if (hooks.compute_latency) return hooks.compute_latency(device, task);
  Rng rng(derive_seed(cfg.seed, {0x1A7E, static_cast<std::uint64_t>(device),
                                 static_cast<std::uint64_t>(task)}));
  return sample_compute_latency(env.devices[device], env.workload_of(device, cfg), rng);
}

double comm_time(const SimEnvironment& env, const SimHooks& hooks, std::int64_t device,
                 Direction dir, std::int64_t bits) {
  if (hooks.comm_latency) return hooks.comm_latency(device, dir, bits);
  const auto& d = env.devices[device];
  return comm_latency(bits, dir == Direction::kDown ? d.r_down_bps : d.r_up_bps);
}

ParamVector train_task(const ExperimentConfig& cfg, const SimEnvironment& env,
                       const ParamVector& start, std::int64_t device, std::int64_t task,
                       double mu) {
  LocalTrainOptions opts;
  opts.epochs = static_cast<int>(cfg.E);
  opts.batch_size = static_cast<std::size_t>(cfg.B);
  opts.eta = cfg.eta;
  opts.mu = mu;
  DataView view{&env.train, env.partition.assignments[device]};
  return local_train(start, start, view, opts, env.spec, task_seed(cfg.seed, device, task));
}

// Shared event loop of TEA/TEASQ/TEAStatic (cache of K) and FedAsync
// (cache of one plus a staleness guard on admission).
SimResult run_event_loop(const ExperimentConfig& cfg, const SimEnvironment& env,
                         const CompressionSchedule& schedule, const SimHooks& hooks,
                         bool fedasync) {
  const auto N = static_cast<std::int64_t>(env.devices.size());
  const auto layout = layout_of(env.spec);

  ServerConfig scfg;
  scfg.num_devices = N;
  scfg.alpha = cfg.alpha;
  scfg.a_staleness = cfg.a_staleness;
  if (fedasync) {
    scfg.fraction = static_cast<double>(std::min(cfg.protocol.max_staleness, N)) / N;
    scfg.cache_fraction = 1.0 / N;
  } else {
    scfg.fraction = cfg.C;
    scfg.cache_fraction = cfg.gamma;
  }
  ServerState server(init_params(env.spec, derive_seed(cfg.seed, {0x1A17})), layout, scfg);

  SimResult res;
  const double retry = default_retry_interval(cfg, env);
  const double budget = cfg.time_budget_s;

  std::priority_queue<Event, std::vector<Event>, EventLater> queue;
  std::int64_t seq = 0;
  auto push = [&](double t, EventKind k, std::int64_t d) { queue.push({t, seq++, k, d}); };

  std::vector<std::optional<Task>> tasks(N);
  std::vector<std::int64_t> task_count(N, 0);
  std::vector<bool> waiting_flag(N, false);
  std::deque<std::int64_t> waiting;

  // Compressed global model, built once per round.
  std::int64_t cached_round = -1;
  Transfer cached_download;
  auto download_for = [&](std::int64_t round) -> const Transfer& {
    if (cached_round != round) {
      cached_download = transmit(server.global_weights(), layout, params_for(schedule, round),
                                 derive_seed(cfg.seed, {0xD0D0, static_cast<std::uint64_t>(round)}),
                                 true);
      cached_round = round;
    }
    return cached_download;
  };

  auto admissible = [&]() {
    if (server.inflight() >= server.cap()) return false;
    if (!fedasync) return true;
    std::int64_t min_h = server.round();
    for (const auto& t : tasks)
      if (t) min_h = std::min(min_h, t->grant_round);
    return (server.round() - min_h) + server.inflight() <= cfg.protocol.max_staleness;
  };

  double last_delta = 0.0;
  double now = 0.0;
  res.records.push_back(make_record(0, 0.0, evaluate(server.global_weights(), env.test, env.spec),
                                    0, 0, 0.0, schedule, 0));
  if (hooks.on_global) hooks.on_global(0, server.global_weights());

  for (std::int64_t d = 0; d < N; ++d) push(0.0, EventKind::kDeviceRequest, d);
  if (cfg.eval_interval_s > 0.0) push(cfg.eval_interval_s, EventKind::kEvalCheckpoint, -1);

  while (!queue.empty() && server.round() < cfg.T) {
    const Event ev = queue.top();
    if (budget > 0.0 && ev.time > budget) break;
    queue.pop();
    now = ev.time;
    ++res.events;
    TraceEvent tr{ev.time, ev.seq, ev.kind, ev.device, 0, -1, false, false};
    const std::int64_t d = ev.device;

    switch (ev.kind) {
      case EventKind::kDeviceRequest:
      case EventKind::kRetryPoll: {
        const bool at_head = waiting.empty() || waiting.front() == d;
        if (at_head && admissible()) {
          if (!waiting.empty()) waiting.pop_front();
          waiting_flag[d] = false;
          const std::int64_t h = *server.try_admit();
          const Transfer& dl = download_for(h);
          Task t;
          t.index = task_count[d]++;
          t.grant_round = h;
          t.model = dl.received;
          t.down_bits = dl.bits;
          tasks[d] = std::move(t);
          push(now + comm_time(env, hooks, d, Direction::kDown, dl.bits),
               EventKind::kDownloadDone, d);
          tr.granted = true;
          tr.grant_round = h;
        } else {
          if (!waiting_flag[d]) {
            waiting.push_back(d);
            waiting_flag[d] = true;
          }
          push(now + retry, EventKind::kRetryPoll, d);
        }
        break;
      }
      case EventKind::kDownloadDone: {
        auto& t = *tasks[d];
        res.down_bits += t.down_bits;
        t.model = train_task(cfg, env, t.model, d, t.index, cfg.mu);
        push(now + compute_time(cfg, env, hooks, d, t.index), EventKind::kComputeDone, d);
        tr.grant_round = t.grant_round;
        break;
      }
      case EventKind::kComputeDone: {
        auto& t = *tasks[d];
        t.upload = transmit(t.model, layout, params_for(schedule, t.grant_round),
                            derive_seed(task_seed(cfg.seed, d, t.index), {0x0B}), false);
        push(now + comm_time(env, hooks, d, Direction::kUp, t.upload.bits),
             EventKind::kUploadDone, d);
        tr.grant_round = t.grant_round;
        break;
      }
      case EventKind::kUploadDone: {
        Task t = std::move(*tasks[d]);
        tasks[d].reset();
        res.up_bits += t.upload.bits;
        res.staleness.push_back(server.round() - t.grant_round);
        const std::int64_t n_k = env.devices[d].n_k;
        std::optional<AggregationResult> agg;
        if (t.upload.payload) {
          t.upload.payload->timestamp = t.grant_round;
          t.upload.payload->sender = d;
          agg = server.receive_update(*t.upload.payload, n_k);
        } else {
          agg = server.receive_model({d, std::move(t.model), t.grant_round, n_k});
        }
        tr.grant_round = t.grant_round;
        if (agg) {
          last_delta = agg->mean_staleness;
          tr.aggregated = true;
          res.records.push_back(make_record(
              agg->round, now, evaluate(server.global_weights(), env.test, env.spec),
              res.down_bits, res.up_bits, agg->mean_staleness, schedule, agg->round - 1));
          if (hooks.on_global) hooks.on_global(agg->round, server.global_weights());
        }
        push(now, EventKind::kDeviceRequest, d);
        break;
      }
      case EventKind::kEvalCheckpoint: {
        auto r = make_record(server.round(), now,
                             evaluate(server.global_weights(), env.test, env.spec),
                             res.down_bits, res.up_bits, last_delta, schedule, server.round());
        r.checkpoint = true;
        res.records.push_back(r);
        push(now + cfg.eval_interval_s, EventKind::kEvalCheckpoint, -1);
        break;
      }
    }
    tr.round = server.round();
    if (hooks.trace) hooks.trace(tr);
  }

  res.final_weights = server.global_weights();
  res.rounds = server.round();
  res.sim_time_s = now;
  return res;
}

}  // namespace

SimResult run_async(const ExperimentConfig& cfg, const SimEnvironment& env,
                    const CompressionSchedule& schedule, const SimHooks& hooks) {
  return run_event_loop(cfg, env, schedule, hooks, false);
}

SimResult run_fedasync(const ExperimentConfig& cfg, const SimEnvironment& env,
                       const CompressionSchedule& schedule, const SimHooks& hooks) {
  if (cfg.protocol.max_staleness < 1) throw ConfigError("max_staleness must be at least 1");
  return run_event_loop(cfg, env, schedule, hooks, true);
}

SimResult run_fedavg(const ExperimentConfig& cfg, const SimEnvironment& env,
                     const CompressionSchedule& schedule, const SimHooks& hooks) {
  const auto N = static_cast<std::int64_t>(env.devices.size());
  const std::int64_t m = cfg.protocol.fedavg_devices;
  if (m < 1 || m > N) throw ConfigError("fedavg_devices must lie in [1, N]");
  const auto layout = layout_of(env.spec);

  SimResult res;
  ParamVector global = init_params(env.spec, derive_seed(cfg.seed, {0x1A17}));
  Rng pick(derive_seed(cfg.seed, {0xFEDA}));
  std::vector<std::int64_t> ids(N);
  std::vector<std::int64_t> task_count(N, 0);
  double now = 0.0;
  std::int64_t seq = 0;

  res.records.push_back(
      make_record(0, 0.0, evaluate(global, env.test, env.spec), 0, 0, 0.0, schedule, 0));
  if (hooks.on_global) hooks.on_global(0, global);

  double next_eval = cfg.eval_interval_s;
  for (std::int64_t t = 0; t < cfg.T; ++t) {
    std::iota(ids.begin(), ids.end(), 0);
    for (std::int64_t i = 0; i < m; ++i) {
      const auto j = i + static_cast<std::int64_t>(uniform_index(pick, N - i));
      std::swap(ids[i], ids[j]);
    }
    std::vector<std::int64_t> chosen(ids.begin(), ids.begin() + m);
    std::sort(chosen.begin(), chosen.end());

    const auto p = params_for(schedule, t);
    const Transfer dl =
        transmit(global, layout, p, derive_seed(cfg.seed, {0xD0D0, static_cast<std::uint64_t>(t)}), true);
    double round_time = 0.0;
    std::int64_t up_bits = 0;
    std::vector<CacheEntry> entries;
    for (auto k : chosen) {
      const std::int64_t task = task_count[k]++;
      ParamVector local = train_task(cfg, env, dl.received, k, task, 0.0);
      Transfer ul = transmit(local, layout, p, derive_seed(task_seed(cfg.seed, k, task), {0x0B}), true);
      const double lat = round_latency(comm_time(env, hooks, k, Direction::kDown, dl.bits),
                                       compute_time(cfg, env, hooks, k, task),
                                       comm_time(env, hooks, k, Direction::kUp, ul.bits));
      round_time = std::max(round_time, lat);
      up_bits += ul.bits;
      entries.push_back({k, std::move(ul.received), t, env.devices[k].n_k});
      if (hooks.trace) {
        hooks.trace({now, seq++, EventKind::kDownloadDone, k, t, t, true, false});
      }
    }
    const double end = now + round_time;
    if (cfg.time_budget_s > 0.0 && end > cfg.time_budget_s) break;

    // Checkpoints falling inside the round see the model from before it.
    while (cfg.eval_interval_s > 0.0 && next_eval < end) {
      auto r = make_record(t, next_eval, evaluate(global, env.test, env.spec), res.down_bits,
                           res.up_bits, 0.0, schedule, t);
      r.checkpoint = true;
      res.records.push_back(r);
      next_eval += cfg.eval_interval_s;
    }

    global = weighted_average(entries, t, cfg.a_staleness).u;
    now = end;
    res.down_bits += m * dl.bits;
    res.up_bits += up_bits;
    res.events += 3 * m;
    for (std::int64_t i = 0; i < m; ++i) res.staleness.push_back(0);
    res.records.push_back(make_record(t + 1, now, evaluate(global, env.test, env.spec),
                                      res.down_bits, res.up_bits, 0.0, schedule, t));
    res.rounds = t + 1;
    if (hooks.on_global) hooks.on_global(t + 1, global);
    if (hooks.trace) hooks.trace({now, seq++, EventKind::kUploadDone, -1, t + 1, t, false, true});
  }
  res.final_weights = std::move(global);
  res.sim_time_s = now;
  return res;
}

SimResult simulate(const ExperimentConfig& cfg, const SimEnvironment& env,
                   const CompressionSchedule& schedule, const SimHooks& hooks) {
  cfg.validate();
  switch (cfg.protocol.kind) {
    case ProtocolKind::kFedAvg: return run_fedavg(cfg, env, schedule, hooks);
    case ProtocolKind::kFedAsync: return run_fedasync(cfg, env, schedule, hooks);
    default: return run_async(cfg, env, schedule, hooks);
  }
}

CompressionSchedule resolve_schedule(const ExperimentConfig& cfg, const SimEnvironment& env,
                                     SearchResult* search) {
  if (cfg.protocol.kind == ProtocolKind::kTea) return {};
  const bool constant = cfg.protocol.kind == ProtocolKind::kTeaStatic;
  switch (cfg.compression.mode) {
    case CompressionMode::kNone: return {};
    case CompressionMode::kStatic: return constant_schedule(cfg.compression.static_params, cfg.T);
    case CompressionMode::kScheduleFile: {
      std::ifstream in(cfg.compression.schedule_file);
      if (!in) throw ConfigError("cannot open schedule file '" + cfg.compression.schedule_file + "'");
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("schedule file is not valid JSON: " + std::string(e.what()));
      }
      return schedule_from_json(j);
    }
    case CompressionMode::kAutoTune: {
      ExperimentConfig probe = cfg;
      probe.protocol.kind = ProtocolKind::kTea;
      probe.T = cfg.compression.probe_rounds;
      probe.time_budget_s = 0.0;
      probe.eval_interval_s = 0.0;
      probe.compression.mode = CompressionMode::kNone;
      const auto warm = run_async(probe, env, {});
      auto sets = cfg.compression.sets;
      sets.T = cfg.T;
      auto found = search_params(warm.final_weights, env.test, env.spec, sets,
                                 derive_seed(cfg.seed, {0x7E57}));
      if (search) *search = found;
      return constant ? constant_schedule(found.found, cfg.T) : build_schedule(found.found, sets);
    }
  }
  return {};
}

}  // namespace teasq
